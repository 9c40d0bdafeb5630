"""Training loop (RMSprop without momentum) and finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..domain import Grid
from .net import NumericalBlowUp, SeismicNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    val_fraction: float = 0.2
    split: str = "random"  # or "blocks": hold out contiguous spatial patches
    n_blocks: int = 4
    stop_fraction: float = 0.0  # stop once train loss <= this fraction of the initial loss
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    net: SeismicNet
    history: list = field(default_factory=list)
    best_epoch: int = 0
    train_index: np.ndarray = None
    val_index: np.ndarray = None


def split_indices(positions, config: TrainConfig, rng):
    n = len(positions)
    n_val = int(round(config.val_fraction * n))
    if config.val_fraction > 0 and (n_val < 1 or n - n_val < 1):
        raise ValueError(f"cannot split {n} samples with val_fraction={config.val_fraction}")
    if n_val == 0:
        return np.arange(n), np.arange(0)
    if config.split == "random":
        perm = rng.permutation(n)
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])
    if config.split != "blocks":
        raise ValueError(f"unknown split mode {config.split!r}")
    # square patches on a coarse lattice, drawn until the validation quota is met
    pos = np.asarray(positions, dtype=float)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    cells = np.floor((pos - lo) / np.maximum(hi - lo, 1e-12) * config.n_blocks * 0.9999).astype(int)
    cell_id = cells[:, 0] * config.n_blocks + cells[:, 1]
    val = np.zeros(n, dtype=bool)
    for c in rng.permutation(np.unique(cell_id)):
        if val.sum() >= n_val:
            break
        val |= cell_id == c
    if val.all():
        raise ValueError("spatial block split left no training samples")
    return np.flatnonzero(~val), np.flatnonzero(val)


def train(net: SeismicNet, samples, config: TrainConfig = TrainConfig(),
          grid: Optional[Grid] = None) -> TrainResult:
    """Fit ``net`` to the samples by minimizing MSE on standardized targets.

    The recorded loss for each epoch is evaluated after the epoch in
    inference mode, with batch-norm population statistics recomputed over
    the training split; entry 0 is the untrained network. Training ends
    early when ``stop_fraction`` is set and the training loss falls to that
    fraction of its initial value. The returned
    network is the snapshot with the lowest validation loss (training loss
    when there is no validation split).
    """
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(config.seed)
    cubes = np.stack([s.cube.data for s in samples]).astype(np.float64)
    positions = np.array([s.position for s in samples], dtype=float)
    targets = np.array([s.target for s in samples], dtype=float)

    tr, va = split_indices(positions, config, rng)
    ext = grid.points if grid is not None else positions
    norm = net.norm
    norm.coord_lo = ext.min(axis=0).tolist()
    norm.coord_hi = ext.max(axis=0).tolist()
    norm.amp_mean = float(cubes[tr].mean())
    norm.amp_std = float(cubes[tr].std()) or 1.0
    norm.target_mean = float(targets[tr].mean())
    norm.target_std = float(targets[tr].std()) or 1.0

    x = net.normalize_cubes(cubes).astype(net.dtype)
    c = net.normalize_coords(positions).astype(net.dtype)
    t = ((targets - norm.target_mean) / norm.target_std).astype(net.dtype)

    def evaluate():
        p_tr = net.calibrate(x[tr], c[tr])
        tr_loss = float(np.mean((p_tr.astype(np.float64) - t[tr]) ** 2))
        va_loss = float("nan")
        if va.size:
            p_va = net.forward(x[va], c[va])
            va_loss = float(np.mean((p_va.astype(np.float64) - t[va]) ** 2))
        return tr_loss, va_loss

    params = net.parameters()
    cache = [np.zeros_like(layer.params[key]) for _, layer, key in params]
    tr_loss, va_loss = evaluate()
    history = [{"epoch": 0, "train_loss": tr_loss, "val_loss": va_loss}]
    score = va_loss if va.size else tr_loss
    best, best_state, best_epoch = score, net.state(), 0

    for epoch in range(1, config.epochs + 1):
        order = tr[rng.permutation(tr.size)]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for a in range(0, order.size, config.batch_size):
                    b = order[a:a + config.batch_size]
                    if b.size < 2 and order.size >= 2:
                        continue  # a single-sample batch gives degenerate batch statistics
                    net.loss_and_grads(x[b], c[b], t[b], train=True)
                    for (_, layer, key), sq in zip(params, cache):
                        g = layer.grads[key]
                        sq *= config.rho
                        sq += (1.0 - config.rho) * g * g
                        layer.params[key] -= (config.lr * g / (np.sqrt(sq) + config.eps)).astype(net.dtype)
                tr_loss, va_loss = evaluate()
        except NumericalBlowUp:
            tr_loss = va_loss = float("nan")
        if not np.isfinite(tr_loss) or (va.size and not np.isfinite(va_loss)):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": tr_loss, "val_loss": va_loss})
        score = va_loss if va.size else tr_loss
        if score < best:
            best, best_state, best_epoch = score, net.state(), epoch
        log.debug("epoch %d train %.4g val %.4g", epoch, tr_loss, va_loss)
        if config.stop_fraction > 0 and tr_loss <= config.stop_fraction * history[0]["train_loss"]:
            break

    net.load_state(best_state)
    return TrainResult(net, history, best_epoch, tr, va)


def grad_check(net: SeismicNet, cubes, coords, targets, step: float = 1e-5,
               max_per_tensor: int = 12, check_input: bool = True, atol: float = 1e-6,
               seed: int = 0) -> dict:
    """Compare back-propagated gradients with central finite differences.

    Runs in float64 on a copy of ``net`` in training mode (batch statistics).
    Up to ``max_per_tensor`` entries of every parameter tensor are probed;
    with ``check_input`` the gradient with respect to the input cube is
    probed as well, which exercises every pooling and activation on the
    path. The relative error of one entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, atol)``.

    Returns a dict with the overall ``max`` error and a per-layer breakdown.
    """
    net = net.astype(np.float64)
    cubes = np.asarray(cubes, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def loss():
        pred = net.forward(cubes, coords, train=True)
        return float(np.mean((pred - targets) ** 2))

    net.loss_and_grads(cubes, coords, targets, train=True)
    analytic = {name: layer.grads[key].copy() for name, layer, key in net.parameters()}
    pred = net.forward(cubes, coords, train=True)
    d_input = net.backward(2.0 * (pred - targets) / len(pred))

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), atol)

    errors = {}
    for name, layer, key in net.parameters():
        p = layer.params[key]
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_per_tensor, flat.size), replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            worst = max(worst, rel(analytic[name].reshape(-1)[i], (up - down) / (2 * step)))
        errors[name] = worst
    if check_input:
        flat = cubes.reshape(-1)
        picks = rng.choice(flat.size, size=min(4 * max_per_tensor, flat.size), replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            worst = max(worst, rel(d_input.reshape(-1)[i], (up - down) / (2 * step)))
        errors["input"] = worst
    return {"max": max(errors.values()), "per_tensor": errors}

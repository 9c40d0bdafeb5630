"""The seismic permeability network and its checkpoint format."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layers import BatchNorm3D, Conv3D, Dense, MaxPool3D, ReLU

CUBE_SHAPE = (9, 9, 46)


class NumericalBlowUp(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    conv_channels: tuple = (8, 16, 32)
    kernel: int = 3
    pool: int = 2
    dense: tuple = (64, 32)
    cube_shape: tuple = CUBE_SHAPE
    n_coords: int = 2

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Normalization:
    """Input and target scaling learned from the training set."""

    amp_mean: float = 0.0
    amp_std: float = 1.0
    target_mean: float = 0.0
    target_std: float = 1.0
    coord_lo: list = field(default_factory=lambda: [0.0, 0.0])
    coord_hi: list = field(default_factory=lambda: [1.0, 1.0])


class SeismicNet:
    """3D convolutional blocks, flatten, coordinate concatenation, dense head.

    Each block is conv3d -> max pool -> batch norm -> ReLU. After
    flattening, the normalized (x, y) coordinates are appended and the
    vector passes through kernel-1 1D convolutions (dense layers with ReLU)
    to a scalar output in standardized target units.
    """

    def __init__(self, arch: Architecture = Architecture(), seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.norm = Normalization()
        rng = np.random.default_rng(seed)
        shape = (1,) + tuple(arch.cube_shape)
        self.blocks = []
        c_in = 1
        for c_out in arch.conv_channels:
            # no conv bias: the batch norm that follows removes any per-channel offset
            block = [Conv3D(c_in, c_out, arch.kernel, rng, self.dtype, bias=False), MaxPool3D(arch.pool),
                     BatchNorm3D(c_out, dtype=self.dtype), ReLU()]
            for layer in block:
                shape = layer.out_shape(shape)
            if min(shape[1:]) < 1:
                raise ValueError(f"architecture does not compose: feature shape {shape}")
            self.blocks.append(block)
            c_in = c_out
        self.n_features = int(np.prod(shape))
        self.head = []
        n_in = self.n_features + arch.n_coords
        for width in arch.dense:
            self.head += [Dense(n_in, width, rng, self.dtype), ReLU()]
            n_in = width
        self.head.append(Dense(n_in, 1, rng, self.dtype, gain=1.0))

    # ---- parameters -------------------------------------------------------

    def layers(self):
        for block in self.blocks:
            yield from block
        yield from self.head

    def named_layers(self):
        for bi, block in enumerate(self.blocks):
            for layer in block:
                yield f"block{bi}.{type(layer).__name__.lower()}", layer
        for hi, layer in enumerate(self.head):
            yield f"head{hi}.{type(layer).__name__.lower()}", layer

    def parameters(self):
        """(name, layer, key) triples in a fixed order."""
        return [(f"{name}.{key}", layer, key)
                for name, layer in self.named_layers() for key in layer.params]

    def batchnorms(self):
        return [block[2] for block in self.blocks]

    def n_params(self) -> int:
        return sum(layer.params[key].size for _, layer, key in self.parameters())

    def astype(self, dtype) -> "SeismicNet":
        net = copy.deepcopy(self)
        net.dtype = np.dtype(dtype)
        for layer in net.layers():
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(dtype)
            if isinstance(layer, BatchNorm3D):
                layer.pop_mean = layer.pop_mean.astype(dtype)
                layer.pop_var = layer.pop_var.astype(dtype)
        return net

    def state(self) -> list:
        out = [layer.params[key].copy() for _, layer, key in self.parameters()]
        for bn in self.batchnorms():
            out += [bn.pop_mean.copy(), bn.pop_var.copy()]
        return out

    def load_state(self, arrays) -> None:
        arrays = list(arrays)
        params = self.parameters()
        for (_, layer, key), a in zip(params, arrays):
            layer.params[key] = np.asarray(a, dtype=self.dtype).reshape(layer.params[key].shape)
        rest = arrays[len(params):]
        for i, bn in enumerate(self.batchnorms()):
            bn.pop_mean = np.asarray(rest[2 * i], dtype=self.dtype)
            bn.pop_var = np.asarray(rest[2 * i + 1], dtype=self.dtype)

    # ---- forward / backward ----------------------------------------------

    def _check(self, a):
        if not np.isfinite(a).all():
            raise NumericalBlowUp("numerical blow-up: non-finite activation")
        return a

    def features(self, cubes, train=False):
        x = self._check(np.asarray(cubes, dtype=self.dtype)[:, None])
        for conv, pool, bn, relu in self.blocks:
            # checked before ReLU, which would silently map NaN to 0
            x = self._check(pool.forward(conv.forward(x, train), train))
            x = relu.forward(bn.forward(x, train), train)
        return self._check(x.reshape(len(x), -1))

    def head_forward(self, feats, coords, train=False):
        h = np.concatenate([feats, np.asarray(coords, dtype=self.dtype)], axis=1)
        for layer in self.head:
            h = layer.forward(h, train)
        return self._check(h[:, 0])

    def forward(self, cubes, coords, train=False):
        """Standardized outputs for already-normalized cube and coordinate batches."""
        return self.head_forward(self.features(cubes, train), coords, train)

    def backward(self, dout):
        """Back-propagate d(loss)/d(output); returns d(loss)/d(cubes)."""
        g = np.asarray(dout, dtype=self.dtype)[:, None]
        for layer in reversed(self.head):
            g = layer.backward(g)
        g = g[:, : self.n_features]
        shape = self.blocks[-1][-1]._mask.shape if self.blocks else (len(g), 1) + tuple(self.arch.cube_shape)
        g = g.reshape(shape)
        for block in reversed(self.blocks):
            for layer in reversed(block):
                g = layer.backward(g)
        return g[:, 0]

    def loss_and_grads(self, cubes, coords, targets, train=True):
        """Mean squared error and its parameter gradients (standardized units)."""
        pred = self.forward(cubes, coords, train)
        resid = pred - np.asarray(targets, dtype=self.dtype)
        loss = float(np.mean(resid.astype(np.float64) ** 2))
        self.backward(2.0 * resid / len(resid))
        grads = {name: layer.grads[key] for name, layer, key in self.parameters()}
        return loss, grads

    def calibrate(self, cubes, coords, chunk: int = 256):
        """Recompute batch-norm population statistics over a whole data set.

        Runs block by block in chunks, caching pre-normalization activations,
        so the cost is one forward pass. Returns the inference-mode outputs.
        """
        x = np.asarray(cubes, dtype=self.dtype)[:, None]
        for conv, pool, bn, relu in self.blocks:
            pre = self._check(np.concatenate([pool.forward(conv.forward(x[i:i + chunk]))
                                              for i in range(0, len(x), chunk)]))
            bn.set_population(pre)
            x = relu.forward(bn.forward(pre, train=False))
        feats = self._check(x.reshape(len(x), -1))
        return self.head_forward(feats, coords)

    # ---- user-facing prediction -------------------------------------------

    def normalize_cubes(self, cubes):
        return (np.asarray(cubes, dtype=np.float64) - self.norm.amp_mean) / self.norm.amp_std

    def normalize_coords(self, xy):
        lo = np.asarray(self.norm.coord_lo)
        span = np.asarray(self.norm.coord_hi) - lo
        span = np.where(span > 0, span, 1.0)
        return 2.0 * (np.atleast_2d(np.asarray(xy, dtype=float)) - lo) / span - 1.0

    def predict(self, cubes, xy, chunk: int = 256) -> np.ndarray:
        """log10 mD predictions (inference mode) for raw cubes and map positions."""
        cubes = np.asarray(cubes)
        coords = self.normalize_coords(xy)
        out = np.concatenate([
            self.forward(self.normalize_cubes(cubes[i:i + chunk]), coords[i:i + chunk])
            for i in range(0, len(cubes), chunk)]) if len(cubes) else np.zeros(0)
        return out.astype(np.float64) * self.norm.target_std + self.norm.target_mean


def forward(net: SeismicNet, cube, coords) -> float:
    """Inference-mode permeability (log10 mD) for one raw cube at map position ``coords``."""
    data = cube.data if hasattr(cube, "data") else cube
    return float(net.predict(np.asarray(data)[None], [coords])[0])


def save_checkpoint(net: SeismicNet, directory) -> None:
    """Write ``manifest.json`` and ``params.bin`` (little-endian float32)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = net.state()
    manifest = {
        "architecture": net.arch.to_dict(),
        "normalization": asdict(net.norm),
        "seed": net.seed,
        "dtype": "<f4",
        "tensors": [list(a.shape) for a in arrays],
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    np.concatenate([a.ravel() for a in arrays]).astype("<f4").tofile(d / "params.bin")


def load_checkpoint(directory, dtype=np.float32) -> SeismicNet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    net = SeismicNet(Architecture.from_dict(manifest["architecture"]), manifest["seed"], dtype)
    net.norm = Normalization(**manifest["normalization"])
    flat = np.fromfile(d / "params.bin", dtype="<f4")
    sizes = [int(np.prod(s)) for s in manifest["tensors"]]
    if flat.size != sum(sizes):
        raise ValueError("checkpoint payload size does not match manifest")
    arrays, pos = [], 0
    for shape, n in zip(manifest["tensors"], sizes):
        arrays.append(flat[pos:pos + n].reshape(shape))
        pos += n
    net.load_state(arrays)
    return net

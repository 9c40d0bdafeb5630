"""Leave-one-out kernel training driven by differential evolution."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import PARAM_NAMES, Grid, GridMap, KernelParams
from .fusion import DRAINAGE_RADIUS, UNDERFLOW, WellArrays, swt_weights

DEFAULT_BOUNDS = {
    "alpha": (0.5, 2.0),
    "beta": (1.0, 2.0),
    "gamma": (0.01, 2.0),
    "delta": (0.05, 1.0),
    "r_d": (100.0, 300.0),
    "r_g": (5.0, 50.0),
    "w_s": (0.1, 0.5),
}

# Optimal constants reported for the field study (all wells).
PURE_FUSION_OPTIMUM = KernelParams(alpha=1.98, beta=1.00, gamma=0.12, delta=0.73,
                                   r_d=296.5, r_g=15.6, w_s=0.0)
COMPLETE_FUSION_OPTIMUM = KernelParams(alpha=1.99, beta=1.00, gamma=0.27, delta=0.99,
                                       r_d=299.0, r_g=28.8, w_s=0.42)


@dataclass(frozen=True)
class Bounds:
    limits: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))

    def __post_init__(self):
        for name, (lo, hi) in self.limits.items():
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            if not lo < hi:
                raise ValueError(f"bound for {name} needs min < max, got ({lo}, {hi})")
        missing = set(PARAM_NAMES) - set(self.limits)
        if missing:
            raise ValueError(f"missing bounds for {sorted(missing)}")

    def names(self, with_seismic: bool = True) -> tuple:
        return PARAM_NAMES if with_seismic else PARAM_NAMES[:-1]

    def arrays(self, names: Sequence[str]):
        lo = np.array([self.limits[n][0] for n in names], dtype=float)
        hi = np.array([self.limits[n][1] for n in names], dtype=float)
        return lo, hi

    def replace(self, **limits) -> "Bounds":
        d = dict(self.limits)
        d.update(limits)
        return Bounds(d)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.limits.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        limits = dict(DEFAULT_BOUNDS)
        limits.update({k: tuple(float(x) for x in v) for k, v in d.items()})
        return cls(limits)


@dataclass(frozen=True)
class DEConfig:
    popsize: int = 30
    mutation: float = 0.7
    crossover: float = 0.9
    n_iter: int = 100
    seed: int = 0
    c1: float = 0.1
    c2: float = 0.1
    bins: int = 20
    r_dr: float = DRAINAGE_RADIUS

    def __post_init__(self):
        if self.popsize < 4:
            raise ValueError("population must be >= 4")
        if not 0 < self.mutation <= 2:
            raise ValueError("mutation factor must lie in (0, 2]")
        if not 0 <= self.crossover <= 1:
            raise ValueError("crossover rate must lie in [0, 1]")
        if self.bins < 2:
            raise ValueError("need at least 2 histogram bins")
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")

    def replace(self, **kw) -> "DEConfig":
        d = asdict(self)
        d.update(kw)
        return DEConfig(**d)


def hist_distance_l1(k, k_hat, bins: int = 20) -> float:
    """Distance between the two value distributions, in [0, 1].

    Normalized histograms share equal-width bins over the combined range;
    returns ``sqrt(sum |p - p_hat|) / sqrt(2)``.
    """
    k = np.asarray(k, dtype=float)
    k_hat = np.asarray(k_hat, dtype=float)
    if k.size == 0 or k_hat.size == 0:
        raise ValueError("empty sample")
    both = np.concatenate([k, k_hat])
    rng = (both.min(), both.max())
    if rng[1] - rng[0] <= 1e-12 * max(1.0, abs(rng[1])):
        return 0.0  # all values coincide: identical single-bin histograms
    p, _ = np.histogram(k, bins=bins, range=rng)
    q, _ = np.histogram(k_hat, bins=bins, range=rng)
    diff = np.abs(p / k.size - q / k_hat.size).sum()
    return float(math.sqrt(diff) / math.sqrt(2.0))


def range_penalty_l2(k, k_hat) -> float:
    """Mismatch of value spreads (max - min), normalized by the largest value.

    The largest value is taken in absolute value so the penalty stays
    non-negative for log permeabilities below zero.
    """
    k = np.asarray(k, dtype=float)
    k_hat = np.asarray(k_hat, dtype=float)
    if k.size == 0 or k_hat.size == 0:
        raise ValueError("empty sample")
    scale = abs(max(k.max(), k_hat.max()))
    if scale == 0:
        raise ValueError("degenerate normalization: max(k, k_hat) == 0")
    return float(abs(np.ptp(k) - np.ptp(k_hat)) / scale)


def metrics(k, k_hat) -> dict:
    """MSE and coefficient of determination with ``k`` as the truth."""
    k = np.asarray(k, dtype=float)
    k_hat = np.asarray(k_hat, dtype=float)
    if k.shape != k_hat.shape or k.size == 0:
        raise ValueError("metrics need equal, non-zero lengths")
    resid = k - k_hat
    ss_tot = float(((k - k.mean()) ** 2).sum())
    if ss_tot == 0:
        raise ValueError("r2 undefined: zero variance in k")
    return {"mse": float((resid ** 2).mean()), "r2": 1.0 - float((resid ** 2).sum()) / ss_tot}


class LoocvProblem:
    """Precomputed geometry for repeated leave-one-out objective evaluations.

    Distances and synthetic-well-test weights depend only on the grid and
    the well positions, so they are built once and shared by every
    candidate parameter set.
    """

    def __init__(self, wells, grid: Grid, seismic_map: Optional[GridMap] = None,
                 config: DEConfig = DEConfig()):
        self.wells = WellArrays.from_wells(wells)
        n = len(self.wells)
        if n < 3:
            raise ValueError(f"constant synthetic tests: leave-one-out needs >= 3 wells, got {n}")
        self.grid = grid
        self.config = config
        self.seismic = None if seismic_map is None else np.asarray(seismic_map.values)
        self.dist = grid.distances_to(self.wells.positions)
        with np.errstate(divide="ignore"):
            self.log_dist = np.log(self.dist)
        self.swt = swt_weights(grid, self.wells.positions, config.r_dr)
        self.keep = 1.0 - np.eye(n)
        wa = self.wells
        self._wt_val = np.where(wa.wt_mask, wa.wt, 0.0)
        self._wl_val = np.where(wa.wl_mask, wa.wl, 0.0)

    def well_weights(self, params: KernelParams):
        """Per-well total kernel weight and weighted value, each (N_grid, N_wells).

        Same kernels as ``kernel_wt``/``kernel_wl``, evaluated through the
        cached log-distances: (d/r)**a == exp(a*log(d/r)).
        """
        wa = self.wells
        with np.errstate(under="ignore", over="ignore"):
            lu = self.log_dist - np.log(params.r_d)
            kwt = np.exp(params.alpha * lu - np.exp(params.beta * lu))
            lg = self.log_dist - np.log(params.r_g)
            kwl = params.gamma * np.exp(-np.exp(params.delta * lg))
        kwt[kwt < UNDERFLOW] = 0.0
        kwl[kwl < UNDERFLOW] = 0.0
        kwt *= wa.wt_mask
        kwl *= wa.wl_mask
        return kwt + kwl, kwt * self._wt_val + kwl * self._wl_val

    @property
    def with_seismic(self) -> bool:
        return self.seismic is not None

    def synthetic_tests(self, params: KernelParams):
        """(k, k_hat): synthetic tests from the full map and from each leave-one-out map."""
        w, v = self.well_weights(params)
        num_full, den_full = v.sum(axis=1), w.sum(axis=1)
        num_loo, den_loo = v @ self.keep, w @ self.keep
        if self.seismic is not None and params.w_s > 0:
            num_full = num_full + params.w_s * self.seismic
            den_full = den_full + params.w_s
            num_loo = num_loo + params.w_s * self.seismic[:, None]
            den_loo = den_loo + params.w_s
        if np.any(den_full == 0) or np.any(den_loo == 0):
            raise ValueError("uncovered grid point in leave-one-out fusion")
        full = num_full / den_full
        loo = num_loo / den_loo
        k = self.swt.T @ full
        k_hat = np.einsum("gi,gi->i", self.swt, loo)
        return k, k_hat

    def objective(self, params: KernelParams) -> float:
        k, k_hat = self.synthetic_tests(params)
        if np.ptp(k) <= 1e-12 * max(1.0, float(np.abs(k).max())):
            raise ValueError("constant synthetic tests")
        cfg = self.config
        r2 = metrics(k, k_hat)["r2"]
        return (1.0 - r2 + cfg.c1 * hist_distance_l1(k, k_hat, cfg.bins)
                + cfg.c2 * range_penalty_l2(k, k_hat))

    __call__ = objective


def loocv_objective(params: KernelParams, wells, grid: Grid, seismic_map: Optional[GridMap] = None,
                    config: DEConfig = DEConfig()) -> float:
    """Regularized leave-one-out objective ``1 - R2 + c1*l1 + c2*l2`` for one parameter set."""
    return LoocvProblem(wells, grid, seismic_map, config).objective(params)


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    history: list
    nfev: int
    population: np.ndarray
    fitness: np.ndarray


def reflect(x, lo, hi):
    """Fold out-of-range coordinates back into [lo, hi] by mirror reflection."""
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return lo + y


def _safe(objective):
    def f(x):
        try:
            v = float(objective(x))
        except (ValueError, ArithmeticError):
            return math.inf
        return v if math.isfinite(v) else math.inf
    return f


def differential_evolution(objective: Callable, lo, hi, config: DEConfig = DEConfig(),
                           init: Optional[np.ndarray] = None, map_fn=map) -> DEResult:
    """Minimize ``objective`` over the box [lo, hi] with DE/rand/1/bin.

    Generational scheme: every trial vector of a generation is built from
    the current population before any selection, so ``map_fn`` may evaluate
    a generation in parallel. Mutants leaving the box are reflected back.
    Candidates whose objective raises ``ValueError`` score ``inf``.
    ``init`` rows, when given, replace the first members of the random
    initial population.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ValueError("invalid bounds")
    rng = np.random.default_rng(config.seed)
    n, dim = config.popsize, lo.size
    pop = lo + rng.random((n, dim)) * (hi - lo)
    if init is not None:
        init = np.atleast_2d(np.clip(np.asarray(init, dtype=float), lo, hi))
        pop[: len(init)] = init[:n]
    f = _safe(objective)
    fit = np.fromiter(map_fn(f, list(pop)), dtype=float, count=n)
    nfev = n
    if not np.isfinite(fit).any():
        raise RuntimeError("objective failed on every initial candidate")
    history = [float(fit.min())]
    others = np.arange(n - 1)
    for _ in range(config.n_iter):
        picks = np.empty((n, 3), dtype=int)
        for i in range(n):
            r = rng.choice(others, size=3, replace=False)
            picks[i] = np.where(r >= i, r + 1, r)
        mutant = pop[picks[:, 0]] + config.mutation * (pop[picks[:, 1]] - pop[picks[:, 2]])
        mutant = reflect(mutant, lo, hi)
        cross = rng.random((n, dim)) < config.crossover
        cross[np.arange(n), rng.integers(dim, size=n)] = True
        trial = np.where(cross, mutant, pop)
        f_trial = np.fromiter(map_fn(f, list(trial)), dtype=float, count=n)
        nfev += n
        better = f_trial <= fit
        pop[better] = trial[better]
        fit[better] = f_trial[better]
        history.append(float(fit.min()))
    best = int(np.argmin(fit))
    return DEResult(pop[best].copy(), float(fit[best]), history, nfev, pop, fit)


@dataclass
class KernelFit:
    params: KernelParams
    objective: float
    history: list
    k: np.ndarray
    k_hat: np.ndarray
    metrics: dict


def fit_kernel(wells, grid: Grid, seismic_map: Optional[GridMap] = None, bounds: Bounds = Bounds(),
               config: DEConfig = DEConfig(), warm_start: Optional[KernelParams] = None) -> KernelFit:
    """Train kernel constants by minimizing the leave-one-out objective.

    Without a seismic map the seismic weight is not searched and stays 0.
    """
    problem = LoocvProblem(wells, grid, seismic_map, config)
    names = bounds.names(problem.with_seismic)
    fixed = {} if problem.with_seismic else {"w_s": 0.0}
    lo, hi = bounds.arrays(names)
    init = None
    if warm_start is not None:
        start = warm_start.to_dict()
        if problem.with_seismic and start["w_s"] == 0:
            start["w_s"] = 0.5 * (bounds.limits["w_s"][0] + bounds.limits["w_s"][1])
        init = np.array([start[n] for n in names])

    def objective(x):
        return problem.objective(KernelParams.from_array(x, names, **fixed))

    res = differential_evolution(objective, lo, hi, config, init=init)
    params = KernelParams.from_array(res.x, names, **fixed)
    k, k_hat = problem.synthetic_tests(params)
    return KernelFit(params, res.fun, res.history, k, k_hat, metrics(k, k_hat))

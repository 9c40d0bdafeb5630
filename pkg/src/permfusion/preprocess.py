"""Quantile-quantile transformation and log10 conversions for permeability."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import stats

MODES = ("match-welltest", "log-normalize")


def to_log10(values):
    v = np.asarray(values, dtype=float)
    if np.any(~(v > 0)):
        raise ValueError("log10 of non-positive permeability")
    return np.log10(v)


def from_log10(values):
    return np.power(10.0, np.asarray(values, dtype=float))


def _positions(n: int) -> np.ndarray:
    return (np.arange(1, n + 1) - 0.5) / n


def _plotting_cdf(sample: np.ndarray):
    """Knots (values, cumulative probabilities) of the empirical CDF.

    Uses plotting positions (i - 0.5)/n; tied values share the mean position
    of their run so the knots stay strictly increasing.
    """
    s = np.sort(sample)
    pos = _positions(len(s))
    vals, start, counts = np.unique(s, return_index=True, return_counts=True)
    probs = np.array([pos[a:a + c].mean() for a, c in zip(start, counts)])
    return vals, probs


def _check_sample(sample, name):
    """Sample as a flat array; it needs two distinct values on the log scale."""
    s = np.asarray(sample, dtype=float).ravel()
    if len(np.unique(to_log10(s))) < 2:
        raise ValueError(f"degenerate sample: {name} needs at least 2 distinct values")
    return s


def qq_transform(source_sample, target_sample, values):
    """Map ``values`` from the source distribution onto the target distribution.

    Works on log10 permeabilities: each value's empirical CDF position in
    ``source_sample`` is looked up in the target's empirical quantile
    function. Both use linear interpolation between order statistics and
    clamp beyond the sample extremes. All inputs and outputs are in mD.

    Examples
    --------
    >>> qq_transform([1, 2, 3, 4], [10, 20, 30, 40], [2.5])
    array([25.])
    """
    src = to_log10(_check_sample(source_sample, "source"))
    t_lin = np.sort(_check_sample(target_sample, "target"))
    tv = to_log10(t_lin)
    v = to_log10(values)
    sv, sp = _plotting_cdf(src)
    p = np.interp(v, sv, sp)
    # every order statistic keeps its own position, so ties in the target
    # become flat steps of the quantile function
    tp = _positions(len(tv))
    out = from_log10(np.interp(p, tp, tv))
    # results on a knot or a flat step are target values exactly, not a
    # log round trip of them
    j = np.clip(np.searchsorted(tp, p, side="right") - 1, 0, len(tp) - 2)
    w = (p - tp[j]) / (tp[j + 1] - tp[j])
    at_lo = (w <= 0) | (tv[j] == tv[j + 1])
    out = np.where(at_lo, t_lin[j], out)
    return np.where(~at_lo & (w >= 1), t_lin[j + 1], out)


def lognormalize_transform(source_sample, values):
    """Map values onto a log-normal law with the source's log10 mean and sd."""
    src = to_log10(_check_sample(source_sample, "source"))
    v = to_log10(values)
    sv, sp = _plotting_cdf(src)
    p = np.interp(v, sv, sp)
    mu, sd = src.mean(), src.std(ddof=1)
    return from_log10(mu + sd * stats.norm.ppf(p))


def transform_wells(wells, mode: str = "match-welltest") -> list:
    """Fill ``k_wl_qq`` on every well with a well-log value.

    ``match-welltest`` maps the well-log distribution onto the well-test
    distribution (absolute values when available). ``log-normalize`` maps
    it onto a log-normal law instead.
    """
    if mode not in MODES:
        raise ValueError(f"unknown Q-Q mode {mode!r}")
    has_wl = [w for w in wells if w.k_wl is not None]
    if not has_wl:
        return list(wells)
    src = np.array([w.k_wl for w in has_wl])
    if mode == "match-welltest":
        tgt = np.array([w.wt_value for w in wells if w.wt_value is not None])
        mapped = qq_transform(src, tgt, src)
    else:
        mapped = lognormalize_transform(src, src)
    lookup = {w.id: float(m) for w, m in zip(has_wl, mapped)}
    return [replace(w, k_wl_qq=lookup[w.id]) if w.id in lookup else w for w in wells]

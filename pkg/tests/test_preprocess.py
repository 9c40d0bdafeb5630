import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permfusion.domain import WellRecord
from permfusion.preprocess import from_log10, qq_transform, to_log10, transform_wells


def ks_distance(a, b):
    a, b = np.sort(a), np.sort(b)
    xs = np.concatenate([a, b])
    fa = np.searchsorted(a, xs, side="right") / len(a)
    fb = np.searchsorted(b, xs, side="right") / len(b)
    return np.abs(fa - fb).max()


def qq_oracle(src, tgt, v):
    """Brute-force empirical quantile mapping on log values (distinct samples)."""
    s = sorted(np.log10(src))
    t = sorted(np.log10(tgt))
    lv = np.log10(v)
    ps = [(i + 0.5) / len(s) for i in range(len(s))]
    pt = [(i + 0.5) / len(t) for i in range(len(t))]
    if lv <= s[0]:
        p = ps[0]
    elif lv >= s[-1]:
        p = ps[-1]
    else:
        for i in range(len(s) - 1):
            if s[i] <= lv <= s[i + 1]:
                p = ps[i] + (ps[i + 1] - ps[i]) * (lv - s[i]) / (s[i + 1] - s[i])
                break
    if p <= pt[0]:
        return 10 ** t[0]
    if p >= pt[-1]:
        return 10 ** t[-1]
    for i in range(len(t) - 1):
        if pt[i] <= p <= pt[i + 1]:
            return 10 ** (t[i] + (t[i + 1] - t[i]) * (p - pt[i]) / (pt[i + 1] - pt[i]))


positive_samples = st.lists(st.floats(0.01, 1e4), min_size=2, max_size=60, unique=True)
# distinct after log10 too; a tied source must map to a single value, so the
# KS bound only holds for distinct samples
distinct_samples = positive_samples.filter(lambda s: len(set(np.log10(s))) == len(s))
# targets may repeat values
tied_samples = st.lists(st.sampled_from([0.01, 0.1, 1.0, 10.0]) | st.floats(0.01, 1e4),
                        min_size=2, max_size=60).filter(lambda s: len(set(np.log10(s))) >= 2)


class TestQQ:
    def test_identity(self, rng):
        s = 10 ** rng.normal(1, 0.5, 50)
        np.testing.assert_allclose(qq_transform(s, s, s), s, rtol=1e-9)

    def test_worked_example(self):
        assert qq_transform([1, 2, 3, 4], [10, 20, 30, 40], [2.5])[0] == pytest.approx(25.0, rel=1e-12)
        assert qq_oracle([1, 2, 3, 4], [10, 20, 30, 40], 2.5) == pytest.approx(25.0, rel=1e-12)

    def test_clamps_below_and_above(self):
        out = qq_transform([1, 2, 3, 4], [10, 20, 30, 40], [0.5, 9.0])
        np.testing.assert_allclose(out, [10.0, 40.0])

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate sample"):
            qq_transform([5, 5, 5], [1, 2], [5])

    def test_degenerate_on_log_scale(self):
        # distinct floats that share a log10 value
        with pytest.raises(ValueError, match="degenerate sample"):
            qq_transform([0.010000000000000002, 0.01], [1, 2], [1])

    @settings(max_examples=100)
    @given(distinct_samples, distinct_samples, st.lists(st.floats(0.005, 2e4), min_size=1, max_size=10))
    def test_matches_oracle(self, src, tgt, vals):
        got = qq_transform(src, tgt, vals)
        want = [qq_oracle(src, tgt, v) for v in vals]
        np.testing.assert_allclose(got, want, rtol=1e-10)

    @settings(max_examples=200)
    @given(tied_samples, tied_samples, st.floats(0.005, 2e4), st.floats(0.005, 2e4))
    def test_monotone(self, src, tgt, a, b):
        lo, hi = sorted((a, b))
        ta, tb = qq_transform(src, tgt, [lo, hi])
        assert ta <= tb

    def test_tied_target_keeps_its_step(self):
        # the two small targets share a log10 value, so 2/3 of the mass sits at 0.01
        src, tgt = [1.0, 2.0, 3.0, 0.5], [1.0, 0.010000000000000002, 0.01]
        out = qq_transform(src, tgt, src)
        np.testing.assert_allclose(np.sort(out)[:2], [0.01, 0.01])
        assert ks_distance(out, tgt) <= 1.0 / 3 + 1e-12

    def test_flat_step_returns_exact_target(self):
        out = qq_transform([1.0, 2.0], [0.01, 180.0, 180.0], [1.0, 2.0, 5.0])
        assert out[1] == 180.0 and out[2] == 180.0
        assert ks_distance(out[:2], [0.01, 180.0, 180.0]) <= 0.5

    @settings(max_examples=200)
    @given(distinct_samples, tied_samples)
    def test_ks_bound(self, src, tgt):
        out = qq_transform(src, tgt, src)
        assert ks_distance(out, tgt) <= 1.0 / min(len(src), len(tgt)) + 1e-12


class TestLog:
    def test_values(self):
        np.testing.assert_allclose(to_log10([100.0, 1.0]), [2.0, 0.0])

    def test_non_positive(self):
        with pytest.raises(ValueError):
            to_log10([1.0, 0.0])

    def test_round_trip(self, rng):
        v = 10 ** rng.uniform(-3, 5, 1000)
        rel = np.abs(from_log10(to_log10(v)) - v) / v
        assert rel.max() < 1e-12


class TestTransformWells:
    def test_match_welltest_fills_qq(self):
        wells = [WellRecord(f"W{i}", i, 0, k_wl=float(10 + i), k_wt_effective=float(100 + 10 * i))
                 for i in range(5)]
        out = transform_wells(wells)
        np.testing.assert_allclose([w.k_wl_qq for w in out], [w.k_wt_effective for w in wells])

    def test_lognormalize_mode(self, rng):
        wells = [WellRecord(f"W{i}", i, 0, k_wl=float(v)) for i, v in enumerate(10 ** rng.normal(1, 0.3, 30))]
        out = transform_wells(wells, "log-normalize")
        vals = np.log10([w.k_wl_qq for w in out])
        assert np.all(np.diff(vals[np.argsort([w.k_wl for w in wells])]) >= 0)
        assert abs(vals.mean() - np.log10([w.k_wl for w in wells]).mean()) < 0.05

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            transform_wells([], "bogus")

"""Metric suite vs independent brute-force oracles and closed forms."""

import numpy as np
import pytest

from meshgaze.errors import AllFixated, LengthMismatch, TooShort, ZeroVariance
from meshgaze.maps import FixationSet, SaliencyMap, Scanpath
from meshgaze.metrics import auc_judd, cc, kl_div, mse, multimatch, nss


# --- independent oracles ----------------------------------------------------

def oracle_kl(y, p, eps=1e-8):
    y = np.asarray(y, float); y = y / y.sum()
    p = np.asarray(p, float); p = p / p.sum()
    total = 0.0
    for yi, pi in zip(y, p):
        if yi > 0:
            total += yi * np.log(yi / (pi + eps))
    return total


def oracle_nss_two_pass(pred, fix_idx):
    pred = np.asarray(pred, float)
    mean = sum(pred) / len(pred)
    var = sum((v - mean) ** 2 for v in pred) / len(pred)
    sd = np.sqrt(var)
    z = [(pred[i] - mean) / sd for i in fix_idx]
    return sum(z) / len(z)


def oracle_auc(pred, fix_idx):
    """O(F*N) threshold sweep with trapezoidal integration."""
    pred = np.asarray(pred, float)
    pos = np.zeros(len(pred), bool)
    pos[list(fix_idx)] = True
    n_pos, n_neg = pos.sum(), (~pos).sum()
    thresholds = sorted(set(pred[pos]), reverse=True)
    pts = [(0.0, 0.0)]
    for t in thresholds:
        tp = fp = 0
        for i in range(len(pred)):
            if pred[i] >= t:
                if pos[i]:
                    tp += 1
                else:
                    fp += 1
        pts.append((fp / n_neg, tp / n_pos))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


# --- KL ----------------------------------------------------------------------

class TestKL:
    def test_identity_zero(self, rng):
        # The epsilon in the denominator biases KL(p, p) to about -eps*N,
        # so the 1e-7 bound applies at small N; larger maps obey -ln(1+eps*N).
        p = rng.random(8)
        p /= p.sum()
        assert abs(kl_div(p, p)) < 1e-7
        big = rng.random(5000)
        big /= big.sum()
        assert abs(kl_div(big, big)) <= np.log1p(1e-8 * 5000) + 1e-12

    def test_two_point_examples(self):
        assert kl_div([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-6)
        want = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
        assert want == pytest.approx(0.510826, abs=1e-6)
        assert kl_div([0.5, 0.5], [0.9, 0.1]) == pytest.approx(want, abs=1e-6)

    def test_matches_oracle_random(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 100))
            y = rng.random(n) * (rng.random(n) < 0.8)  # some zeros
            if y.sum() == 0:
                y[0] = 1.0
            p = rng.random(n) + 1e-3
            assert kl_div(y, p) == pytest.approx(oracle_kl(y, p), abs=1e-12)

    def test_nonnegative_up_to_eps_bias(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 50))
            y = rng.random(n); y /= y.sum()
            p = rng.random(n); p /= p.sum()
            assert kl_div(y, p) >= -np.log1p(1e-8 * n) - 1e-12
            assert kl_div(y, p) >= -1e-7  # eps bias bound at this scale

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            kl_div([1.0], [0.5, 0.5])


class TestCC:
    def test_affine_invariance(self, rng):
        p = rng.random(64)
        assert cc(p, 3.5 * p + 0.2) == pytest.approx(1.0, abs=1e-9)
        assert cc(p, -p) == pytest.approx(-1.0, abs=1e-9)

    def test_small_example(self):
        got = cc([0, 1, 2, 3], [0, 1, 1, 2])
        assert got == pytest.approx(3.0 / np.sqrt(10.0), abs=1e-12)
        assert got == pytest.approx(np.corrcoef([0, 1, 2, 3], [0, 1, 1, 2])[0, 1],
                                    abs=1e-12)

    def test_zero_variance_modes(self):
        with pytest.warns(RuntimeWarning):
            assert cc([1, 1, 1], [0, 1, 2]) == 0.0
        with pytest.raises(ZeroVariance):
            cc([1, 1, 1], [0, 1, 2], on_zero_variance="raise")

    def test_argmax_affine_invariant(self, rng):
        v = rng.random(100)
        assert np.argmax(v) == np.argmax(2.0 * v + 0.1)


class TestNSS:
    def test_single_peak(self):
        got = nss([0, 0, 1, 0], FixationSet([2]))
        assert got == pytest.approx(np.sqrt(3), abs=1e-12)

    def test_one_hot_closed_form(self):
        for n in (5, 17, 100):
            pred = np.zeros(n)
            pred[3] = 1.0
            got = nss(pred, FixationSet([3, 3, 3]))
            assert got == pytest.approx(np.sqrt(n - 1), abs=1e-9)

    def test_uniform_raises(self):
        with pytest.raises(ZeroVariance):
            nss([0.25] * 4, FixationSet([1]))

    def test_matches_two_pass_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 150))
            pred = rng.random(n)
            f = rng.integers(0, n, size=int(rng.integers(1, 20)))
            assert nss(pred, FixationSet(f)) == pytest.approx(
                oracle_nss_two_pass(pred, f), abs=1e-10)


class TestAUC:
    def test_perfect_separation(self):
        pred = [0.9, 0.1, 0.8, 0.2]
        assert auc_judd(pred, FixationSet([0, 2])) == 1.0

    def test_constant_chance(self):
        assert auc_judd([0.3] * 10, FixationSet([1, 5])) == 0.5

    def test_all_fixated_raises(self):
        with pytest.raises(AllFixated):
            auc_judd([0.1, 0.2], FixationSet([0, 1]))

    def test_matches_bruteforce_random(self, rng):
        for _ in range(60):
            n = int(rng.integers(5, 200))
            pred = np.round(rng.random(n), 2)  # force ties
            f_count = int(rng.integers(1, min(20, n - 1) + 1))
            f = rng.choice(n, size=f_count, replace=False)
            got = auc_judd(pred, FixationSet(f))
            assert got == pytest.approx(oracle_auc(pred, f), abs=1e-12)


class TestMSE:
    def test_trivials(self):
        assert mse([1, 2], [1, 2]) == 0.0
        assert mse([0, 0], [1, 1]) == 1.0
        assert mse([0, 1], [0.5, 0.5]) == 0.25


# --- MultiMatch ---------------------------------------------------------------

def _path(points, durations, mesh_path="m.off"):
    points = np.asarray(points, float)
    return Scanpath(
        vertex_indices=np.arange(len(points)),
        positions=points,
        durations=durations,
        mesh_path=mesh_path,
    )


class TestMultiMatch:
    DIAG = np.sqrt(3.0)

    def test_identity(self, rng):
        pts = rng.random((8, 3))
        s = _path(pts, np.ones(8))
        score = multimatch(s, s, self.DIAG)
        for v in (score.shape, score.direction, score.length, score.position,
                  score.duration):
            assert v == 1.0
        assert score.mean == 1.0

    def test_duration_halving(self, rng):
        pts = rng.random((6, 3))
        a = _path(pts, np.ones(6))
        b = _path(pts, 2.0 * np.ones(6))
        score = multimatch(a, b, self.DIAG)
        assert score.duration == 0.5
        assert score.shape == 1.0
        assert score.direction == 1.0
        assert score.length == 1.0
        assert score.position == 1.0

    def test_opposite_middle_saccade_direction(self):
        # 3-fixation paths whose middle saccades point opposite ways.
        a = _path([[0, 0, 0], [1, 0, 0], [2, 0, 0]], np.ones(3))
        b = _path([[0, 0, 0], [1, 0, 0], [0, 0, 0]], np.ones(3))
        same = multimatch(a, a, self.DIAG)
        opp = multimatch(a, b, self.DIAG)
        assert opp.direction < same.direction

    def test_symmetry_random_pairs(self, rng):
        for _ in range(100):
            na, nb = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            a = _path(rng.random((na, 3)), rng.random(na) + 0.1)
            b = _path(rng.random((nb, 3)), rng.random(nb) + 0.1)
            ab = multimatch(a, b, self.DIAG)
            ba = multimatch(b, a, self.DIAG)
            for k in ("shape", "direction", "length", "position", "duration"):
                assert getattr(ab, k) == pytest.approx(getattr(ba, k), abs=1e-12)

    def test_too_short(self):
        a = _path([[0, 0, 0]], [1.0])
        with pytest.raises(TooShort):
            multimatch(a, a, self.DIAG)

    def test_components_in_unit_interval(self, rng):
        for _ in range(20):
            a = _path(rng.random((5, 3)), rng.random(5) + 0.05)
            b = _path(rng.random((7, 3)), rng.random(7) + 0.05)
            s = multimatch(a, b, self.DIAG)
            for k in ("shape", "direction", "length", "position", "duration"):
                assert 0.0 <= getattr(s, k) <= 1.0


class TestSaliencyMapType:
    def test_normalize(self):
        m = SaliencyMap(np.array([1.0, 3.0]))
        n = m.normalize()
        assert n.normalized
        assert abs(n.values.sum() - 1.0) <= 1e-9

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            SaliencyMap(np.array([-0.1, 1.0]))

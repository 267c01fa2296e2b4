import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dirichlet_pair
from qif_lab.divergences import (
    ClampPolicy,
    DimensionMismatch,
    DiscreteDistribution,
    E_INV,
    PureStateOracleInput,
    bhattacharyya_distance,
    fidelity,
    fidelity_grad_p,
    fidelity_oracle,
    g_gradient_factor,
    g_transform,
    js,
    js_grad_p,
    kl,
    kl_grad_p,
    qif,
    qif_grad_p,
    simple_fidelity_loss,
)

EPS = 1e-13


# Independent oracles: plain-Python loops straight from the definitions.

def brute_kl(p, q, eps=EPS):
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * math.log(pi / max(qi, eps))
    return total


def brute_js(p, q, eps=EPS):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    return 0.5 * brute_kl(p, m, eps) + 0.5 * brute_kl(q, m, eps)


def brute_fidelity(p, q):
    return sum(math.sqrt(a) * math.sqrt(b) for a, b in zip(p, q)) ** 2


distributions = st.integers(2, 12).flatmap(
    lambda d: st.tuples(
        st.lists(st.floats(0, 1), min_size=d, max_size=d).filter(lambda w: sum(w) > 1e-3),
        st.lists(st.floats(0, 1), min_size=d, max_size=d).filter(lambda w: sum(w) > 1e-3),
    )
)


def _norm(w):
    w = np.asarray(w, dtype=float)
    return w / w.sum()


class TestDiscreteDistribution:
    def test_normalizes_small_drift(self):
        p = DiscreteDistribution([0.5, 0.5 + 5e-7])
        assert abs(p.weights.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [0.2, 0.2], [1.0, -0.1, 0.1], [], [np.nan, 1.0]])
    def test_rejects_malformed(self, weights):
        with pytest.raises(ValueError):
            DiscreteDistribution(weights)

    def test_from_masses(self):
        p = DiscreteDistribution.from_masses([2.0, 6.0])
        np.testing.assert_allclose(p.weights, [0.25, 0.75])

    def test_immutable(self):
        p = DiscreteDistribution([0.3, 0.7])
        with pytest.raises(ValueError):
            p.weights[0] = 1.0


class TestClampPolicy:
    @pytest.mark.parametrize("eps", [0.0, -1e-13, 1e-6, 0.1])
    def test_rejects_out_of_range(self, eps):
        with pytest.raises(ValueError):
            ClampPolicy(eps)

    def test_default(self):
        assert ClampPolicy().epsilon == 1e-13


class TestFidelity:
    def test_identical(self):
        assert fidelity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert fidelity([1, 0], [0, 1]) == 0.0

    def test_half(self):
        oracle = fidelity_oracle(PureStateOracleInput([math.sqrt(0.5)] * 2, [1.0, 0.0]))
        assert fidelity([0.5, 0.5], [1, 0]) == pytest.approx(0.5, abs=1e-12)
        assert fidelity([0.5, 0.5], [1, 0]) == pytest.approx(oracle, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fidelity([0.5, 0.5], [1 / 3] * 3)

    def test_matches_brute_force(self, rng):
        for d in (2, 5, 17, 64):
            p, q = dirichlet_pair(rng, d)
            assert fidelity(p, q) == pytest.approx(brute_fidelity(p, q), abs=1e-13)

    def test_never_exceeds_one(self, rng):
        for _ in range(200):
            p = rng.dirichlet(np.ones(50))
            assert fidelity(p, p.copy()) <= 1.0

    @settings(max_examples=300, deadline=None)
    @given(distributions)
    def test_bounds_and_symmetry(self, pair):
        p, q = (_norm(w) for w in pair)
        f = fidelity(p, q)
        assert 0.0 <= f <= 1.0
        assert f == pytest.approx(fidelity(q, p), abs=1e-15)
        assert fidelity(p, p) == pytest.approx(1.0, abs=1e-12)


class TestOracle:
    def test_identical(self):
        a = [math.sqrt(0.2), math.sqrt(0.8)]
        assert fidelity_oracle(PureStateOracleInput(a, a)) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert fidelity_oracle(PureStateOracleInput([1, 0], [0, 1])) == pytest.approx(0.0, abs=1e-15)

    def test_half_by_explicit_eigendecomposition(self):
        # 2x2 by hand: rho = |+><+|, sigma = |0><0|; sqrt(rho) = rho,
        # rho sigma rho = 0.5 * rho, whose only nonzero eigenvalue is 0.5
        plus = np.array([1.0, 1.0]) / math.sqrt(2)
        rho = np.outer(plus, plus)
        sigma = np.diag([1.0, 0.0])
        m = rho @ sigma @ rho
        eig = np.linalg.eigvalsh(m)
        expected = float(np.sqrt(np.clip(eig, 0, None)).sum()) ** 2
        assert expected == pytest.approx(0.5, abs=1e-12)
        got = fidelity_oracle(PureStateOracleInput(plus, [1.0, 0.0]))
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            PureStateOracleInput([0.5, 0.5], [1.0, 0.0])

    def test_rejects_large_dimension(self):
        a = np.full(17, 1 / math.sqrt(17))
        with pytest.raises(ValueError):
            PureStateOracleInput(a, a)

    def test_equivalence_small_d(self, rng):
        for d in range(1, 9):
            for _ in range(50):
                p, q = dirichlet_pair(rng, d)
                inp = PureStateOracleInput.from_distributions(p, q)
                assert abs(fidelity(p, q) - fidelity_oracle(inp)) < 1e-10


class TestQIF:
    def test_identity(self):
        assert qif([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_maximum_at_inverse_e(self):
        # p = (1, 0), q = (c, 1 - c) has F = c; choose c = 1/e
        p, q = [1.0, 0.0], [E_INV, 1 - E_INV]
        assert fidelity(p, q) == pytest.approx(E_INV, abs=1e-15)
        assert qif(p, q) == pytest.approx(0.367879, abs=1e-6)
        assert qif(p, q) == pytest.approx(E_INV, abs=1e-15)

    def test_orthogonal_is_clamped(self):
        expected = -1e-13 * math.log(1e-13)
        assert qif([1, 0], [0, 1], ClampPolicy(1e-13)) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(2.993e-12, rel=1e-3)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            qif([1.0], [0.5, 0.5])

    @settings(max_examples=300, deadline=None)
    @given(distributions)
    def test_bounded_symmetric(self, pair):
        p, q = (_norm(w) for w in pair)
        v = qif(p, q)
        assert 0.0 <= v <= E_INV + 1e-12
        assert v == pytest.approx(qif(q, p), abs=1e-15)

    def test_zero_iff_equal(self, rng):
        for _ in range(100):
            p, q = dirichlet_pair(rng, 6)
            assert qif(p, q) > 0
            assert qif(p, p) == 0.0


class TestKLJS:
    def test_kl_identity(self, rng):
        p = rng.dirichlet(np.ones(7))
        assert kl(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_kl_log2(self):
        assert kl([1, 0], [0.5, 0.5]) == pytest.approx(brute_kl([1, 0], [0.5, 0.5]), abs=1e-15)
        assert kl([1, 0], [0.5, 0.5]) == pytest.approx(0.693147, abs=1e-6)

    def test_kl_floored(self):
        assert kl([1, 0], [0, 1], ClampPolicy(1e-13)) == pytest.approx(math.log(1e13), rel=1e-12)
        assert kl([1, 0], [0, 1]) == pytest.approx(29.934, abs=1e-3)

    def test_kl_matches_brute_force(self, rng):
        for d in (2, 9, 40):
            p, q = dirichlet_pair(rng, d)
            assert kl(p, q) == pytest.approx(brute_kl(p, q), rel=1e-12, abs=1e-15)

    def test_js_identity(self):
        assert js([0.2, 0.8], [0.2, 0.8]) == pytest.approx(0.0, abs=1e-16)

    def test_js_disjoint(self):
        assert js([1, 0], [0, 1]) == pytest.approx(brute_js([1, 0], [0, 1]), abs=1e-15)
        assert js([1, 0], [0, 1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_js_matches_brute_force(self, rng):
        for d in (3, 30):
            p, q = dirichlet_pair(rng, d)
            assert js(p, q) == pytest.approx(brute_js(p, q), rel=1e-12, abs=1e-15)

    def test_js_symmetric(self, rng):
        for _ in range(200):
            p, q = dirichlet_pair(rng, int(rng.integers(2, 20)))
            assert abs(js(p, q) - js(q, p)) <= 1e-12

    @settings(max_examples=300, deadline=None)
    @given(distributions)
    def test_ranges(self, pair):
        p, q = (_norm(w) for w in pair)
        assert kl(p, q) >= -1e-12
        assert -1e-15 <= js(p, q) <= math.log(2) + 1e-12


class TestBhattacharyya:
    def test_identity(self):
        assert bhattacharyya_distance([0.4, 0.6], [0.4, 0.6]) == pytest.approx(0.0, abs=1e-15)

    def test_half(self):
        by_hand = -math.log(math.sqrt(0.5) * 1 + math.sqrt(0.5) * 0)
        assert bhattacharyya_distance([0.5, 0.5], [1, 0]) == pytest.approx(by_hand, abs=1e-15)
        assert by_hand == pytest.approx(0.34657, abs=1e-5)

    def test_disjoint_is_finite(self):
        assert bhattacharyya_distance([1, 0], [0, 1]) == pytest.approx(math.log(1e13), rel=1e-12)


class TestTransforms:
    def test_g_landmarks(self):
        assert g_transform(E_INV) == pytest.approx(-0.3679, abs=1e-4)
        assert g_transform(math.log(2)) == pytest.approx(-0.254, abs=1e-3)
        assert g_transform(1.0) == 0.0

    def test_g_sign_pattern(self):
        for f in np.linspace(1e-4, 0.9999, 200):
            assert g_transform(f) < 0
        assert g_transform(1.0) == 0
        for f in np.linspace(1.0001, 50, 200):
            assert g_transform(f) > 0

    def test_g_minimum(self):
        fs = np.linspace(1e-4, 5, 200_001)
        vals = g_transform(fs)
        assert fs[np.argmin(vals)] == pytest.approx(E_INV, abs=1e-4)
        assert vals.min() == pytest.approx(-E_INV, abs=1e-9)

    def test_g_range_on_js_interval(self):
        fs = np.linspace(1e-9, math.log(2), 10_001)
        vals = g_transform(fs)
        assert vals.min() >= -0.36788 and vals.max() <= 0

    @pytest.mark.parametrize("f, expected", [(1.0, 1.0), (E_INV, 0.0), (math.e, 2.0)])
    def test_gradient_factor(self, f, expected):
        assert g_gradient_factor(f) == pytest.approx(expected, abs=1e-15)

    def test_gradient_factor_is_derivative(self):
        h = 1e-6
        for f in np.geomspace(1e-3, 10, 400):
            numeric = (g_transform(f + h * f) - g_transform(f - h * f)) / (2 * h * f)
            assert numeric == pytest.approx(g_gradient_factor(f), rel=1e-6, abs=1e-9)

    @pytest.mark.parametrize("f", [0.0, -1.0, float("nan")])
    def test_nonpositive_rejected(self, f):
        with pytest.raises(ValueError):
            g_transform(f)
        with pytest.raises(ValueError):
            g_gradient_factor(f)

    @pytest.mark.parametrize("f, expected", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)])
    def test_simple_loss(self, f, expected):
        assert simple_fidelity_loss(f) == expected

    @pytest.mark.parametrize("f", [-0.1, 1.1])
    def test_simple_loss_domain(self, f):
        with pytest.raises(ValueError):
            simple_fidelity_loss(f)


class TestPartials:
    """Analytic d/dp against central differences on the simplex interior."""

    @staticmethod
    def _numeric(fn, p, q, h=1e-7):
        out = np.zeros_like(p)
        for i in range(len(p)):
            pp, pm = p.copy(), p.copy()
            pp[i] += h
            pm[i] -= h
            out[i] = (fn(pp, q) - fn(pm, q)) / (2 * h)
        return out

    def _raw(self, name):
        # unnormalized evaluations so each coordinate can move on its own
        def kl_raw(p, q):
            return float(np.sum(p * np.log(p / q)))

        def js_raw(p, q):
            m = 0.5 * (p + q)
            return 0.5 * float(np.sum(p * np.log(p / m))) + 0.5 * float(np.sum(q * np.log(q / m)))

        def fid_raw(p, q):
            return float(np.sqrt(p * q).sum()) ** 2

        def qif_raw(p, q):
            f = fid_raw(p, q)
            return -f * math.log(f)

        return {"kl": kl_raw, "js": js_raw, "fid": fid_raw, "qif": qif_raw}[name]

    def test_partials(self, rng):
        for _ in range(20):
            p, q = (rng.dirichlet(np.ones(6)) * 0.9 + 0.1 / 6 for _ in range(2))
            np.testing.assert_allclose(kl_grad_p(p, q, EPS), self._numeric(self._raw("kl"), p, q), rtol=1e-6, atol=1e-7)
            np.testing.assert_allclose(js_grad_p(p, q, EPS), self._numeric(self._raw("js"), p, q), rtol=1e-6, atol=1e-7)
            np.testing.assert_allclose(fidelity_grad_p(p, q, EPS)[1], self._numeric(self._raw("fid"), p, q), rtol=1e-6, atol=1e-7)
            np.testing.assert_allclose(qif_grad_p(p, q, EPS), self._numeric(self._raw("qif"), p, q), rtol=1e-6, atol=1e-7)

    def test_qif_gradient_vanishes_below_floor(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.0, 1.0])
        assert np.all(qif_grad_p(p, q, EPS) == 0)

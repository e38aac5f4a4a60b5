import numpy as np
import pytest
from hypothesis import given, strategies as st

from kcones.cocycle import (CocycleSpec, bernoulli, bundle_exponents, cocycle_product,
                            constant_cocycle, lyapunov_norm, lyapunov_spectrum, markov, rotation,
                            sample_orbit, tempered_envelope, temperedness_slope, top_lyapunov)
from kcones.errors import InvalidArgument, NonPositiveValue, NotInvariant
from kcones.splitting import family_from_bundles, met_decomposition
from kcones.subspaces import make_splitting

from conftest import DIAG, FIB, SHEAR, const_trace, line

LOG2 = np.log(2.0)
BERNOULLI_DIAG = np.array([np.diag([3.0, 1 / 3]), np.diag([2.0, 0.5])])


def _direct_product(trace, j, n):
    M = np.eye(trace.d)
    for t in range(j, j + n):
        M = trace.A(t) @ M
    return M


class TestSampleOrbit:
    def test_constant_generator(self):
        tr = sample_orbit(constant_cocycle(FIB), 5)
        assert np.all(tr.matrices == FIB)
        np.testing.assert_allclose(cocycle_product(tr, 0, 5), np.linalg.matrix_power(FIB, 5))

    def test_seeded_bernoulli_is_repeatable(self):
        spec = CocycleSpec(bernoulli([0.5, 0.5]), BERNOULLI_DIAG)
        a, b = sample_orbit(spec, 200, seed=9), sample_orbit(spec, 200, seed=9)
        assert np.array_equal(a.matrices, b.matrices)
        assert np.array_equal(a.symbols, b.symbols)
        assert not np.array_equal(a.symbols, sample_orbit(spec, 200, seed=10).symbols)

    def test_zero_length_raises(self):
        with pytest.raises(InvalidArgument):
            sample_orbit(constant_cocycle(DIAG), 0)

    def test_singular_generator_rejected(self):
        with pytest.raises(InvalidArgument):
            constant_cocycle([[1.0, 0.0], [0.0, 0.0]])

    def test_markov_frequencies(self):
        P = [[0.9, 0.1], [0.5, 0.5]]
        spec = CocycleSpec(markov(P), BERNOULLI_DIAG)
        tr = sample_orbit(spec, 20000, seed=1)
        assert np.mean(tr.symbols == 0) == pytest.approx(5 / 6, abs=0.02)

    def test_rotation_is_periodic(self):
        spec = CocycleSpec(rotation(1 / 3, 3), np.array([np.eye(2), np.eye(2), DIAG]))
        s = sample_orbit(spec, 30, seed=2).symbols
        assert np.array_equal(s[3:], s[:-3])
        assert sorted(set(s[:3])) == [0, 1, 2]


class TestCocycleProduct:
    def test_zero_steps(self):
        assert np.array_equal(cocycle_product(const_trace(FIB, 10), 0, 0), np.eye(2))

    def test_diagonal_power(self):
        np.testing.assert_allclose(cocycle_product(const_trace(DIAG, 20), 0, 10),
                                   np.diag([1024.0, 2.0 ** -10]), rtol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(-30, 20), st.integers(0, 12),
           st.integers(0, 12))
    def test_cocycle_identity(self, seed, j, a, b):
        rng = np.random.default_rng(seed)
        spec = CocycleSpec(bernoulli([0.3, 0.3, 0.4]), rng.standard_normal((3, 3, 3)) + 2 * np.eye(3))
        tr = sample_orbit(spec, 50, seed=seed)
        T = cocycle_product(tr, j + a, b) @ cocycle_product(tr, j, a)
        Tab = cocycle_product(tr, j, a + b)
        assert np.abs(T - Tab).max() <= 1e-9 * np.abs(Tab).max()
        D = _direct_product(tr, j, a + b)
        assert np.abs(D - Tab).max() <= 1e-9 * np.abs(D).max()


class TestExponents:
    def test_diagonal_top(self):
        lam, _ = top_lyapunov(const_trace(DIAG, 1000))
        assert lam == pytest.approx(LOG2, abs=1e-12)

    def test_symmetric_top(self):
        lam, _ = top_lyapunov(sample_orbit(constant_cocycle(FIB), 1000))
        assert lam == pytest.approx(np.log((3 + np.sqrt(5)) / 2), abs=1e-6)

    def test_bernoulli_diagonal_top(self):
        spec = CocycleSpec(bernoulli([0.5, 0.5]), BERNOULLI_DIAG)
        lam, se = top_lyapunov(sample_orbit(spec, 20000, seed=4))
        assert abs(lam - (np.log(3) + LOG2) / 2) <= 3 * se

    @pytest.mark.parametrize("A", [DIAG, SHEAR])
    def test_spectra_of_triangular(self, A):
        r = lyapunov_spectrum(const_trace(A, 1000))
        np.testing.assert_allclose(r.spectrum, [LOG2, -LOG2], atol=1e-3)

    def test_bernoulli_spectrum(self):
        spec = CocycleSpec(bernoulli([0.5, 0.5]), BERNOULLI_DIAG)
        r = lyapunov_spectrum(sample_orbit(spec, 20000, seed=4))
        target = (np.log(3) + LOG2) / 2
        assert np.all(np.abs(r.spectrum - [target, -target]) <= 3 * r.stderr)

    def test_short_trace_rejected(self):
        with pytest.raises(InvalidArgument):
            top_lyapunov(const_trace(DIAG, 50))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_spectrum_sums_to_log_det(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((2, 3, 3)) + 3 * np.eye(3)
        tr = sample_orbit(CocycleSpec(bernoulli([0.5, 0.5]), G), 200, seed=seed)
        r = lyapunov_spectrum(tr)
        logdet = np.mean([np.log(abs(np.linalg.det(tr.A(j)))) for j in range(200)])
        assert r.spectrum.sum() == pytest.approx(logdet, abs=1e-9)
        assert np.all(np.diff(r.spectrum) <= 0)


class TestBundleExponents:
    def test_diagonal_bundles(self):
        tr = const_trace(DIAG, 300)
        rep = bundle_exponents(tr, [make_splitting(line(1, 0), line(0, 1))] * 201)
        assert rep.lambda_E == pytest.approx(LOG2, abs=1e-12)
        assert rep.lambda_F == pytest.approx(-LOG2, abs=1e-12)
        assert rep.lambda_E_minus == pytest.approx(-LOG2, abs=1e-12)

    def test_triangular_eigen_splitting(self):
        tr = const_trace(SHEAR, 300)
        rep = bundle_exponents(tr, [make_splitting(line(1, 0), line(-2 / 3, 1))] * 201)
        assert rep.lambda_E == pytest.approx(LOG2, abs=1e-9)
        assert rep.lambda_F == pytest.approx(-LOG2, abs=1e-9)

    def test_non_invariant_raises(self):
        tr = const_trace(SHEAR, 300)
        with pytest.raises(NotInvariant):
            bundle_exponents(tr, [make_splitting(line(1, 0), line(0, 1))] * 50)


class TestTemperedness:
    def test_constant_is_tempered(self):
        slope, ok = temperedness_slope(np.full(200, 3.0))
        assert slope == pytest.approx(0.0, abs=1e-12) and ok

    def test_exponential_is_not(self):
        slope, ok = temperedness_slope(np.exp(np.arange(200.0)))
        assert slope == pytest.approx(1.0) and not ok

    def test_projection_norms_of_bernoulli_splitting(self):
        spec = CocycleSpec(bernoulli([0.5, 0.5]), BERNOULLI_DIAG)
        tr = sample_orbit(spec, 10000, seed=2)
        n = 10000
        fam = family_from_bundles(tr, [line(1, 0)] * n, [line(0, 1)] * n)
        f = [np.linalg.norm(fam.at(j).proj_E, 2) for j in range(n)]
        assert temperedness_slope(f)[1]

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveValue):
            temperedness_slope(np.r_[np.ones(150), 0.0])

    def test_envelope_of_constant(self):
        np.testing.assert_allclose(tempered_envelope(np.full(20, 5.0), 0.1), 5.0)

    def test_envelope_of_spike(self):
        f = np.ones(21)
        f[10] = 100.0
        R = tempered_envelope(f, np.log(10))
        expected = np.maximum(100.0 * 10.0 ** -np.abs(np.arange(21) - 10.0), 1.0)
        np.testing.assert_allclose(R, expected, rtol=1e-12)

    @given(st.lists(st.floats(0.01, 100), min_size=2, max_size=60), st.floats(0.01, 2.0))
    def test_envelope_bounds_and_ratio(self, values, gamma):
        f = np.array(values)
        R = tempered_envelope(f, gamma)
        assert np.all(1 / R <= f * (1 + 1e-12)) and np.all(f <= R * (1 + 1e-12))
        r = R[1:] / R[:-1]
        assert np.all(r <= np.exp(gamma) * (1 + 1e-12))
        assert np.all(r >= np.exp(-gamma) * (1 - 1e-12))


@pytest.fixture(scope="module")
def diag_met():
    # the geometric sums for eps = 0.1 need several hundred steps both ways
    tr = const_trace(DIAG, 1000)
    return tr, met_decomposition(tr, start=-500, stop=500)


class TestLyapunovNorm:
    def test_top_block_vector(self, diag_met):
        tr, met = diag_met
        q = np.exp(-0.1)
        val = lyapunov_norm(tr, met, 1, np.array([1.0, 0.0]), eps=0.1)
        assert val.value == pytest.approx((1 + q) / (1 - q), abs=1e-6)
        assert val.value == pytest.approx(20.0167, abs=1e-4)

    def test_lower_block_vector(self, diag_met):
        tr, met = diag_met
        val = lyapunov_norm(tr, met, 1, np.array([0.0, 1.0]), eps=0.1)
        assert val.value == pytest.approx(1 / (1 - np.exp(-0.1)), abs=1e-6)
        assert val.value == pytest.approx(10.5083, abs=1e-4)

    def test_one_step_growth_within_eps(self, diag_met):
        tr, met = diag_met
        for v, lam in ((np.array([1.0, 0.0]), LOG2), (np.array([0.0, 1.0]), -LOG2)):
            a = lyapunov_norm(tr, met, 1, v, eps=0.1, step=0).value
            b = lyapunov_norm(tr, met, 1, DIAG @ v, eps=0.1, step=1).value
            assert np.exp(lam - 0.1) - 1e-9 <= b / a <= np.exp(lam + 0.1) + 1e-9

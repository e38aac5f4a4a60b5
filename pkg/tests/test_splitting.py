from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kcones.checkers import check_contracting
from kcones.cocycle import CocycleSpec, bernoulli, bundle_exponents, sample_orbit
from kcones.cones import constant_family, make_cone, sample_cone, standard_cone
from kcones.errors import GapTooSmall, NoConvergence, NotStrictlyInvariant, SeriesDiverging
from kcones.splitting import (build_nested_cones, build_zeta_cone, extract_dominated_splitting,
                              family_from_bundles, graph_transform_complement, make_zeta_data,
                              met_decomposition, push_forward_top_space, zeta_contraction_defect,
                              zeta_index, zeta_rows)
from kcones.subspaces import gap_distance, make_subspace

from conftest import DIAG, FIB, SHEAR, const_trace, line

LOG4 = np.log(4.0)
GOLDEN_LINE = line(1, (np.sqrt(5) - 1) / 2)
SHEAR_F = line(-2 / 3, 1)


def _diag_family(n=300, A=DIAG):
    tr = const_trace(A, 400)
    return tr, family_from_bundles(tr, [line(1, 0)] * n, [line(0, 1)] * n)


@lru_cache(maxsize=None)
def _diag_zeta():
    tr, fam = _diag_family()
    return fam, make_zeta_data(tr, fam, delta=LOG4)


class TestPushForward:
    def test_fibonacci_limit_and_rate(self):
        res = push_forward_top_space(const_trace(FIB, 400), E0=line(1, 0))
        assert gap_distance(res.E, GOLDEN_LINE) <= 1e-8
        target = np.log((3 - np.sqrt(5)) / (3 + np.sqrt(5)))
        assert res.rate == pytest.approx(target, rel=0.1)

    def test_equal_exponents_do_not_converge(self):
        with pytest.raises(NoConvergence):
            push_forward_top_space(const_trace(np.diag([2.0, 2.0]), 400), k=1)

    def test_invariant_start_is_fixed_at_once(self):
        res = push_forward_top_space(const_trace(DIAG, 300), E0=line(1, 0))
        assert gap_distance(res.E, line(1, 0)) == 0.0
        assert res.steps == 1 and res.rate == -np.inf

    def test_generic_start_reaches_eigenline(self):
        res = push_forward_top_space(const_trace(FIB, 400), k=1)
        assert gap_distance(res.E, GOLDEN_LINE) <= 1e-8


class TestGraphTransform:
    def test_triangular_series(self):
        res = graph_transform_complement(const_trace(SHEAR, 300), [line(1, 0)] * 300, F0=line(0, 1))
        assert gap_distance(res.F[0], SHEAR_F) <= 1e-10
        assert res.tail_bound < 1e-10
        np.testing.assert_allclose(res.term_norms[:4], 0.5 * 0.25 ** np.arange(4), rtol=1e-12)
        # eigenvector of the eigenvalue 1/2 is the same line
        w, V = np.linalg.eig(SHEAR)
        assert gap_distance(make_subspace(V[:, np.argmin(w)]), res.F[0]) <= 1e-12

    def test_zero_coupling_keeps_initial_complement(self):
        res = graph_transform_complement(const_trace(DIAG, 300), [line(1, 0)] * 300, F0=line(0, 1))
        assert all(gap_distance(F, line(0, 1)) == 0.0 for F in res.F)

    def test_reversed_order_diverges(self):
        A = np.array([[2.0, 0.0], [1.0, 0.5]])
        with pytest.raises(SeriesDiverging):
            graph_transform_complement(const_trace(A, 300), [line(0, 1)] * 300, F0=line(1, 0))

    def test_output_is_invariant(self):
        res = graph_transform_complement(const_trace(SHEAR, 300), [line(1, 0)] * 300, F0=line(0, 1))
        for F0, F1 in zip(res.F[:-1], res.F[1:]):
            assert gap_distance(make_subspace(SHEAR @ F0.basis), F1) <= 1e-6


class TestExtract:
    def test_diagonal(self, square_cone):
        fam = extract_dominated_splitting(const_trace(DIAG, 300), constant_family(square_cone))
        assert gap_distance(fam.E(fam.start), line(1, 0)) <= 1e-12
        assert gap_distance(fam.F(fam.start), line(0, 1)) <= 1e-12
        assert fam.rate_fit == pytest.approx(-LOG4, abs=1e-9)

    def test_triangular(self, square_cone):
        fam = extract_dominated_splitting(const_trace(SHEAR, 300), constant_family(square_cone))
        assert gap_distance(fam.E(fam.start), line(1, 0)) <= 1e-12
        assert gap_distance(fam.F(fam.start), SHEAR_F) <= 1e-8
        assert fam.rate_fit == pytest.approx(-LOG4, abs=1e-6)

    def test_coupling_bounded_by_chi(self, square_cone):
        fam = extract_dominated_splitting(const_trace(SHEAR, 300), constant_family(square_cone))
        s = square_cone.splitting
        for t, chi in enumerate(fam.chi[:20]):
            E0, E1 = fam.E(fam.start + t), fam.E(fam.start + t + 1)
            restricted = float(E1.basis[:, 0] @ SHEAR @ E0.basis[:, 0])
            coupling = np.linalg.norm(s.proj_E @ SHEAR @ s.proj_F, 2) / abs(restricted)
            assert coupling <= chi * np.linalg.norm(s.proj_F, 2) + 1e-12

    def test_rotation_violates_cones(self, square_cone):
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        with pytest.raises(NotStrictlyInvariant):
            extract_dominated_splitting(const_trace(R, 300), constant_family(square_cone))

    def test_product_bound_with_mean_tau(self, square_cone):
        fam = extract_dominated_splitting(const_trace(FIB, 400), constant_family(square_cone))
        n = np.arange(len(fam.log_products))
        slope = fam.mean_log_tau + 2 * 0.01
        K_hat = np.exp(np.max(fam.log_products - n * slope))
        assert np.isfinite(K_hat)
        assert np.all(fam.log_products <= np.log(K_hat) + n * slope + 1e-12)


class TestZeta:
    @pytest.fixture
    def data(self):
        return _diag_zeta()[1]

    def test_closed_form_value(self, data):
        val = zeta_index(data, 0, np.array([1.0, 1.0]))
        assert val.value == pytest.approx(2.0, abs=1e-8)
        assert val.error < 1e-8

    def test_three_cases(self, data):
        assert zeta_index(data, 0, np.array([0.0, 1.0])).value == np.inf
        assert zeta_index(data, 0, np.array([1.0, 0.0])).value == 0.0

    def test_cone_is_half_opening(self, data):
        C = build_zeta_cone(data, 0)
        assert C.opening == pytest.approx(0.5, abs=1e-8)
        assert C.margin(np.array([[1.0, 0.5]]))[0] == pytest.approx(0.0, abs=1e-8)

    def test_one_step_contraction(self, data):
        after = zeta_index(data, 1, DIAG @ np.array([1.0, 1.0])).value
        assert after == pytest.approx(0.5, abs=1e-8)
        assert after <= np.exp(-LOG4 / 2) * 2.0
        assert zeta_contraction_defect(data, 0, samples=512) <= 0.0

    @given(st.floats(1e-6, 5), st.booleans(), st.floats(0.0, 0.05))
    def test_sandwich(self, t, negative, eps):
        fam, data = _diag_zeta()
        t = -t if negative else t
        z = zeta_index(data, 0, np.array([1.0, t])).value
        q = np.exp(-LOG4 / 2 + eps)
        ratio = abs(t)
        assert ratio <= z <= (1 + fam.K_bound * q / (1 - q)) * ratio * (1 + 1e-9)

    @given(st.floats(-0.5, 0.5), st.floats(-1, 1))
    def test_lipschitz_on_unit_vectors(self, t, s):
        fam, data = _diag_zeta()
        u = np.array([1.0, t]) / np.hypot(1.0, t)
        pE = 1.0
        w = u + s / (4 * pE) * np.array([-u[1], u[0]]) * 0.999
        w /= np.linalg.norm(w)
        zu, zw = zeta_rows(data, 0, np.vstack([u, w]))[0]
        L = 16 * fam.K_bound * (pE + 1) ** 2 / (1 - np.exp(-LOG4))
        assert abs(zw - zu) <= L * np.linalg.norm(w - u) + 1e-9


class TestMET:
    def test_constant_diagonalizable(self):
        A = np.array([[3.0, 1.0, 0.0], [0.0, 1.5, 1.0], [0.0, 0.0, 0.5]])
        met = met_decomposition(const_trace(A, 400))
        w, V = np.linalg.eig(A)
        order = np.argsort(-np.abs(w))
        assert met.dims == (1, 1, 1)
        np.testing.assert_allclose(met.exponents, np.log(np.abs(w[order])), atol=1e-3)
        j = met.steps[0]
        for b, idx in zip(met.blocks[j], order):
            assert gap_distance(b, make_subspace(V[:, idx])) <= 1e-6

    def test_repeated_exponent_merges(self):
        met = met_decomposition(const_trace(np.diag([2.0, 2.0, 0.5]), 400))
        assert met.dims == (2, 1)
        j = met.steps[0]
        assert gap_distance(met.blocks[j][0], make_subspace(np.eye(3)[:, :2])) <= 1e-9

    def test_bernoulli_coordinate_splitting(self):
        G = np.array([np.diag([3.0, 1 / 3]), np.diag([2.0, 0.5])])
        tr = sample_orbit(CocycleSpec(bernoulli([0.5, 0.5]), G), 1000, seed=5)
        met = met_decomposition(tr)
        for j in range(*met.steps):
            assert gap_distance(met.blocks[j][0], line(1, 0)) <= 1e-9
            assert gap_distance(met.blocks[j][1], line(0, 1)) <= 1e-9


class TestNestedCones:
    def test_diagonal_three_blocks_nest(self):
        tr = const_trace(np.diag([3.0, 2.0, 0.5]), 1400)
        met = met_decomposition(tr, start=-1200, stop=1200)
        nc = build_nested_cones(tr, met, levels=[1, 2], steps=range(0, 3))
        rng = np.random.default_rng(0)
        for j in range(3):
            V = sample_cone(nc.cones[1, j], rng, 256)
            assert np.min(nc.cones[2, j].margin(V)) >= -1e-9
            assert gap_distance(nc.cones[1, j].splitting.E, line(1, 0, 0)) <= 1e-9

    def test_planar_separation_beats_formula(self):
        tr = const_trace(DIAG, 1000)
        met = met_decomposition(tr, start=-500, stop=500)
        nc = build_nested_cones(tr, met, levels=[1], openings=[1.0], steps=range(0, 4))
        fam = nc.family(1)
        verdicts = check_contracting(tr, fam, steps=range(0, 3))
        c3 = verdicts[2]
        assert c3.passed
        assert np.all(c3.data["separation"] >= 1 / c3.data["chi"])

    def test_single_block_has_no_gap(self):
        tr = const_trace(np.diag([2.0, 2.0]), 400)
        with pytest.raises(GapTooSmall):
            build_nested_cones(tr, met_decomposition(tr))

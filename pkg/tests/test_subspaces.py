import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kcones.errors import EmptySubspace, NotComplementary, RankDeficient
from kcones.subspaces import (gap_distance, make_splitting, make_subspace, operator_norm,
                              separation_index, subspace_distance, zero_subspace)

from conftest import line

SQ2 = np.sqrt(2.0)


def _unit_circle(n=20000):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([np.cos(t), np.sin(t)])


def _gap_grid(E, F, n=20000):
    # brute force: unit-circle grid points within one grid step of a line
    # stand in for its unit sphere
    U = _unit_circle(n)
    tol = 2 * np.pi / n

    def sphere(S):
        return U[np.abs(U @ S.basis[:, 0]) >= np.cos(tol)]

    def one_side(A, B):
        SA, SB = sphere(A), sphere(B)
        D = np.linalg.norm(SA[:, None, :] - SB[None, :, :], axis=2)
        return D.min(axis=1).max()

    return max(one_side(E, F), one_side(F, E))


subspace_basis = st.integers(2, 5).flatmap(
    lambda d: st.integers(1, d).flatmap(
        lambda k: arrays(np.float64, (d, k), elements=st.floats(-3, 3, allow_subnormal=False))))


def _valid(B):
    return np.linalg.matrix_rank(B, tol=1e-6) == B.shape[1]


class TestMakeSubspace:
    def test_axis_is_kept(self):
        E = make_subspace([[1.0], [0.0]])
        assert E.dim == 1
        np.testing.assert_allclose(np.abs(E.basis[:, 0]), [1, 0])

    def test_diagonal_is_normalized(self):
        E = make_subspace([[1.0], [1.0]])
        np.testing.assert_allclose(np.abs(E.basis[:, 0]), [1 / SQ2, 1 / SQ2], atol=1e-15)

    def test_collinear_columns_raise(self):
        with pytest.raises(RankDeficient):
            make_subspace([[1.0, 2.0], [0.0, 0.0]])

    @given(subspace_basis)
    def test_orthonormal_basis_spans_input(self, B):
        if not _valid(B):
            return
        E = make_subspace(B)
        np.testing.assert_allclose(E.basis.T @ E.basis, np.eye(E.dim), atol=1e-10)
        np.testing.assert_allclose(E.projector() @ B, B, atol=1e-8 * (1 + np.abs(B).max()))


class TestGapDistance:
    def test_identical(self):
        assert gap_distance(line(1, 0), line(1, 0)) == 0.0

    def test_trivial_vs_line(self):
        assert gap_distance(zero_subspace(2), line(1, 0)) == 2.0

    def test_orthogonal_lines(self):
        assert gap_distance(line(1, 0), line(0, 1)) == pytest.approx(SQ2, abs=1e-14)

    @pytest.mark.parametrize("angle", [0.1, 0.5, 1.0, 1.3, np.pi / 2])
    def test_matches_unit_circle_grid(self, angle):
        E, F = line(1, 0), line(np.cos(angle), np.sin(angle))
        assert gap_distance(E, F) == pytest.approx(_gap_grid(E, F), abs=2e-3)

    def test_nearby_lines_keep_relative_accuracy(self):
        assert gap_distance(line(1, 0), line(1, 1e-12)) == pytest.approx(1e-12, rel=1e-6)

    @given(subspace_basis, st.integers(0, 2 ** 32 - 1))
    def test_metric_axioms(self, B, seed):
        if not _valid(B):
            return
        rng = np.random.default_rng(seed)
        d, k = B.shape
        E = make_subspace(B)
        F = make_subspace(rng.standard_normal((d, k)))
        G = make_subspace(rng.standard_normal((d, k)))
        assert gap_distance(E, F) == pytest.approx(gap_distance(F, E), abs=1e-12)
        assert 0.0 <= gap_distance(E, F) <= SQ2 + 1e-12
        assert gap_distance(E, G) <= gap_distance(E, F) + gap_distance(F, G) + 1e-12
        assert gap_distance(E, E) <= 1e-7


class TestSeparationIndex:
    def test_orthogonal_line(self):
        assert separation_index(line(0, 1), line(1, 0)) == pytest.approx(1.0)

    def test_line_against_square_cone(self, square_cone):
        assert separation_index(line(0, 1), square_cone) == pytest.approx(1 / SQ2, abs=1e-9)

    def test_line_inside_cone(self, square_cone):
        assert separation_index(line(1, 0), square_cone) == pytest.approx(0.0, abs=1e-12)

    def test_empty_subspace_raises(self):
        with pytest.raises(EmptySubspace):
            separation_index(zero_subspace(2), line(1, 0))

    @pytest.mark.parametrize("angle", [0.05, 0.4, 1.0, 1.5])
    def test_subspace_target_matches_sine(self, angle):
        F = line(np.cos(angle), np.sin(angle))
        assert subspace_distance(F, line(1, 0)) == pytest.approx(np.sin(angle), abs=1e-12)


class TestSplitting:
    def test_orthogonal_projections(self):
        s = make_splitting(line(1, 0), line(0, 1))
        assert operator_norm(s.proj_E) == pytest.approx(1.0)
        assert operator_norm(s.proj_F) == pytest.approx(1.0)

    def test_oblique_projection_norm(self):
        E, F = line(1, 0), line(1, 1)
        s = make_splitting(E, F)
        np.testing.assert_allclose(s.proj_E, [[1, -1], [0, 0]], atol=1e-14)
        assert operator_norm(s.proj_E) == pytest.approx(SQ2)
        sep = separation_index(E, F)
        assert sep == pytest.approx(1 / SQ2)
        grid = _unit_circle()
        assert np.max(np.linalg.norm(grid @ s.proj_E.T, axis=1)) == pytest.approx(SQ2, abs=1e-6)
        assert operator_norm(s.proj_E) * sep == pytest.approx(1.0, abs=1e-12)

    def test_equal_lines_raise(self):
        with pytest.raises(NotComplementary):
            make_splitting(line(1, 0), line(1, 0))

    def test_wrong_dimensions_raise(self):
        with pytest.raises(NotComplementary):
            make_splitting(line(1, 0, 0), line(0, 1, 0))

    @given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
    def test_projections_resolve_identity(self, d, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, d))
        s = make_splitting(make_subspace(rng.standard_normal((d, k))),
                           make_subspace(rng.standard_normal((d, d - k))))
        np.testing.assert_allclose(s.proj_E + s.proj_F, np.eye(d), atol=1e-8)
        np.testing.assert_allclose(s.proj_E @ s.proj_E, s.proj_E, atol=1e-8)
        np.testing.assert_allclose(s.proj_E @ s.F.basis, 0, atol=1e-8)


class TestOperatorNorm:
    def test_identity(self):
        assert operator_norm(np.eye(2)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert operator_norm(np.diag([2, 0.5])) == pytest.approx(2.0)

    def test_symmetric_uses_top_eigenvalue(self):
        assert operator_norm([[2, 1], [1, 1]]) == pytest.approx((3 + np.sqrt(5)) / 2, rel=1e-14)

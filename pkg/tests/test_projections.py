"""Norm and projection tests, cross-checked against independent oracles.

Oracle layers, from cheapest to strongest:
  * hand-computed values for cases simple enough to verify on paper,
  * a grid scan over the active l1 face for one low-dimensional case,
  * a bisection dual solver for the l1 ball (no sorting involved),
  * SLSQP for the l2 ball,
  * a cvxpy quadratic program for the mixed-norm balls.

The (L1 spatial, L2 temporal) sequence projection is the one combination
implemented as a two-stage scheme rather than an exact projection, so it
is checked for feasibility and consistency properties, not oracle
equality.
"""

import numpy as np
import pytest

from actionraid.errors import InvalidInputError
from actionraid.projections import (
    L1,
    L2,
    NormOrder,
    norm_lp,
    norm_pq,
    project_l1_ball,
    project_l2_ball,
    project_lp_ball,
    project_sequence,
)
from oracles import l1_ball_oracle, l1_grid_oracle_2d, l2_ball_oracle, mixed_ball_oracle

ALL_COMBOS = [(L1, L1), (L1, L2), (L2, L1), (L2, L2)]
EXACT_COMBOS = [(L1, L1), (L2, L1), (L2, L2)]


def random_matrix(rng, max_side=8, scale=10.0):
    m = int(rng.integers(1, max_side + 1))
    h = int(rng.integers(1, max_side + 1))
    return rng.uniform(-scale, scale, size=(m, h))


class TestNormOrder:
    def test_labels_round_trip(self):
        assert NormOrder.from_label("l1") is L1
        assert NormOrder.from_label("L2") is L2
        assert L1.label == "l1" and L2.label == "l2"

    def test_unknown_label_rejected(self):
        with pytest.raises(InvalidInputError):
            NormOrder.from_label("linf")


class TestNormLp:
    def test_pythagorean(self):
        assert norm_lp([3.0, 4.0], L2) == pytest.approx(5.0, abs=1e-12)

    def test_zero_vector(self):
        assert norm_lp([0.0, 0.0, 0.0], L1) == 0.0

    def test_signed_l1(self):
        assert norm_lp([1.0, -2.0, 3.0], L1) == pytest.approx(6.0, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            norm_lp([1.0, np.nan], L1)
        with pytest.raises(InvalidInputError):
            norm_lp([np.inf, 0.0], L2)

    def test_matrix_input_rejected(self):
        with pytest.raises(InvalidInputError):
            norm_lp(np.ones((2, 2)), L2)


class TestNormPq:
    def test_column_norms_summed(self):
        delta = np.array([[3.0, 0.0], [4.0, 0.0]])
        assert norm_pq(delta, outer=L1, inner=L2) == pytest.approx(5.0, abs=1e-12)

    def test_zero_matrix(self):
        for outer, inner in ALL_COMBOS:
            assert norm_pq(np.zeros((3, 2)), outer=outer, inner=inner) == 0.0

    def test_frobenius_of_ones(self):
        assert norm_pq(np.ones((2, 2)), outer=L2, inner=L2) == pytest.approx(2.0, abs=1e-12)

    def test_non_finite_rejected(self):
        bad = np.array([[1.0, np.inf]])
        with pytest.raises(InvalidInputError):
            norm_pq(bad, outer=L1, inner=L1)

    def test_vector_input_rejected(self):
        with pytest.raises(InvalidInputError):
            norm_pq(np.ones(3), outer=L1, inner=L2)


class TestProjectL2Ball:
    def test_interior_point_unchanged(self):
        v = np.array([0.3, 0.1])
        out = project_l2_ball(v, 1.0)
        np.testing.assert_array_equal(out, v)

    def test_rescaled_to_boundary(self):
        np.testing.assert_allclose(project_l2_ball([3.0, 4.0], 1.0), [0.6, 0.8], atol=1e-12)

    def test_zero_radius_and_zero_vector(self):
        np.testing.assert_array_equal(project_l2_ball([0.0, 0.0], 0.5), [0.0, 0.0])
        np.testing.assert_array_equal(project_l2_ball([2.0, -1.0], 0.0), [0.0, 0.0])

    def test_matches_slsqp_oracle(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 5))
            v = rng.uniform(-10, 10, size=n)
            r = float(rng.uniform(0.1, 8.0))
            got = project_l2_ball(v, r)
            want = l2_ball_oracle(v, r)
            assert np.linalg.norm(got - want) < 1e-3

    def test_negative_radius_rejected(self):
        with pytest.raises(InvalidInputError):
            project_l2_ball([1.0], -1.0)


class TestProjectL1Ball:
    def test_interior_point_unchanged(self):
        v = np.array([0.5, -0.3])
        np.testing.assert_array_equal(project_l1_ball(v, 1.0), v)

    def test_single_active_coordinate(self):
        np.testing.assert_allclose(project_l1_ball([2.0, 0.0], 1.0), [1.0, 0.0], atol=1e-12)

    def test_unbalanced_pair_sticks_to_vertex(self):
        # Soft threshold with lam = 1 zeroes the smaller coordinate entirely.
        got = project_l1_ball([3.0, 1.0], 2.0)
        np.testing.assert_allclose(got, [2.0, 0.0], atol=1e-12)
        grid = l1_grid_oracle_2d([3.0, 1.0], 2.0)
        assert np.linalg.norm(got - grid) < 2e-3

    def test_matches_bisection_oracle(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 9))
            v = rng.uniform(-10, 10, size=n)
            r = float(rng.uniform(0.0, 12.0))
            got = project_l1_ball(v, r)
            want = l1_ball_oracle(v, r)
            assert np.linalg.norm(got - want) < 1e-6

    def test_active_projection_lands_on_boundary(self, rng):
        for _ in range(300):
            v = rng.uniform(-10, 10, size=int(rng.integers(1, 9)))
            r = float(rng.uniform(0.05, 0.9)) * norm_lp(v, L1)
            out = project_l1_ball(v, r)
            assert abs(norm_lp(out, L1) - r) < 1e-9 * max(1.0, r)

    def test_permutation_invariance(self, rng):
        for _ in range(200):
            v = rng.uniform(-10, 10, size=6)
            r = float(rng.uniform(0.2, 5.0))
            perm = rng.permutation(6)
            inv = np.argsort(perm)
            direct = project_l1_ball(v, r)
            via_perm = project_l1_ball(v[perm], r)[inv]
            np.testing.assert_allclose(direct, via_perm, atol=1e-12)

    def test_ties_handled(self):
        got = project_l1_ball([1.0, 1.0, 1.0, 0.0], 1.0)
        np.testing.assert_allclose(got, [1 / 3, 1 / 3, 1 / 3, 0.0], atol=1e-12)


class TestProjectLpBallDispatch:
    def test_dispatch(self):
        v = np.array([3.0, 4.0])
        np.testing.assert_allclose(project_lp_ball(v, L2, 1.0), [0.6, 0.8], atol=1e-12)
        np.testing.assert_allclose(project_lp_ball(v, L1, 1.0), [0.0, 1.0], atol=1e-12)


class TestProjectSequence:
    def test_direction_preserving_column_allocation(self):
        delta = np.array([[3.0, 0.0], [4.0, 0.0]])
        got = project_sequence(delta, spatial=L2, temporal=L1, budget=1.0)
        np.testing.assert_allclose(got, [[0.6, 0.0], [0.8, 0.0]], atol=1e-12)

    def test_feasible_input_unchanged(self, rng):
        for spatial, temporal in ALL_COMBOS:
            delta = rng.uniform(-1, 1, size=(3, 4))
            b = norm_pq(delta, outer=temporal, inner=spatial) * 1.01
            np.testing.assert_array_equal(project_sequence(delta, spatial, temporal, b), delta)

    def test_zero_budget_gives_zeros(self, rng):
        delta = rng.uniform(-5, 5, size=(2, 3))
        for spatial, temporal in ALL_COMBOS:
            out = project_sequence(delta, spatial, temporal, 0.0)
            np.testing.assert_array_equal(out, np.zeros_like(delta))

    def test_single_column_reduces_to_spatial_projection(self, rng):
        for _ in range(100):
            col = rng.uniform(-8, 8, size=(int(rng.integers(1, 6)), 1))
            b = float(rng.uniform(0.1, 6.0))
            for spatial in (L1, L2):
                for temporal in (L1, L2):
                    got = project_sequence(col, spatial, temporal, b)
                    want = project_lp_ball(col[:, 0], spatial, b)
                    np.testing.assert_allclose(got[:, 0], want, atol=1e-12)

    def test_flat_l2_consistency(self, rng):
        """(L2, L2) is the Frobenius ball, so the flattened l2 projection applies."""
        for _ in range(100):
            delta = random_matrix(rng, max_side=5)
            b = float(rng.uniform(0.1, 10.0))
            got = project_sequence(delta, L2, L2, b)
            want = project_l2_ball(delta.ravel(), b).reshape(delta.shape)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_flat_l1_consistency(self, rng):
        """(L1, L1) is the plain l1 ball on entries, so flat soft-thresholding applies."""
        for _ in range(100):
            delta = random_matrix(rng, max_side=5)
            b = float(rng.uniform(0.1, 10.0))
            got = project_sequence(delta, L1, L1, b)
            want = project_l1_ball(delta.ravel(), b).reshape(delta.shape)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_three_step_consistency(self, rng):
        """(L2 spatial, L1 temporal) must equal the explicit three-step method."""
        for _ in range(100):
            delta = random_matrix(rng, max_side=5)
            b = float(rng.uniform(0.1, 10.0))
            norms = np.linalg.norm(delta, axis=0)
            budgets = l1_ball_oracle(norms, b)
            want = np.zeros_like(delta)
            for k in range(delta.shape[1]):
                if norms[k] > 0:
                    want[:, k] = delta[:, k] * (budgets[k] / norms[k])
            got = project_sequence(delta, L2, L1, b)
            np.testing.assert_allclose(got, want, atol=1e-8)

    @pytest.mark.parametrize("spatial,temporal", EXACT_COMBOS)
    def test_matches_quadratic_program_oracle(self, spatial, temporal, rng):
        shapes = [(1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (1, 3), (3, 1)]
        for i in range(150):
            delta = rng.uniform(-10, 10, size=shapes[i % len(shapes)])
            b = float(rng.uniform(0.1, 8.0))
            got = project_sequence(delta, spatial, temporal, b)
            want = mixed_ball_oracle(delta, spatial, temporal, b)
            assert np.linalg.norm(got - want) < 1e-3

    def test_two_stage_combo_feasible_and_no_better_than_exact(self, rng):
        """(L1 spatial, L2 temporal) is two-stage: feasible, but at best as close
        to the input as the exact projection computed by the QP oracle."""
        for i in range(60):
            delta = rng.uniform(-10, 10, size=(2, 2))
            b = float(rng.uniform(0.1, 6.0))
            got = project_sequence(delta, L1, L2, b)
            assert norm_pq(got, outer=L2, inner=L1) <= b * (1 + 1e-9)
            want = mixed_ball_oracle(delta, L1, L2, b)
            assert np.linalg.norm(got - delta) >= np.linalg.norm(want - delta) - 1e-6

    def test_feasibility_random(self, rng):
        for _ in range(2500):
            delta = random_matrix(rng)
            b = float(rng.uniform(0.0, 15.0))
            for spatial, temporal in ALL_COMBOS:
                out = project_sequence(delta, spatial, temporal, b)
                assert norm_pq(out, outer=temporal, inner=spatial) <= b * (1 + 1e-9)

    def test_idempotence_random(self, rng):
        for _ in range(800):
            delta = random_matrix(rng)
            b = float(rng.uniform(0.1, 15.0))
            for spatial, temporal in ALL_COMBOS:
                once = project_sequence(delta, spatial, temporal, b)
                twice = project_sequence(once, spatial, temporal, b)
                np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_non_expansiveness_exact_combos(self, rng):
        for _ in range(500):
            shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)))
            x = rng.uniform(-10, 10, size=shape)
            y = rng.uniform(-10, 10, size=shape)
            b = float(rng.uniform(0.1, 10.0))
            for spatial, temporal in EXACT_COMBOS:
                px = project_sequence(x, spatial, temporal, b)
                py = project_sequence(y, spatial, temporal, b)
                assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9

    def test_vector_input_rejected(self):
        with pytest.raises(InvalidInputError):
            project_sequence(np.ones(4), L1, L1, 1.0)

    def test_non_finite_rejected(self):
        bad = np.array([[1.0, np.nan]])
        with pytest.raises(InvalidInputError):
            project_sequence(bad, L2, L2, 1.0)


class TestBallProjectionInvariants:
    """Feasibility / idempotence / non-expansiveness for the vector balls."""

    def test_feasibility_random(self, rng):
        for _ in range(2500):
            v = rng.uniform(-10, 10, size=int(rng.integers(1, 9)))
            r = float(rng.uniform(0.0, 12.0))
            assert norm_lp(project_l1_ball(v, r), L1) <= r * (1 + 1e-9)
            assert norm_lp(project_l2_ball(v, r), L2) <= r * (1 + 1e-9)

    def test_idempotence_random(self, rng):
        for _ in range(1000):
            v = rng.uniform(-10, 10, size=int(rng.integers(1, 9)))
            r = float(rng.uniform(0.1, 12.0))
            for proj in (project_l1_ball, project_l2_ball):
                once = proj(v, r)
                np.testing.assert_allclose(proj(once, r), once, atol=1e-12)

    def test_non_expansiveness_random(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            x = rng.uniform(-10, 10, size=n)
            y = rng.uniform(-10, 10, size=n)
            r = float(rng.uniform(0.1, 12.0))
            for proj in (project_l1_ball, project_l2_ball):
                assert np.linalg.norm(proj(x, r) - proj(y, r)) <= np.linalg.norm(x - y) + 1e-9

"""Tests for the planar limit system of the sphere factor."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.errors import PreconditionError, SpecError
from conelab.models import ProblemSpec
from conelab.soliton import make_rhs
from conelab.subsystem import (
    SubState,
    box_preservation_check,
    embed_substate,
    fixed_points,
    rhs_sub,
    saddle_eigen,
    sub_rcal,
    unstable_trajectory,
)


class TestFixedPoints:
    """Tests for the fixed points and their linearization."""

    @pytest.mark.parametrize('d', [2, 3, 5])
    def test_fixed_points_are_stationary(self, d):
        for point in fixed_points(d):
            assert_allclose(rhs_sub(d, point), [0.0, 0.0], atol=1e-15)

    @pytest.mark.parametrize('d', [2, 3, 4])
    def test_saddle_eigenvalues(self, d):
        eig_data = saddle_eigen(d)
        assert eig_data.mismatch < 1e-12
        low, high = eig_data.closed_form
        assert low < 0 < high
        v = eig_data.unstable_vector
        assert_allclose(eig_data.jacobian @ v, high * v, atol=1e-14)

    def test_jacobian_matches_finite_difference(self):
        d = 3
        point = np.array([1.0 / d, 1.0 / d])
        h = 1e-7
        columns = [(rhs_sub(d, point + h * e) - rhs_sub(d, point - h * e)) / (2 * h)
                   for e in np.eye(2)]
        assert_allclose(np.column_stack(columns), saddle_eigen(d).jacobian, atol=1e-7)

    def test_dimension_must_be_at_least_two(self):
        with pytest.raises(SpecError):
            saddle_eigen(1)


class TestEmbedding:
    """The planar system is the restriction of the full field."""

    def test_restriction(self):
        spec = ProblemSpec(d=(3, 1), mu=(2, 0))
        sub = SubState(X=0.2, Y=0.1, d=3)
        vec = embed_substate(spec, sub).to_vector()
        full = make_rhs(spec)(0.0, vec)
        assert_allclose(full[[1, 1 + spec.r]], rhs_sub(3, sub), atol=1e-15)
        assert full[0] == 0.0

    def test_dimension_mismatch(self, problem):
        with pytest.raises(SpecError):
            embed_substate(problem, SubState(X=0.1, Y=0.1, d=3))


class TestUnstableTrajectory:
    """Tests for unstable_trajectory function."""

    @pytest.mark.parametrize('d', [2, 3, 5])
    def test_ratio_limit(self, d):
        traj = unstable_trajectory(d)
        assert traj.event == 'component-floor'
        assert traj.flags == []
        limits = traj.limits()
        assert limits['ratio_limit'] == pytest.approx(d - 1, rel=1e-5)
        assert limits['second_limit'] == pytest.approx(2 * (d - 1) ** 2, rel=1e-2)

    @pytest.mark.parametrize('d', [2, 5])
    def test_limits_independent_of_offset(self, d):
        coarse = unstable_trajectory(d, offset=2e-8).limits()
        fine = unstable_trajectory(d, offset=1e-8).limits()
        assert fine['ratio_limit'] == pytest.approx(coarse['ratio_limit'], rel=1e-6)
        assert fine['second_limit'] == pytest.approx(coarse['second_limit'], rel=1e-3)

    def test_stays_in_box(self):
        traj = unstable_trajectory(2)
        assert np.all((traj.x > 0) & (traj.x < 0.5))
        assert np.all((traj.y > 0) & (traj.y < 0.5))

    def test_rcal_sub(self):
        assert sub_rcal(2, 0.5, 0.5) == pytest.approx(2 - 1.5 - 0.5)

    def test_nonpositive_offset(self):
        with pytest.raises(PreconditionError):
            unstable_trajectory(2, offset=0.0)

    def test_offset_outside_box(self):
        with pytest.raises(PreconditionError):
            unstable_trajectory(2, offset=1.0)


class TestBoxPreservation:
    """Tests for box_preservation_check function."""

    def test_interior_state_decays(self):
        report = box_preservation_check(2, SubState(X=0.2, Y=0.2, d=2))
        assert report.contained
        assert report.decayed
        assert report.passed

    def test_saddle_corner_stays_fixed(self):
        report = box_preservation_check(2, (0.5, 0.5), horizon=50.0)
        assert report.stayed_fixed
        assert report.passed

    def test_outside_state_rejected(self):
        with pytest.raises(PreconditionError):
            box_preservation_check(2, (0.6, 0.1))

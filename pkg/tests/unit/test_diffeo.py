"""
Unit tests for diffeomorphism families and tensor push-forward.
"""

import numpy as np
import pytest

from core.conductivity import AnisoTensor
from core.diffeo import (
    BumpShift,
    DiffeoInvalid,
    IdentityDiffeo,
    LinearShear,
    Twist,
    diffeo_from_spec,
    pushed_field,
    pushforward,
)
from core.ndmap import NotBoundaryFixing, check_boundary_fixing
from models.specs import DiffeoSpec
from tests.utils.builders import TOP_TENSOR

CENTER = [0.0, 0.0, 0.5]


def interior_points(n: int = 50, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array(CENTER) + rng.uniform(-0.3, 0.3, size=(n, 3))


def numeric_jacobian(psi, x, step=1e-6):
    jac = np.zeros((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        jac[:, j] = (psi.apply(x + e)[0] - psi.apply(x - e)[0]) / (2 * step)
    return jac


class TestFamilies:
    def test_identity(self):
        pts = interior_points()
        psi = IdentityDiffeo()
        assert np.array_equal(psi.apply(pts), pts)
        assert np.allclose(psi.det_jacobian(pts), 1.0)

    def test_bump_inverse_round_trip(self):
        psi = BumpShift(CENTER, 0.35, 0.1, [1.0, 0.0, 0.0])
        pts = interior_points()
        assert np.allclose(psi.inverse(psi.apply(pts)), pts, atol=1e-11)
        assert np.all(psi.det_jacobian(pts) > 0)

    def test_bump_jacobian_matches_finite_differences(self):
        psi = BumpShift(CENTER, 0.35, 0.1, [1.0, 1.0, 0.0])
        x = np.array([0.1, -0.05, 0.55])
        assert np.allclose(psi.jacobian(x)[0], numeric_jacobian(psi, x), atol=1e-7)

    def test_bump_amplitude_bound(self):
        with pytest.raises(DiffeoInvalid):
            BumpShift(CENTER, 0.3, 0.3 / 1.7, [1.0, 0.0, 0.0])

    def test_bump_is_identity_outside_support(self):
        psi = BumpShift(CENTER, 0.35, 0.1, [1.0, 0.0, 0.0])
        far = np.array([[0.9, 0.0, 0.1], [0.0, 0.0, 0.0]])
        assert np.array_equal(psi.apply(far), far)

    def test_twist_preserves_volume(self):
        psi = Twist(CENTER, 0.35, 0.5)
        pts = interior_points()
        assert np.allclose(psi.det_jacobian(pts), 1.0, atol=1e-12)
        x = np.array([0.1, 0.05, 0.45])
        assert np.allclose(psi.jacobian(x)[0], numeric_jacobian(psi, x), atol=1e-7)

    def test_twist_stays_invertible_at_large_amplitude(self):
        psi = Twist(CENTER, 0.35, 25.0)
        pts = interior_points(200, seed=4)
        assert np.allclose(psi.det_jacobian(pts), 1.0, atol=1e-9)
        mapped = psi.apply(pts)
        radii = np.linalg.norm(pts - CENTER, axis=1)
        assert np.allclose(np.linalg.norm(mapped - CENTER, axis=1), radii, atol=1e-12)
        assert np.allclose(psi.inverse(mapped), pts, atol=1e-12)
        assert np.allclose(psi.apply(psi.inverse(pts)), pts, atol=1e-12)

    def test_shear_closed_form_inverse(self):
        psi = LinearShear(0.2, [1.0, 0.0, 0.0], base_height=0.5)
        pts = interior_points()
        assert np.allclose(psi.inverse(psi.apply(pts)), pts, atol=1e-14)
        assert not psi.boundary_fixing

    def test_composition(self):
        a = BumpShift(CENTER, 0.35, 0.05, [1.0, 0.0, 0.0])
        b = Twist(CENTER, 0.35, 0.3)
        psi = a.then(b)
        x = np.array([0.05, 0.05, 0.5])
        assert np.allclose(psi.apply(x), b.apply(a.apply(x)))
        assert np.allclose(psi.jacobian(x)[0], numeric_jacobian(psi, x), atol=1e-7)
        assert np.allclose(psi.inverse(psi.apply(x)), x, atol=1e-11)

    def test_from_spec(self):
        psi = diffeo_from_spec(DiffeoSpec(family="twist", amplitude=0.2))
        assert psi.name == "twist"


class TestPushforward:
    def test_identity_push_is_noop(self):
        sigma = AnisoTensor.from_entries(TOP_TENSOR)
        pushed = pushforward(sigma, IdentityDiffeo(), np.array(CENTER))
        assert np.allclose(pushed, sigma.matrix)

    def test_push_is_symmetric_positive(self):
        sigma = AnisoTensor.from_entries(TOP_TENSOR)
        psi = BumpShift(CENTER, 0.35, 0.1, [0.0, 1.0, 0.0])
        pushed = pushforward(sigma, psi, interior_points())
        assert np.allclose(pushed, np.transpose(pushed, (0, 2, 1)))
        assert np.all(np.linalg.eigvalsh(pushed)[:, 0] > 0)

    def test_push_of_isotropic_under_shear(self):
        psi = LinearShear(0.2, [1.0, 0.0, 0.0])
        pushed = pushforward(AnisoTensor.isotropic(), psi, np.array([0.0, 0.0, 0.3]))
        jac = psi.jacobian(np.zeros(3))[0]
        assert np.allclose(pushed, jac @ jac.T)

    def test_pushes_compose(self):
        sigma = AnisoTensor.from_entries(TOP_TENSOR)
        a = BumpShift(CENTER, 0.35, 0.05, [1.0, 0.0, 0.0])
        b = Twist(CENTER, 0.35, 0.3)
        pts = interior_points(10)
        twice = pushforward(pushed_field(sigma, a), b, pts)
        once = pushforward(sigma, a.then(b), pts)
        assert np.allclose(twice, once, atol=1e-10)


class TestBoundaryFixing:
    def test_bump_fixes_boundary(self, unit_mesh):
        check_boundary_fixing(unit_mesh, BumpShift(CENTER, 0.35, 0.1, [1.0, 0.0, 0.0]))

    def test_shear_rejected(self, unit_mesh):
        with pytest.raises(NotBoundaryFixing):
            check_boundary_fixing(unit_mesh, LinearShear(0.1, [1.0, 0.0, 0.0]))

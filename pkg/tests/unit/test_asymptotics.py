"""
Unit tests for the boundary kernel asymptotics fit.
"""

import numpy as np
import pytest

from core.asymptotics import fit_tangential_form, kernel_asymptotics_demo
from core.forward import ProbeUnderResolved
from core.mesher import mesh_region
from tests.utils.builders import FINE_H, PATCH_RADIUS


@pytest.fixture(scope="module")
def fine_mesh(two_layer_region):
    return mesh_region(two_layer_region, FINE_H, sublayers=2)


class TestTangentialFormFit:
    def test_exact_form_recovered(self):
        rng = np.random.default_rng(2)
        radius = rng.uniform(0.1, 0.4, 200)
        angle = rng.uniform(0.0, 2.0 * np.pi, 200)
        xi = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        form = np.array([[4.0, 1.0], [1.0, 9.0]])
        values = 0.3 + xi @ np.array([0.2, -0.1]) + 1.0 / np.sqrt(np.einsum("ni,ij,nj->n", xi, form, xi))
        assert np.allclose(fit_tangential_form(xi, values), form, rtol=1e-6)


class TestKernelProbe:
    def test_rows_are_positive_forms(self, fine_mesh, two_layer_model):
        rows = kernel_asymptotics_demo(fine_mesh, two_layer_model, [0.0, 0.0], [0.25], PATCH_RADIUS)
        assert len(rows) == 1
        row = rows[0]
        assert row.samples >= 8
        assert np.all(np.linalg.eigvalsh(row.fitted_form) > 0)
        assert np.allclose(row.reference_form, row.reference_form.T)
        assert 0.0 <= row.axis_angle_deg <= 90.0
        assert row.condition >= 1.0

    def test_radii_processed_largest_first(self, fine_mesh, two_layer_model):
        rows = kernel_asymptotics_demo(fine_mesh, two_layer_model, [0.0, 0.0], [0.25, 0.3], PATCH_RADIUS)
        assert [r.radius for r in rows] == [0.3, 0.25]

    def test_radius_too_small(self, fine_mesh, two_layer_model):
        with pytest.raises(ProbeUnderResolved):
            kernel_asymptotics_demo(fine_mesh, two_layer_model, [0.0, 0.0], [0.02], PATCH_RADIUS)

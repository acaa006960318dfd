"""
Unit tests for the interface-conforming prism-extrusion mesher.
"""

import numpy as np
import pytest

from core.mesher import FacetTag, ResolutionTooCoarse, check_mesh, interface_facets, mesh_region, triangulate_footprint
from tests.utils.builders import PATCH_RADIUS, UNIT_H, flat_region, make_region


def footprint_area(region, h):
    pts, triangles = triangulate_footprint(region, h)
    p = pts[triangles]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (
        p[:, 2, 0] - p[:, 0, 0]
    )
    return 0.5 * float(cross.sum()), cross


class TestMeshStructure:
    """Structural invariants of the extruded mesh."""

    def test_mesh_passes_checks(self, unit_mesh, two_layer_region):
        check_mesh(unit_mesh, two_layer_region)
        assert unit_mesh.layer_count == 2
        assert set(np.unique(unit_mesh.region_tags).tolist()) == {1, 2}
        print(f"✅ Mesh with {unit_mesh.n_vertices} vertices and {unit_mesh.n_tets} tets is valid")

    def test_footprint_triangles_are_counter_clockwise(self, two_layer_region):
        _, cross = footprint_area(two_layer_region, UNIT_H)
        assert np.all(cross > 0)

    def test_volume_is_footprint_area_times_height(self, unit_mesh, two_layer_region):
        area, _ = footprint_area(two_layer_region, UNIT_H)
        assert unit_mesh.tet_volumes.sum() == pytest.approx(area * 1.0, rel=1e-12)

    def test_all_volumes_positive(self, unit_mesh):
        assert unit_mesh.tet_volumes.min() > 0

    def test_outward_normals_unit(self, unit_mesh):
        assert np.allclose(np.linalg.norm(unit_mesh.outward_normals, axis=1), 1.0, atol=1e-12)

    def test_boundary_is_closed(self, unit_mesh):
        total = unit_mesh.outward_normals.T @ unit_mesh.facet_areas
        assert np.allclose(total, 0.0, atol=1e-12)

    def test_sigma_facets_on_top_inside_patch(self, unit_mesh):
        sigma = unit_mesh.sigma_facets
        assert sigma.size > 0
        assert np.all(unit_mesh.facet_tags[sigma] == FacetTag.SIGMA)
        centroids = unit_mesh.facet_centroids[sigma]
        assert np.allclose(centroids[:, 2], 0.0)
        assert np.all(np.hypot(centroids[:, 0], centroids[:, 1]) <= PATCH_RADIUS)
        assert np.allclose(unit_mesh.outward_normals[sigma], [0.0, 0.0, -1.0])

    def test_mesh_id_is_deterministic(self, two_layer_region, unit_mesh):
        again = mesh_region(two_layer_region, UNIT_H, sublayers=2)
        assert again.mesh_id == unit_mesh.mesh_id
        assert again.same_topology(unit_mesh)


class TestInterfaceConformity:
    """Interfaces are unions of mesh facets."""

    def test_interface_facets_lie_on_interface(self, unit_mesh, two_layer_region):
        faces, ks = interface_facets(unit_mesh)
        assert faces.shape[0] > 0
        assert np.all(ks == 1)
        pts = unit_mesh.vertices[np.unique(faces)]
        heights = two_layer_region.interfaces[0].evaluate(pts[:, 0], pts[:, 1])
        assert np.allclose(pts[:, 2], heights, atol=1e-14)

    def test_tags_match_geometry_for_flat_interface(self):
        region = flat_region(0.5)
        mesh = mesh_region(region, UNIT_H)
        assert np.array_equal(region.layer_of(mesh.tet_centroids), mesh.region_tags)

    def test_explicit_sublayers(self, two_layer_region):
        mesh = mesh_region(two_layer_region, UNIT_H, sublayers=[1, 3])
        assert mesh.level_count == 5
        assert np.sum(mesh.region_tags == 2) == 3 * np.sum(mesh.region_tags == 1)

    def test_square_footprint_mesh(self):
        region = make_region([{"offset": 0.5, "modes": [(1, 1, 0.05)]}], footprint="square")
        mesh = mesh_region(region, UNIT_H)
        check_mesh(mesh, region)
        assert mesh.tet_volumes.sum() == pytest.approx(4.0, rel=1e-12)


class TestResolution:
    def test_too_coarse(self, two_layer_region):
        with pytest.raises(ResolutionTooCoarse):
            mesh_region(two_layer_region, 0.6)

    def test_check_can_be_disabled(self, two_layer_region):
        mesh = mesh_region(two_layer_region, 0.6, sublayers=1, check_resolution=False)
        assert mesh.layer_count == 2

    def test_invalid_h(self, two_layer_region):
        with pytest.raises(ValueError):
            mesh_region(two_layer_region, 0.0)

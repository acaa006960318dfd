"""
Unit tests for the flux basis, N-D matrices, the discrete Alessandrini
identity and the gauge counterexample.
"""

import numpy as np
import pytest

from core.conductivity import AnisoTensor, StrataModel, random_spd
from core.diffeo import BumpShift, IdentityDiffeo
from core.geometry import split_stratum
from core.mesher import mesh_region
from core.ndmap import (
    BasisDegenerate,
    BasisMismatch,
    MeshMismatch,
    alessandrini_gap,
    build_flux_basis,
    build_nd,
    converges_under_refinement,
    distinguishability,
    facet_groups,
    gauge_counterexample_gap,
    global_pairing,
    potentials_for,
    restrict_to_patch,
    stabilizes_under_refinement,
)
from tests.utils.builders import (
    BASIS_RINGS,
    BASIS_SECTORS,
    FINE_H,
    PATCH_RADIUS,
    UNIT_H,
    flat_region,
    make_model,
    make_region,
)


def random_model(region, rng) -> StrataModel:
    return StrataModel(
        region=region, tensors=tuple(random_spd(rng) for _ in range(region.layer_count)), jump_tolerance=0.0
    )


class TestFluxBasis:
    def test_patterns_have_zero_net_flux(self, unit_mesh, unit_basis):
        totals = unit_basis.patterns @ unit_mesh.facet_areas
        assert np.allclose(totals, 0.0, atol=1e-12)
        assert unit_basis.size >= 4

    def test_patterns_supported_on_sigma(self, unit_mesh, unit_basis):
        off_sigma = np.setdiff1d(np.arange(unit_mesh.boundary_facets.shape[0]), unit_mesh.sigma_facets)
        assert np.all(unit_basis.patterns[:, off_sigma] == 0.0)

    def test_groups_partition_sigma(self, unit_mesh):
        groups = facet_groups(unit_mesh, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS)
        assert np.array_equal(groups.sum(axis=0), np.ones(unit_mesh.sigma_facets.size))

    def test_gram_well_conditioned(self, unit_mesh, unit_basis):
        assert np.linalg.cond(unit_basis.gram(unit_mesh)) < 1e8

    def test_basis_id_is_geometric(self, unit_mesh, unit_basis, two_layer_region):
        again = build_flux_basis(unit_mesh, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS)
        assert again.basis_id == unit_basis.basis_id
        fine = mesh_region(two_layer_region, FINE_H, sublayers=2)
        assert build_flux_basis(fine, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS).basis_id != unit_basis.basis_id

    def test_extend_appends(self, unit_mesh, unit_basis):
        sigma = unit_mesh.sigma_facets
        x = unit_mesh.facet_centroids[sigma, 0]
        areas = unit_mesh.facet_areas[sigma]
        extra = np.zeros(unit_mesh.boundary_facets.shape[0])
        extra[sigma] = x - (areas @ x) / areas.sum()
        extended = unit_basis.extend(unit_mesh, extra)
        assert extended.size == unit_basis.size + 1
        assert np.array_equal(extended.patterns[: unit_basis.size], unit_basis.patterns)
        assert extended.basis_id != unit_basis.basis_id

    def test_extended_basis_keeps_nd_as_principal_submatrix(self, unit_mesh, two_layer_model, unit_basis):
        sigma = unit_mesh.sigma_facets
        y = unit_mesh.facet_centroids[sigma, 1]
        areas = unit_mesh.facet_areas[sigma]
        extra = np.zeros(unit_mesh.boundary_facets.shape[0])
        extra[sigma] = y - (areas @ y) / areas.sum()
        extended = unit_basis.extend(unit_mesh, extra)

        coarse = build_nd(unit_mesh, two_layer_model, unit_basis).values
        fine = build_nd(unit_mesh, two_layer_model, extended).values
        m = unit_basis.size
        assert fine.shape == (m + 1, m + 1)
        assert np.linalg.norm(fine[:m, :m] - coarse) <= 1e-12 * np.linalg.norm(coarse)

    def test_duplicate_pattern_is_degenerate(self, unit_mesh, unit_basis):
        with pytest.raises(BasisDegenerate):
            unit_basis.extend(unit_mesh, unit_basis.patterns[0])


class TestNDMatrix:
    def test_symmetric_positive_definite(self, unit_mesh, two_layer_model, unit_basis):
        nd = build_nd(unit_mesh, two_layer_model, unit_basis)
        assert nd.size == unit_basis.size
        assert nd.symmetry_error() <= 1e-10
        assert nd.eigenvalues()[0] > 0
        assert nd.basis_id == unit_basis.basis_id
        print(f"✅ N-D matrix {nd.size}x{nd.size}, symmetry error {nd.symmetry_error():.2e}")

    def test_local_pairing_matches_global(self, unit_mesh, two_layer_model, unit_basis):
        _, potentials = potentials_for(unit_mesh, two_layer_model, unit_basis)
        local = restrict_to_patch(unit_mesh, unit_basis, potentials)
        full = global_pairing(unit_mesh, unit_basis, potentials)
        assert np.linalg.norm(local - full) <= 1e-12 * np.linalg.norm(full)

    def test_scaling_inverts_nd(self, unit_mesh, two_layer_model, unit_basis):
        nd = build_nd(unit_mesh, two_layer_model, unit_basis)
        nd2 = build_nd(unit_mesh, two_layer_model.scaled(2.0), unit_basis)
        assert np.allclose(nd2.values, 0.5 * nd.values, rtol=1e-9, atol=1e-12 * np.abs(nd.values).max())

    def test_threads_do_not_change_result(self, unit_mesh, two_layer_model, unit_basis):
        serial = build_nd(unit_mesh, two_layer_model, unit_basis)
        threaded = build_nd(unit_mesh, two_layer_model, unit_basis, threads=4)
        assert np.array_equal(serial.values, threaded.values)

    def test_distinguishability(self, unit_mesh, two_layer_model, unit_basis):
        nd = build_nd(unit_mesh, two_layer_model, unit_basis)
        other = build_nd(unit_mesh, two_layer_model.scaled(1.5), unit_basis)
        assert distinguishability(nd, nd) == 0.0
        assert distinguishability(nd, other) == pytest.approx(1.0 / 3.0, rel=1e-8)

    def test_basis_from_other_mesh(self, two_layer_region, two_layer_model, unit_basis):
        fine = mesh_region(two_layer_region, FINE_H, sublayers=2)
        with pytest.raises(BasisMismatch):
            build_nd(fine, two_layer_model, unit_basis)

    def test_invisible_interface(self, two_layer_region, two_layer_model):
        split = split_stratum(two_layer_region, 2)
        split_model = StrataModel(
            region=split,
            tensors=two_layer_model.tensors + (two_layer_model.tensors[-1],),
            jump_tolerance=0.0,
        )
        mesh = mesh_region(split, UNIT_H, sublayers=1, check_resolution=False)
        basis = build_flux_basis(mesh, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS)
        original = two_layer_model.element_tensors(two_layer_region.layer_of(mesh.tet_centroids))
        gap = distinguishability(build_nd(mesh, split_model, basis), build_nd(mesh, original, basis))
        assert gap <= 1e-10


class TestAlessandrini:
    def test_identity_holds_for_random_pairs(self, unit_mesh, two_layer_region, unit_basis):
        rng = np.random.default_rng(11)
        for _ in range(3):
            gap = alessandrini_gap(
                unit_mesh, random_model(two_layer_region, rng), random_model(two_layer_region, rng), unit_basis
            )
            assert gap.residual <= 1e-9
        print("✅ Discrete Alessandrini identity holds")

    @pytest.mark.slow
    def test_identity_holds_for_twenty_seeded_pairs(self, unit_mesh, two_layer_region, unit_basis):
        rng = np.random.default_rng(2024)
        residuals = []
        for _ in range(20):
            gap = alessandrini_gap(
                unit_mesh, random_model(two_layer_region, rng), random_model(two_layer_region, rng), unit_basis
            )
            residuals.append(gap.residual)
        assert max(residuals) <= 1e-9
        print(f"✅ Alessandrini identity over 20 pairs, worst residual {max(residuals):.2e}")

    def test_scaled_model_matches_energy_closed_form(self, unit_mesh, two_layer_model, unit_basis):
        c = 2.5
        sys, u = potentials_for(unit_mesh, two_layer_model, unit_basis)
        cross_energy = u @ (sys.matrix @ u.T)
        expected = (1.0 - c) / c * cross_energy

        gap = alessandrini_gap(unit_mesh, two_layer_model, two_layer_model.scaled(c), unit_basis)
        scale = np.linalg.norm(expected)
        assert np.linalg.norm(gap.rhs - expected) <= 1e-9 * scale
        assert np.linalg.norm(gap.lhs - expected) <= 1e-9 * scale
        assert gap.residual <= 1e-9

    def test_same_model_has_zero_sides(self, unit_mesh, two_layer_model, unit_basis):
        gap = alessandrini_gap(unit_mesh, two_layer_model, two_layer_model, unit_basis)
        assert np.all(gap.lhs == 0.0)
        assert np.all(gap.rhs == 0.0)

    def test_mismatched_model(self, unit_mesh, two_layer_model, unit_basis):
        region = split_stratum(two_layer_model.region, 2)
        three = make_model(region)
        with pytest.raises(MeshMismatch):
            alessandrini_gap(unit_mesh, two_layer_model, three, unit_basis)


class TestGauge:
    def test_identity_gap_vanishes(self, unit_mesh, two_layer_model, unit_basis):
        assert gauge_counterexample_gap(unit_mesh, two_layer_model, IdentityDiffeo(), unit_basis) <= 1e-10

    def test_constant_tensor_gap_is_small(self, unit_mesh, unit_basis):
        psi = BumpShift([0.0, 0.0, 0.5], 0.35, 0.1, [1.0, 0.0, 0.0])
        gap = gauge_counterexample_gap(unit_mesh, AnisoTensor.isotropic(), psi, unit_basis)
        assert 0.0 < gap < 0.5

    def test_convergence_verdict(self):
        assert converges_under_refinement([1e-2, 4e-3, 1.5e-3], [0.4, 0.375], 0.7, 1e-9)
        assert not converges_under_refinement([1e-2, 8e-3, 1.5e-3], [0.8, 0.1875], 0.7, 1e-9)
        assert converges_under_refinement([1e-11, 2e-11], [2.0], 0.7, 1e-9)
        assert converges_under_refinement([1e-11], [], 0.7, 1e-9)
        assert not converges_under_refinement([1e-2], [], 0.7, 1e-9)

    def test_stabilization_verdict(self):
        assert stabilizes_under_refinement([3e-2, 2e-2, 1.8e-2], [0.67, 0.9], 0.7, 1e-9)
        assert not stabilizes_under_refinement([3e-2, 1.5e-2, 7e-3], [0.5, 0.47], 0.7, 1e-9)
        assert not stabilizes_under_refinement([1e-10, 1e-10], [1.0], 0.7, 1e-9)
        assert not stabilizes_under_refinement([3e-2], [], 0.7, 1e-9)

    @pytest.mark.slow
    def test_flat_gap_converges_and_sloped_gap_stabilizes(self):
        psi = BumpShift([0.5, 0.0, 0.4], 0.35, 0.15, [1.0, 0.0, 0.0])
        flat = make_model(flat_region(0.4), [[1, 0, 0, 1, 0, 1], [2, 0, 0, 2, 0, 1]])
        sloped = make_model(
            make_region([{"offset": 0.4, "modes": [(1, 0, 0.15)]}]), [[1, 0, 0, 1, 0, 1], [5, 0, 0, 5, 0, 5]]
        )
        floor = 1e3 * 1e-12

        def series(model):
            gaps = []
            for h in (UNIT_H, FINE_H, FINE_H / 2):
                mesh = mesh_region(model.region, h)
                basis = build_flux_basis(mesh, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS)
                gaps.append(gauge_counterexample_gap(mesh, model, psi, basis))
            return gaps, [b / a for a, b in zip(gaps, gaps[1:])]

        flat_gaps, flat_ratios = series(flat)
        assert all(r <= 0.7 for r in flat_ratios)
        assert converges_under_refinement(flat_gaps, flat_ratios, 0.7, floor)

        sloped_gaps, sloped_ratios = series(sloped)
        assert min(sloped_gaps) >= floor
        assert sloped_ratios[-1] > 0.7
        assert sloped_gaps[-1] > flat_gaps[-1]
        print(f"✅ Gauge gaps flat {flat_gaps} ratios {flat_ratios}; sloped {sloped_gaps} ratios {sloped_ratios}")

"""
Unit tests for the experiment configuration models.
"""

import pytest
from pydantic import ValidationError

from models.specs import DiffeoSpec, ExperimentSpec, InterfaceSpec, MeshSpec, ModelSpec
from tests.utils.builders import region_payload, region_spec


class TestInterfaceSpec:
    def test_modes_accept_cosine_triples(self):
        spec = InterfaceSpec(offset=0.5, modes=[[1, 0, 0.05], [0, 2, -0.01]])
        assert spec.modes == [(1, 0, 0.05), (0, 2, -0.01)]

    @pytest.mark.parametrize(
        "modes",
        [[[0, 0, 0.1]], [[-1, 0, 0.1]], [[1, 0, 0.1], [1, 0, 0.2]]],
        ids=["offset_mode", "negative_index", "duplicate"],
    )
    def test_bad_modes_rejected(self, modes):
        with pytest.raises(ValidationError):
            InterfaceSpec(offset=0.5, modes=modes)


class TestRegionAndModelSpecs:
    def test_patch_must_fit_footprint(self):
        with pytest.raises(ValidationError, match="sigma_patch_radius"):
            region_spec(sigma_patch_radius=1.0)

    def test_tensor_needs_six_entries(self):
        with pytest.raises(ValidationError, match="6 entries"):
            ModelSpec(tensors=[[1, 0, 0, 1, 0]])

    def test_sublayers_positive(self):
        with pytest.raises(ValidationError):
            MeshSpec(h=0.1, sublayers=[2, 0])

    def test_diffeo_vectors_are_three_dimensional(self):
        with pytest.raises(ValidationError):
            DiffeoSpec(family="bump_shift", direction=[1.0, 0.0])


class TestExperimentSpec:
    def test_forward_requires_model_and_mesh(self):
        with pytest.raises(ValidationError, match="model, mesh"):
            ExperimentSpec(command="forward", region=region_payload())

    def test_gauge_requires_diffeo(self):
        with pytest.raises(ValidationError, match="diffeo"):
            ExperimentSpec(
                command="gauge",
                region=region_payload(),
                model={"tensors": [[1, 0, 0, 1, 0, 1]] * 2},
                resolutions=[0.25],
            )

    def test_invert_needs_truth_or_data(self):
        with pytest.raises(ValidationError, match="data_csv"):
            ExperimentSpec(command="invert", region=region_payload(), mesh={"h": 0.25}, inversion={})

    def test_tangent_needs_no_sections(self):
        spec = ExperimentSpec(command="tangent", trials=5, seed=3)
        assert spec.randomized
        assert spec.basis.rings == 3 and spec.basis.base_sectors == 5

    def test_randomized_commands(self):
        spec = ExperimentSpec(
            command="ndmap",
            region=region_payload(),
            model={"tensors": [[1, 0, 0, 1, 0, 1]] * 2},
            mesh={"h": 0.25},
        )
        assert not spec.randomized

    def test_unknown_command(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(command="simulate")
        print("✅ Unknown command rejected")

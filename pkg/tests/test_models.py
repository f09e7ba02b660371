import numpy as np
import pytest
import torch

from phasekit.errors import ConfigurationError, CorruptCheckpointError, ValidationError
from phasekit.models import (
    ModelSpec,
    build_model,
    forward,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)

SMALL = ModelSpec(depth=2, base_width=8, rng_seed=0)


class TestSpec:
    def test_rejects_shallow_depth(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(depth=1)

    def test_rejects_unknown_heads(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(output_heads=("phase", "refractive_index"))

    def test_json_round_trip(self):
        spec = ModelSpec(input_channels=3, output_heads=("phase", "amplitude"), depth=3)
        assert ModelSpec.from_json_dict(spec.to_json_dict()) == spec

    def test_parameter_count_frozen_for_default_spec(self):
        # pure function of the spec; value frozen at first build
        assert parameter_count(ModelSpec()) == 7243169


class TestBuildAndForward:
    def test_output_shape_and_phase_range(self):
        spec = ModelSpec(depth=4, base_width=32, rng_seed=1)
        model = build_model(spec)
        out = forward(model, torch.rand(1, 1, 256, 256) * 50 - 25)
        phase = out["phase"]
        assert phase.shape == (1, 1, 256, 256)
        lo, hi = spec.phase_range
        assert float(phase.min()) >= lo and float(phase.max()) <= hi

    def test_dual_head_shapes_and_ranges(self):
        spec = ModelSpec(
            depth=2, base_width=8, output_heads=("phase", "amplitude"), rng_seed=2
        )
        model = build_model(spec)
        out = forward(model, torch.rand(2, 1, 64, 64) * 10)
        assert set(out) == {"phase", "amplitude"}
        amp = out["amplitude"]
        assert amp.shape == (2, 1, 64, 64)
        assert float(amp.min()) >= 0.0 and float(amp.max()) <= 1.0

    def test_bounds_hold_for_extreme_inputs(self):
        model = build_model(SMALL)
        wild = torch.full((1, 1, 32, 32), 1e6)
        out = forward(model, wild)["phase"]
        lo, hi = SMALL.phase_range
        assert torch.isfinite(out).all()
        assert float(out.min()) >= lo and float(out.max()) <= hi

    def test_same_seed_same_weights_and_forward(self):
        a = build_model(SMALL)
        b = build_model(SMALL)
        for (ka, ta), (kb, tb) in zip(
            sorted(a.state_dict().items()), sorted(b.state_dict().items())
        ):
            assert ka == kb and torch.equal(ta, tb)
        x = torch.rand(1, 1, 32, 32)
        assert torch.equal(forward(a, x)["phase"], forward(b, x)["phase"])

    def test_different_seed_differs(self):
        a = build_model(SMALL)
        b = build_model(ModelSpec(depth=2, base_width=8, rng_seed=99))
        assert not torch.equal(
            a.state_dict()["encoders.0.body.0.weight"],
            b.state_dict()["encoders.0.body.0.weight"],
        )

    def test_grid_not_divisible_by_depth_errors(self):
        model = build_model(ModelSpec(depth=4, base_width=8))
        with pytest.raises(ConfigurationError):
            forward(model, torch.rand(1, 1, 24, 24))

    def test_channel_mismatch_errors(self):
        model = build_model(SMALL)
        with pytest.raises(ValidationError):
            forward(model, torch.rand(1, 3, 32, 32))

    def test_zeroed_final_layer_gives_midrange_constant(self):
        model = build_model(SMALL)
        with torch.no_grad():
            model.decoders["phase"].head.weight.zero_()
            model.decoders["phase"].head.bias.zero_()
        out = forward(model, torch.rand(1, 1, 32, 32))["phase"]
        lo, hi = SMALL.phase_range
        expected = lo + 0.5 * (hi - lo)  # sigmoid(0) = 0.5
        assert torch.allclose(out, torch.full_like(out, expected))

    def test_no_cross_batch_leakage(self):
        model = build_model(SMALL)
        x = torch.rand(4, 1, 32, 32)
        batched = forward(model, x)["phase"]
        for i in range(4):
            single = forward(model, x[i:i + 1])["phase"]
            assert torch.allclose(batched[i:i + 1], single, atol=1e-6)

    def test_gradient_matches_finite_differences(self):
        # d(mean output)/d(one weight) vs central differences, 16x16 depth-2
        model = build_model(ModelSpec(depth=2, base_width=8, rng_seed=3)).double()
        x = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        param = model.decoders["phase"].head.weight
        out = model(x)["phase"].mean()
        model.zero_grad()
        out.backward()
        auto = param.grad[0, 0, 0, 0].item()
        step = 1e-6
        with torch.no_grad():
            param[0, 0, 0, 0] += step
            up = model(x)["phase"].mean().item()
            param[0, 0, 0, 0] -= 2 * step
            down = model(x)["phase"].mean().item()
            param[0, 0, 0, 0] += step
        numeric = (up - down) / (2 * step)
        assert abs(auto - numeric) / max(abs(numeric), 1e-12) < 1e-3


class TestCheckpoints:
    def test_round_trip_bit_identical_forward(self, tmp_path):
        model = build_model(SMALL)
        model.provenance = {"strategy": "tpd", "epochs": 7, "cycles": 0}
        x = torch.rand(1, 1, 32, 32)
        before = forward(model, x)["phase"]
        path = tmp_path / "weights.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        after = forward(loaded, x)["phase"]
        assert torch.equal(before, after)
        assert loaded.provenance == {"strategy": "tpd", "epochs": 7, "cycles": 0}

    def test_state_round_trip_bits(self, tmp_path):
        model = build_model(SMALL)
        path = tmp_path / "w.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for k, v in model.state_dict().items():
            assert torch.equal(v, loaded.state_dict()[k])

    def test_truncated_file_detected(self, tmp_path):
        model = build_model(SMALL)
        path = tmp_path / "w.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "w.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_detected(self, tmp_path):
        model = build_model(SMALL)
        path = tmp_path / "w.ckpt"
        save_checkpoint(model, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # bump version field
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

import json

import numpy as np
import pytest

from phasekit.datagen import RMEConfig, generate_dataset, synthetic_corpus
from phasekit.errors import ValidationError
from phasekit.harness import (
    HarnessGrid,
    manifest_hash,
    pearson,
    run_aberration_suite,
    run_cross_generalization,
    run_defocus_sweep,
    run_illposedness_suite,
    run_strategy_comparison,
)
from phasekit.models import ModelSpec
from phasekit.optics import OpticalConfig
from phasekit.strategies import StrategyConfig, train

SPEC = ModelSpec(depth=2, base_width=8, rng_seed=0)
SPEC_DUAL = ModelSpec(depth=2, base_width=8, rng_seed=0, output_heads=("phase", "amplitude"))
SPEC_DUAL3 = ModelSpec(
    depth=2, base_width=8, rng_seed=0, output_heads=("phase", "amplitude"), input_channels=3
)


def quick_cfg(kind, **kw):
    base = dict(epochs=2, rng_seed=0)
    if kind in ("upd", "tpdr"):
        base = dict(cycles=5, rng_seed=0)
    base.update(kw)
    return StrategyConfig(kind=kind, **base)


@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    """Tiny train/test datasets shared across harness tests."""
    root = tmp_path_factory.mktemp("harness")
    optics = OpticalConfig(grid_size=32, distance=(5e-3,))
    tr = generate_dataset(
        synthetic_corpus(12, "dense", 0, 32), root / "tr", optics, 12,
        corpus_descriptor="synthetic:dense",
    )
    te = generate_dataset(
        synthetic_corpus(3, "dense", 50, 32), root / "te", optics, 3,
        corpus_descriptor="synthetic:dense",
    )
    return root, tr, te


class TestGridType:
    def test_completeness_enforced(self):
        grid = HarnessGrid(name="g", axes={"a": ["x", "y"]})
        grid.put(("x",), {"v": 1})
        with pytest.raises(ValidationError):
            grid.check_complete()
        grid.put(("y",), {"v": 2})
        grid.check_complete()

    def test_save_load_round_trip(self, tmp_path):
        grid = HarnessGrid(name="g", axes={"a": ["x"]}, provenance={"seed": 3})
        grid.put(("x",), {"ssim": 0.5})
        grid.save(tmp_path)
        back = HarnessGrid.load(tmp_path)
        assert back.get("x") == {"ssim": 0.5}
        assert back.provenance == {"seed": 3}

    def test_pearson_basics(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(8, 8))
        assert pearson(a, a) == pytest.approx(1.0)
        assert pearson(a, -a) == pytest.approx(-1.0)


class TestStrategyComparison:
    def test_grid_complete_with_all_strategies(self, mini):
        root, tr, te = mini
        strategies = {
            "dd": quick_cfg("dd"),
            "tpd": quick_cfg("tpd"),
            "upd": quick_cfg("upd"),
            "tpdr": quick_cfg("tpdr"),
        }
        grid = run_strategy_comparison(tr, te, SPEC, strategies, root / "cmp")
        grid.check_complete()
        assert grid.get("upd")["inference_cycles"] == 5
        assert grid.get("dd")["inference_cycles"] == 1
        assert grid.get("dd")["training_seconds"] > 0
        assert (root / "cmp" / "report.json").exists()
        assert (root / "cmp" / "strategy_comparison.png").exists()

    def test_provenance_has_dataset_hashes(self, mini):
        root, tr, te = mini
        grid = run_strategy_comparison(
            tr, te, SPEC, {"dd": quick_cfg("dd")}, root / "cmp2"
        )
        assert grid.provenance["datasets"]["train"] == manifest_hash(tr)
        assert len(grid.provenance["datasets"]["train"]) == 64

    def test_report_json_reloads(self, mini):
        root, tr, te = mini
        out = root / "cmp3"
        grid = run_strategy_comparison(tr, te, SPEC, {"tpd": quick_cfg("tpd")}, out)
        back = HarnessGrid.load(out)
        assert back.get("tpd")["ssim_mean"] == grid.get("tpd")["ssim_mean"]


class TestCrossGeneralization:
    def test_three_by_three_grid(self, tmp_path):
        optics = OpticalConfig(grid_size=32, distance=(5e-3,))
        datasets = {}
        for i, style in enumerate(("dense", "medium", "sparse")):
            tr = generate_dataset(
                synthetic_corpus(8, style, i, 32), tmp_path / f"{style}_tr", optics, 8,
                corpus_descriptor=f"synthetic:{style}",
            )
            te = generate_dataset(
                synthetic_corpus(2, style, 90 + i, 32), tmp_path / f"{style}_te", optics, 2,
                corpus_descriptor=f"synthetic:{style}",
            )
            datasets[style] = (tr, te)
        grid = run_cross_generalization(
            datasets, SPEC, {"dd": quick_cfg("dd"), "tpd": quick_cfg("tpd")}, tmp_path / "xgen"
        )
        grid.check_complete()
        assert len(grid.cells) == 2 * 3 * 3
        cell = grid.get("dd", "dense", "sparse")
        assert "ssim_mean" in cell
        assert (tmp_path / "xgen" / cell["error_map"]).exists()


class TestIllposedness:
    def test_conditions_grid(self, tmp_path):
        optics = OpticalConfig(grid_size=32, distance=(5e-3, 10e-3, 15e-3))
        datasets = {}
        for style in ("dense", "sparse"):
            tr = generate_dataset(
                synthetic_corpus(8, style, 3, 32), tmp_path / f"{style}_tr", optics, 8,
                amplitude_source=synthetic_corpus(8, style, 103, 32),
            )
            te = generate_dataset(
                synthetic_corpus(2, style, 7, 32), tmp_path / f"{style}_te", optics, 2,
                amplitude_source=synthetic_corpus(2, style, 107, 32),
            )
            datasets[style] = (tr, te)
        grid = run_illposedness_suite(
            datasets, SPEC_DUAL, SPEC_DUAL3,
            {"dd": quick_cfg("dd"), "tpd": quick_cfg("tpd")},
            tmp_path / "illp",
        )
        grid.check_complete()
        assert len(grid.cells) == 2 * 2 * 3
        cell = grid.get("tpd", "sparse", "multi")
        assert "amplitude_ssim_mean" in cell
        assert (tmp_path / "illp" / "illposedness.png").exists()


class TestAberration:
    def test_correlations_reported(self, tmp_path):
        optics = OpticalConfig(grid_size=32, distance=(5e-3,))
        aberr = RMEConfig(seed_matrix_size=4, amplitude_range=(0, 2), rng_seed=11)
        tr = generate_dataset(
            synthetic_corpus(8, "dense", 0, 32), tmp_path / "tr", optics, 8,
            aberration=aberr,
        )
        te = generate_dataset(
            synthetic_corpus(2, "dense", 60, 32), tmp_path / "te", optics, 2,
            aberration=RMEConfig(seed_matrix_size=4, amplitude_range=(0, 2), rng_seed=500),
        )
        grid = run_aberration_suite(
            tr, te, SPEC, {"dd": quick_cfg("dd"), "tpd": quick_cfg("tpd")}, tmp_path / "ab"
        )
        grid.check_complete()
        for name in ("dd", "tpd"):
            cell = grid.get(name)
            assert -1 <= cell["corr_with_sample"] <= 1
            assert -1 <= cell["corr_with_sample_plus_aberration"] <= 1


class TestDefocusSweep:
    def test_sweep_curves_and_consistency(self, mini):
        root, tr, te = mini
        model, _ = train(quick_cfg("dd"), tr, SPEC)
        zs = [4e-3, 5e-3, 6e-3]
        grid = run_defocus_sweep({"dd": model}, te, zs, root / "sweep")
        grid.check_complete()
        assert len(grid.cells) == 3
        assert (root / "sweep" / "defocus_sweep.png").exists()

    def test_training_distance_matches_direct_evaluation(self, mini):
        # at the training z the sweep reproduces evaluate_on_records bitwise
        from phasekit.harness import evaluate_on_records
        from phasekit.datagen import load_records

        root, tr, te = mini
        model, _ = train(quick_cfg("tpd"), tr, SPEC)
        direct = evaluate_on_records(model, load_records(te), te)
        grid = run_defocus_sweep({"tpd": model}, te, [5e-3], root / "sweep_z")
        assert grid.get("tpd", "0.005")["ssim_mean"] == direct["ssim_mean"]

    def test_jobs_parallel_equals_serial(self, mini):
        root, tr, te = mini
        model, _ = train(quick_cfg("dd"), tr, SPEC)
        zs = [4e-3, 5e-3]
        g1 = run_defocus_sweep({"dd": model}, te, zs, root / "sw1", jobs=1)
        g2 = run_defocus_sweep({"dd": model}, te, zs, root / "sw2", jobs=2)
        assert g1.cells == g2.cells

"""Comparison harnesses: strategy table, cross-generalization,
ill-posedness, aberration prior, and the defocus-tolerance sweep.

Every harness returns a HarnessGrid whose cells are plain dicts of
metric aggregates, writes ``report.json`` with full provenance (specs,
strategy configs, seeds, dataset hashes), and renders PNG figures for
human reading. Cells are independent jobs; with jobs > 1 they run in a
thread pool and write disjoint files.
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .datagen import form_record_holograms, load_records
from .errors import ConfigurationError, ValidationError
from .metrics import align_piston, amplitude_metrics, band_split_error, phase_metrics
from .models import build_model
from .strategies import (
    CD,
    DD,
    TPD,
    TPDR,
    UPD,
    StrategyConfig,
    infer_trained,
    infer_upd,
    refine_tpdr,
    train,
)

GRID_SCHEMA_VERSION = "1"


@dataclass
class HarnessGrid:
    """Complete grid of metric cells plus run provenance."""

    name: str
    axes: dict
    cells: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def key(self, *coords):
        return "/".join(str(c) for c in coords)

    def put(self, coords, value):
        self.cells[self.key(*coords)] = value

    def get(self, *coords):
        return self.cells[self.key(*coords)]

    def check_complete(self):
        expected = 1
        for values in self.axes.values():
            expected *= len(values)
        missing = expected - len(self.cells)
        if missing:
            raise ValidationError(f"{self.name}: grid incomplete, {missing} cells missing")

    def to_json_dict(self):
        return {
            "schema_version": GRID_SCHEMA_VERSION,
            "name": self.name,
            "axes": {k: list(v) for k, v in self.axes.items()},
            "cells": self.cells,
            "provenance": self.provenance,
        }

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @classmethod
    def load(cls, out_dir):
        with open(Path(out_dir) / "report.json") as fh:
            data = json.load(fh)
        return cls(
            name=data["name"], axes=data["axes"], cells=data["cells"],
            provenance=data["provenance"],
        )


def manifest_hash(manifest):
    if manifest.root is None:
        return None
    blob = (Path(manifest.root) / "manifest.json").read_bytes()
    return hashlib.sha256(blob).hexdigest()


def _provenance(spec, strategies, datasets):
    return {
        "model_spec": spec.to_json_dict(),
        "strategies": {k: v.to_json_dict() for k, v in strategies.items()},
        "datasets": {k: manifest_hash(m) for k, m in datasets.items()},
    }


def _save_error_map(path, pred, gt, title):
    err = np.abs(align_piston(pred, gt) - gt)
    fig, axes = plt.subplots(1, 3, figsize=(9, 3))
    for ax, img, label in zip(axes, (gt, align_piston(pred, gt), err), ("target", "output", "|error|")):
        im = ax.imshow(img, cmap="viridis")
        ax.set_title(label, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _run_jobs(jobs, tasks):
    """tasks: list of zero-arg callables; run sequentially or in threads."""
    if jobs <= 1:
        for t in tasks:
            t()
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(t) for t in tasks]
        for f in futures:
            f.result()


def evaluate_on_records(model, records, manifest, distances=None, band_cutoff=0.05):
    """Per-record reconstruction metrics of a trained model on a test set."""
    distances = list(distances or manifest.distances)
    index = [manifest.distances.index(z) for z in distances]
    phase_range = manifest.phase_range
    rows = []
    seconds = []
    for rec in records:
        holos = [rec.holograms[i] for i in index]
        outputs, secs = infer_trained(model, holos)
        seconds.append(secs)
        rows.append(metrics_for_outputs(outputs, rec, phase_range, band_cutoff))
    return aggregate_rows(rows, inference_seconds=float(np.mean(seconds)))


def metrics_for_outputs(outputs, rec, phase_range, band_cutoff=0.05):
    if rec.gt_phase is None:
        raise ConfigurationError("evaluation needs ground-truth phase in the test set")
    pred_phase = outputs["phase"].detach().numpy().squeeze()
    row = dict(phase_metrics(pred_phase, rec.gt_phase, phase_range))
    low, high = band_split_error(pred_phase, rec.gt_phase, band_cutoff)
    row["low_band_rms"] = low
    row["high_band_rms"] = high
    if "amplitude" in outputs and rec.gt_amplitude is not None:
        amp = outputs["amplitude"].detach().numpy().squeeze()
        am = amplitude_metrics(amp, rec.gt_amplitude)
        row["amplitude_ssim"] = am["ssim"]
        row["amplitude_psnr"] = am["psnr"]
    return row


def aggregate_rows(rows, **extra):
    agg = {}
    for key in rows[0]:
        agg[key + "_mean"] = float(np.mean([r[key] for r in rows]))
    agg["per_record"] = rows
    agg.update(extra)
    return agg


# ---------------------------------------------------------------------------
# 1. strategy table (time consumption and accuracy)


def run_strategy_comparison(
    train_manifest, test_manifest, spec, strategies, out_dir, jobs=1
):
    """Train/infer each strategy on the same split; tabulates accuracy,
    cycles, and wall-clock per strategy (the settings/evaluation table).

    strategies: dict name -> StrategyConfig; tpdr requires tpd present.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = HarnessGrid(
        name="strategy_comparison",
        axes={"strategy": list(strategies)},
        provenance=_provenance(
            spec, strategies, {"train": train_manifest, "test": test_manifest}
        ),
    )
    test_records = load_records(test_manifest)
    trained = {}

    ordered = sorted(strategies, key=lambda k: (strategies[k].kind == TPDR))
    for name in ordered:
        cfg = strategies[name]
        if cfg.kind in (DD, TPD, CD):
            model, report = train(cfg, train_manifest, spec)
            trained[cfg.kind] = model
            cell = evaluate_on_records(model, test_records, test_manifest, cfg.distances)
            cell["training_seconds"] = report.wall_seconds
            cell["inference_cycles"] = 1
            cell["final_train_loss"] = report.traces["total"][-1]
            cell["initial_train_loss"] = report.traces["total"][0]
        elif cfg.kind in (UPD, TPDR):
            rows = []
            seconds = []
            for rec in test_records:
                holos = [
                    rec.holograms[test_manifest.distances.index(z)]
                    for z in (cfg.distances or tuple(test_manifest.distances))
                ]
                if cfg.kind == UPD:
                    outputs, rep = infer_upd(holos, spec, cfg)
                else:
                    base = trained.get(TPD)
                    if base is None:
                        raise ConfigurationError("tpdr needs a tpd strategy in the same run")
                    outputs, rep = refine_tpdr(base, holos, cfg)
                seconds.append(rep.wall_seconds)
                rows.append(
                    metrics_for_outputs(outputs, rec, test_manifest.phase_range)
                )
            cell = aggregate_rows(rows, inference_seconds=float(np.mean(seconds)))
            cell["training_seconds"] = 0.0 if cfg.kind == UPD else None
            cell["inference_cycles"] = cfg.cycles
        else:
            raise ConfigurationError(f"unknown strategy kind {cfg.kind}")
        grid.put((name,), cell)

    grid.check_complete()
    grid.save(out_dir)
    _plot_strategy_table(grid, out_dir)
    return grid


def _plot_strategy_table(grid, out_dir):
    names = grid.axes["strategy"]
    ssims = [grid.get(n)["ssim_mean"] for n in names]
    psnrs = [grid.get(n)["psnr_mean"] for n in names]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
    ax1.bar(names, ssims)
    ax1.set_ylabel("mean SSIM")
    ax2.bar(names, psnrs)
    ax2.set_ylabel("mean PSNR (dB)")
    fig.tight_layout()
    fig.savefig(out_dir / "strategy_comparison.png", dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# 2. cross-generalization (train corpus x test corpus)


def run_cross_generalization(datasets, spec, strategies, out_dir, jobs=1):
    """3x3 train-corpus x test-corpus grid per strategy.

    datasets: dict corpus_name -> (train_manifest, test_manifest).
    strategies: dict name -> StrategyConfig (dataset-trainable kinds).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_names = list(datasets)
    grid = HarnessGrid(
        name="cross_generalization",
        axes={
            "strategy": list(strategies),
            "train_corpus": corpus_names,
            "test_corpus": corpus_names,
        },
        provenance=_provenance(
            spec,
            strategies,
            {
                f"{k}_{tag}": m
                for k, (tr, te) in datasets.items()
                for tag, m in (("train", tr), ("test", te))
            },
        ),
    )
    test_records = {k: load_records(te) for k, (_, te) in datasets.items()}

    def make_cell(strat_name, train_name):
        def job():
            cfg = strategies[strat_name]
            model, _ = train(cfg, datasets[train_name][0], spec)
            for test_name in corpus_names:
                te_manifest = datasets[test_name][1]
                cell = evaluate_on_records(model, test_records[test_name], te_manifest)
                rec = test_records[test_name][0]
                outputs, _ = infer_trained(model, rec.holograms)
                map_path = out_dir / f"errmap_{strat_name}_{train_name}_{test_name}.png"
                _save_error_map(
                    map_path,
                    outputs["phase"].numpy().squeeze(),
                    rec.gt_phase,
                    f"{strat_name}: train {train_name} / test {test_name}",
                )
                cell["error_map"] = map_path.name
                grid.put((strat_name, train_name, test_name), cell)
        return job

    _run_jobs(jobs, [make_cell(s, tr) for s in strategies for tr in corpus_names])
    grid.check_complete()
    grid.save(out_dir)
    return grid


# ---------------------------------------------------------------------------
# 3. ill-posedness (dual output under single / aperture / multi-distance)

CONDITIONS = ("single", "aperture", "multi")


def run_illposedness_suite(datasets, spec_single, spec_multi, strategies, out_dir, jobs=1, aperture_radius=None):
    """Dual-output reconstruction under growing prior information.

    datasets: dict corpus_name -> (train_manifest, test_manifest); the
    manifests must store amplitude ground truth and three distances.
    strategies: dict name -> StrategyConfig with dataset-trainable kinds.
    aperture_radius defaults to 80 px scaled by grid_size/256.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_names = list(datasets)
    strat_names = list(strategies)
    grid = HarnessGrid(
        name="illposedness",
        axes={
            "strategy": strat_names,
            "corpus": corpus_names,
            "condition": list(CONDITIONS),
        },
        provenance=_provenance(
            spec_single,
            strategies,
            {f"{k}_train": tr for k, (tr, te) in datasets.items()},
        ),
    )
    for corpus, (tr, te) in datasets.items():
        if len(tr.distances) < 3:
            raise ConfigurationError("ill-posedness suite needs three recorded distances")
    if aperture_radius is None:
        any_tr = next(iter(datasets.values()))[0]
        aperture_radius = 80.0 * any_tr.optics.grid_size / 256.0

    def make_cell(strat_name, corpus, condition):
        def job():
            cfg = strategies[strat_name]
            tr, te = datasets[corpus]
            z1 = (tr.distances[0],)
            if condition == "single":
                run_cfg = cfg.with_(distances=z1, aperture_radius=None)
                spec = spec_single
            elif condition == "aperture":
                run_cfg = cfg.with_(distances=z1, aperture_radius=aperture_radius)
                spec = spec_single
            else:
                run_cfg = cfg.with_(distances=tuple(tr.distances[:3]), aperture_radius=None)
                spec = spec_multi
            model, _ = train(run_cfg, tr, spec)
            cell = evaluate_on_records(
                model, load_records(te), te, run_cfg.distances
            )
            grid.put((strat_name, corpus, condition), cell)
        return job

    _run_jobs(
        jobs,
        [
            make_cell(s, c, cond)
            for s in strat_names
            for c in corpus_names
            for cond in CONDITIONS
        ],
    )
    grid.check_complete()
    grid.save(out_dir)
    _plot_illposedness(grid, out_dir)
    return grid


def _plot_illposedness(grid, out_dir):
    fig, axes = plt.subplots(
        1, len(grid.axes["corpus"]), figsize=(4 * len(grid.axes["corpus"]), 3),
        squeeze=False,
    )
    width = 0.35
    for ax, corpus in zip(axes[0], grid.axes["corpus"]):
        xs = np.arange(len(CONDITIONS))
        for i, strat in enumerate(grid.axes["strategy"]):
            vals = [grid.get(strat, corpus, c)["ssim_mean"] for c in CONDITIONS]
            ax.bar(xs + i * width, vals, width, label=strat)
        ax.set_xticks(xs + width / 2)
        ax.set_xticklabels(CONDITIONS)
        ax.set_title(corpus, fontsize=9)
        ax.set_ylabel("phase SSIM")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "illposedness.png", dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# 4. aberration prior capacity


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def run_aberration_suite(train_manifest, test_manifest, spec, strategies, out_dir, jobs=1):
    """Supervised vs physics-driven reconstruction of aberrated holograms.

    Metrics compare against the aberration-free ground truth; each cell
    also records how the reconstruction correlates with the clean sample
    versus the sample-plus-aberration phase.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = HarnessGrid(
        name="aberration_prior",
        axes={"strategy": list(strategies)},
        provenance=_provenance(
            spec, strategies, {"train": train_manifest, "test": test_manifest}
        ),
    )
    test_records = load_records(test_manifest)
    if test_records[0].aberration_phase is None:
        raise ConfigurationError("aberration suite needs records with aberration phases")

    def make_cell(name):
        def job():
            cfg = strategies[name]
            model, _ = train(cfg, train_manifest, spec)
            rows = []
            corr_sample = []
            corr_aberrated = []
            for rec in test_records:
                outputs, _ = infer_trained(model, rec.holograms)
                rows.append(metrics_for_outputs(outputs, rec, test_manifest.phase_range))
                pred = outputs["phase"].numpy().squeeze()
                corr_sample.append(pearson(pred, rec.gt_phase))
                corr_aberrated.append(
                    pearson(pred, rec.gt_phase + rec.aberration_phase)
                )
            cell = aggregate_rows(rows)
            cell["corr_with_sample"] = float(np.mean(corr_sample))
            cell["corr_with_sample_plus_aberration"] = float(np.mean(corr_aberrated))
            rec = test_records[0]
            outputs, _ = infer_trained(model, rec.holograms)
            map_path = out_dir / f"errmap_{name}.png"
            _save_error_map(
                map_path, outputs["phase"].numpy().squeeze(), rec.gt_phase,
                f"{name} under aberration",
            )
            cell["error_map"] = map_path.name
            grid.put((name,), cell)
        return job

    _run_jobs(jobs, [make_cell(n) for n in strategies])
    grid.check_complete()
    grid.save(out_dir)
    return grid


# ---------------------------------------------------------------------------
# 5. defocus-distance tolerance sweep


def run_defocus_sweep(models, test_manifest, z_values, out_dir, jobs=1):
    """SSIM vs defocus for networks trained at a fixed distance.

    models: dict strategy_name -> trained model (single-distance input).
    Test holograms are regenerated from the stored ground truth at each
    z; metrics keep the dataset's phase range.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    z_values = [float(z) for z in z_values]
    grid = HarnessGrid(
        name="defocus_sweep",
        axes={"strategy": list(models), "z_m": [format(z, ".6g") for z in z_values]},
        provenance={
            "datasets": {"test": manifest_hash(test_manifest)},
            "z_values_m": z_values,
        },
    )
    records = load_records(test_manifest)
    optics = test_manifest.optics

    def make_cell(z):
        def job():
            regenerated = []
            for rec in records:
                holos = form_record_holograms(
                    rec.gt_phase, rec.gt_amplitude, rec.aberration_phase, optics, [z]
                )
                regenerated.append((rec, holos))
            for name, model in models.items():
                rows = []
                for rec, holos in regenerated:
                    outputs, _ = infer_trained(model, holos)
                    rows.append(
                        metrics_for_outputs(outputs, rec, test_manifest.phase_range)
                    )
                grid.put((name, format(z, ".6g")), aggregate_rows(rows))
        return job

    _run_jobs(jobs, [make_cell(z) for z in z_values])
    grid.check_complete()
    grid.save(out_dir)
    _plot_sweep(grid, z_values, out_dir)
    return grid


def _plot_sweep(grid, z_values, out_dir):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name in grid.axes["strategy"]:
        ys = [grid.get(name, format(z, ".6g"))["ssim_mean"] for z in z_values]
        ax.plot([z * 1e3 for z in z_values], ys, marker="o", label=name)
    ax.set_xlabel("defocus distance (mm)")
    ax.set_ylabel("mean SSIM")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "defocus_sweep.png", dpi=110)
    plt.close(fig)

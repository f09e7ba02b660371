"""Command-line interface.

Lengths on the command line use lab units (mm, nm, um) and are converted
to SI meters at this boundary; every persisted JSON stores SI only. Each
command writes the resolved parameters to ``run_config.json`` in its
output directory, and ``phasekit rerun`` replays such a file.

Exit codes: 0 success, 2 validation/configuration, 3 I/O, 4 numeric.
"""

import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .datagen import (
    RMEConfig,
    folder_corpus,
    generate_dataset,
    ingest_external_hologram,
    load_manifest,
    load_records,
    synthetic_corpus,
)
from .errors import (
    ConfigurationError,
    NumericError,
    PhasekitError,
    StorageError,
    ValidationError,
)
from .harness import (
    run_aberration_suite,
    run_cross_generalization,
    run_defocus_sweep,
    run_illposedness_suite,
    run_strategy_comparison,
)
from .metrics import phase_metrics
from .models import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .optics import OpticalConfig
from .strategies import (
    StrategyConfig,
    infer_trained,
    infer_upd,
    refine_tpdr,
    train as train_strategy,
)
from . import tensorio

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("phasekit")


class JsonLineHandler(logging.Handler):
    def emit(self, record):
        payload = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "msg": record.getMessage(),
        }
        sys.stderr.write(json.dumps(payload) + "\n")


def _setup_logging(log_json):
    root = logging.getLogger()
    root.handlers.clear()
    handler = JsonLineHandler() if log_json else logging.StreamHandler(sys.stderr)
    if not log_json:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.INFO)


def _mm_list(text):
    try:
        return tuple(float(part) * 1e-3 for part in str(text).split(","))
    except ValueError:
        raise ValidationError(f"cannot parse distance list {text!r}") from None


def _pair(text):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ValidationError(f"expected two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(
            f"output directory {out} is not empty (use --force to overwrite)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _persist_run_config(out, command, params):
    with open(Path(out) / "run_config.json", "w") as fh:
        json.dump({"command": command, "params": params}, fh, indent=2)


def _corpus(descriptor, count, seed, size):
    if descriptor.startswith("synthetic:"):
        style = descriptor.split(":", 1)[1]
        return synthetic_corpus(count, style, rng_seed=seed, size=size)
    path = Path(descriptor)
    if not path.is_dir():
        raise StorageError(f"corpus directory {path} does not exist")
    return folder_corpus(path)


def _require_dataset(path):
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise StorageError(f"no dataset manifest under {path}")
    return load_manifest(path)


def _optics_from_params(p, distances):
    return OpticalConfig(
        wavelength=p["wavelength_m"],
        pixel_pitch=p["pixel_pitch_m"],
        grid_size=p["grid_size"],
        pad=p["pad"],
        distance=tuple(distances),
    )


def _check_weights_match_dataset(model, manifest):
    trained = model.provenance.get("optics")
    if trained is None:
        return
    current = manifest.optics.to_json_dict()
    keys = ("wavelength_m", "pixel_pitch_m", "grid_size", "pad")
    mismatch = {k: (trained.get(k), current[k]) for k in keys if trained.get(k) != current[k]}
    if mismatch:
        raise ConfigurationError(
            f"weights were trained under different optics: {mismatch}"
        )


def _save_outputs(out_dir, tag, outputs):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for head, tensor in outputs.items():
        arr = tensor.detach().numpy().squeeze().astype(np.float32)
        path = out_dir / f"{tag}_{head}.prt"
        tensorio.write_tensor(path, arr)
        paths[head] = str(path)
    return paths


# ---------------------------------------------------------------------------
# command implementations (SI-unit parameter dicts; rerunnable)


def run_simulate(params, out):
    distances = params["distances_m"]
    optics = _optics_from_params(params, distances)
    corpus = _corpus(params["corpus"], params["count"], params["seed"], optics.grid_size)
    amplitude = None
    if params.get("amplitude_corpus"):
        amplitude = _corpus(
            params["amplitude_corpus"], params["count"], params["seed"] + 77,
            optics.grid_size,
        )
    aberration = None
    if params.get("aberration_k"):
        aberration = RMEConfig(
            seed_matrix_size=params["aberration_k"],
            amplitude_range=tuple(params["aberration_range"]),
            rng_seed=params["seed"],
        )
    manifest = generate_dataset(
        corpus,
        out,
        optics,
        count=params["count"],
        distances=distances,
        phase_range=tuple(params["phase_range"]),
        amplitude_source=amplitude,
        aberration=aberration,
        keep_ground_truth=not params.get("no_gt", False),
        corpus_descriptor=params["corpus"],
    )
    log.info("dataset with %d records at %s", manifest.count, out)
    return {"count": manifest.count}


def _spec_from_params(params, n_inputs, phase_range):
    heads = ("phase", "amplitude") if params.get("dual") else ("phase",)
    return ModelSpec(
        input_channels=n_inputs,
        output_heads=heads,
        depth=params["depth"],
        base_width=params["base_width"],
        rng_seed=params["seed"],
        phase_range=tuple(phase_range),
    )


def run_train(params, out):
    manifest = _require_dataset(params["dataset"])
    distances = (
        tuple(params["distances_m"]) if params.get("distances_m") else tuple(manifest.distances)
    )
    cfg = StrategyConfig(
        kind=params["strategy"],
        alpha=params["alpha"],
        beta=params["beta"],
        aperture_radius=params.get("aperture_px"),
        distances=distances,
        learning_rate=params["learning_rate"],
        batch_size=params["batch"],
        epochs=params["epochs"],
        rng_seed=params["seed"],
    )
    spec = _spec_from_params(params, len(distances), manifest.phase_range)
    model, report = train_strategy(cfg, manifest, spec)
    ckpt = Path(out) / "weights.ckpt"
    save_checkpoint(model, ckpt)
    report.weights_path = str(ckpt)
    with open(Path(out) / "train_report.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    for term, values in report.traces.items():
        tensorio.write_tensor(
            Path(out) / f"trace_{term}.prt", np.asarray(values, np.float32)[None, :]
        )
    log.info(
        "trained %s for %d epochs, final loss %.4g",
        cfg.kind, cfg.epochs, report.traces["total"][-1],
    )
    return {"weights": str(ckpt), "final_loss": report.traces["total"][-1]}


def _holograms_for_inference(params):
    """Holograms plus optional ground truth from a dataset or external file."""
    if params.get("hologram"):
        optics = _optics_from_params(params, params["distances_m"])
        holo = ingest_external_hologram(params["hologram"], optics)
        return [([holo], None, "external")], optics, None
    manifest = _require_dataset(params["dataset"])
    records = load_records(manifest)
    if params.get("record") is not None:
        records = [records[params["record"]]]
    jobs = [(rec.holograms, rec, rec.record_id) for rec in records]
    return jobs, manifest.optics, manifest


def run_infer(params, out):
    jobs, optics, manifest = _holograms_for_inference(params)
    phase_range = manifest.phase_range if manifest else (0.0, float(np.pi))
    results = {}
    if params["strategy"] == "upd":
        cfg = StrategyConfig(kind="upd", cycles=params["cycles"], rng_seed=params["seed"])
        spec = _spec_from_params(params, len(jobs[0][0]), phase_range)
        for holos, rec, tag in jobs:
            outputs, report = infer_upd(holos, spec, cfg)
            paths = _save_outputs(out, tag, outputs)
            entry = {"outputs": paths, "cycles": cfg.cycles,
                     "trace_length": len(report.traces.get("total", []))}
            if rec is not None and rec.gt_phase is not None:
                entry["metrics"] = phase_metrics(
                    outputs["phase"].numpy().squeeze(), rec.gt_phase, phase_range
                )
            results[tag] = entry
    else:
        model = load_checkpoint(params["weights"])
        if manifest is not None:
            _check_weights_match_dataset(model, manifest)
        for holos, rec, tag in jobs:
            outputs, seconds = infer_trained(model, holos)
            paths = _save_outputs(out, tag, outputs)
            entry = {"outputs": paths, "inference_seconds": seconds}
            if rec is not None and rec.gt_phase is not None:
                entry["metrics"] = phase_metrics(
                    outputs["phase"].numpy().squeeze(), rec.gt_phase, phase_range
                )
            results[tag] = entry
    with open(Path(out) / "inference.json", "w") as fh:
        json.dump(results, fh, indent=2)
    log.info("wrote %d reconstruction(s) to %s", len(results), out)
    return results


def run_refine(params, out):
    model = load_checkpoint(params["weights"])
    jobs, optics, manifest = _holograms_for_inference(params)
    phase_range = manifest.phase_range if manifest else (0.0, float(np.pi))
    if manifest is not None:
        _check_weights_match_dataset(model, manifest)
    cfg = StrategyConfig(kind="tpdr", cycles=params["cycles"], rng_seed=params["seed"])
    results = {}
    for holos, rec, tag in jobs:
        outputs, report = refine_tpdr(model, holos, cfg)
        paths = _save_outputs(out, tag, outputs)
        entry = {
            "outputs": paths,
            "cycles": cfg.cycles,
            "best_cycle": report.best_cycle,
            "trace_length": len(report.traces.get("total", [])),
        }
        if rec is not None and rec.gt_phase is not None:
            entry["metrics"] = phase_metrics(
                outputs["phase"].numpy().squeeze(), rec.gt_phase, phase_range
            )
        results[tag] = entry
    with open(Path(out) / "refine.json", "w") as fh:
        json.dump(results, fh, indent=2)
    return results


def _strategy_set(params, distances):
    chosen = {}
    for kind in params["strategies"]:
        kw = dict(rng_seed=params["seed"], distances=tuple(distances))
        if kind in ("dd", "tpd", "cd"):
            kw.update(epochs=params["epochs"], batch_size=params["batch"],
                      alpha=params["alpha"], beta=params["beta"])
        elif kind == "upd":
            kw.update(cycles=params["upd_cycles"])
        elif kind == "tpdr":
            kw.update(cycles=params["tpdr_cycles"])
        chosen[kind] = StrategyConfig(kind=kind, **kw)
    return chosen


def run_evaluate(params, out):
    tr = _require_dataset(params["train_dataset"])
    te = _require_dataset(params["test_dataset"])
    distances = (tr.distances[0],)
    strategies = _strategy_set(params, distances)
    spec = _spec_from_params(params, 1, tr.phase_range)
    grid = run_strategy_comparison(tr, te, spec, strategies, out, jobs=params["jobs"])
    summary = {
        name: {
            "ssim": grid.get(name)["ssim_mean"],
            "psnr": grid.get(name)["psnr_mean"],
            "inference_cycles": grid.get(name)["inference_cycles"],
        }
        for name in strategies
    }
    log.info("strategy comparison: %s", json.dumps(summary))
    return summary


def run_sweep_defocus(params, out):
    te = _require_dataset(params["test_dataset"])
    models = {name: load_checkpoint(path) for name, path in params["weights"].items()}
    for model in models.values():
        _check_weights_match_dataset(model, te)
    lo, hi, count = params["z_range_m"]
    zs = np.linspace(lo, hi, int(count))
    grid = run_defocus_sweep(models, te, zs, out, jobs=params["jobs"])
    return {"cells": len(grid.cells)}


def run_crossgen(params, out):
    datasets = {
        name: (_require_dataset(tr), _require_dataset(te))
        for name, (tr, te) in params["datasets"].items()
    }
    first_train = next(iter(datasets.values()))[0]
    strategies = _strategy_set(params, (first_train.distances[0],))
    spec = _spec_from_params(params, 1, first_train.phase_range)
    grid = run_cross_generalization(datasets, spec, strategies, out, jobs=params["jobs"])
    return {"cells": len(grid.cells)}


def run_illposed(params, out):
    datasets = {
        name: (_require_dataset(tr), _require_dataset(te))
        for name, (tr, te) in params["datasets"].items()
    }
    first_train = next(iter(datasets.values()))[0]
    strategies = _strategy_set(params, (first_train.distances[0],))
    base = dict(params)
    base["dual"] = True
    spec_single = _spec_from_params(base, 1, first_train.phase_range)
    spec_multi = _spec_from_params(base, 3, first_train.phase_range)
    grid = run_illposedness_suite(
        datasets, spec_single, spec_multi, strategies, out,
        jobs=params["jobs"], aperture_radius=params.get("aperture_px"),
    )
    return {"cells": len(grid.cells)}


def run_aberration(params, out):
    tr = _require_dataset(params["train_dataset"])
    te = _require_dataset(params["test_dataset"])
    strategies = _strategy_set(params, (tr.distances[0],))
    spec = _spec_from_params(params, 1, tr.phase_range)
    grid = run_aberration_suite(tr, te, spec, strategies, out, jobs=params["jobs"])
    return {
        name: {
            "ssim": grid.get(name)["ssim_mean"],
            "corr_sample": grid.get(name)["corr_with_sample"],
            "corr_aberrated": grid.get(name)["corr_with_sample_plus_aberration"],
        }
        for name in strategies
    }


COMMANDS = {
    "simulate": run_simulate,
    "train": run_train,
    "infer": run_infer,
    "refine": run_refine,
    "evaluate": run_evaluate,
    "sweep-defocus": run_sweep_defocus,
    "crossgen": run_crossgen,
    "illposed": run_illposed,
    "aberration": run_aberration,
}


def _execute(command, params, out, force, log_json):
    _setup_logging(log_json)
    try:
        out = _prepare_out(out, force)
        _persist_run_config(out, command, params)
        t0 = time.perf_counter()
        result = COMMANDS[command](params, out)
        log.info("%s finished in %.1fs", command, time.perf_counter() - t0)
        return result
    except (ValidationError, ConfigurationError) as exc:
        _fail(command, exc, EXIT_VALIDATION, log_json)
    except StorageError as exc:
        _fail(command, exc, EXIT_IO, log_json)
    except NumericError as exc:
        _fail(command, exc, EXIT_NUMERIC, log_json)


def _fail(command, exc, code, log_json):
    if log_json:
        sys.stderr.write(
            json.dumps({"level": "error", "command": command, "error": str(exc),
                        "exit_code": code}) + "\n"
        )
    else:
        sys.stderr.write(f"error ({command}): {exc}\n")
    sys.exit(code)


# ---------------------------------------------------------------------------
# click wiring


def common_options(fn):
    fn = click.option("--out", required=True, type=click.Path(), help="Output directory.")(fn)
    fn = click.option("--force", is_flag=True, help="Allow writing into a non-empty directory.")(fn)
    fn = click.option("--log-json", is_flag=True, help="Line-delimited JSON logs on stderr.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True, help="RNG seed.")(fn)
    return fn


def optics_options(fn):
    fn = click.option("--wavelength-nm", type=float, default=532.0, show_default=True,
                      help="Illumination wavelength in nanometers.")(fn)
    fn = click.option("--pitch-um", type=float, default=4.0, show_default=True,
                      help="Sensor pixel pitch in micrometers.")(fn)
    fn = click.option("--grid", type=int, default=256, show_default=True,
                      help="Grid size in pixels (square).")(fn)
    return fn


def model_options(fn):
    fn = click.option("--depth", type=int, default=4, show_default=True,
                      help="Down/upsampling levels.")(fn)
    fn = click.option("--base-width", type=int, default=32, show_default=True,
                      help="Channels at the first level.")(fn)
    fn = click.option("--dual", is_flag=True, help="Dual-output network (phase + amplitude).")(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def main():
    """Hologram simulation, phase-recovery training, and evaluation."""


@main.command()
@click.option("--corpus", required=True,
              help="Image folder, or synthetic:dense / synthetic:medium / synthetic:sparse.")
@click.option("--count", type=int, required=True, help="Number of records.")
@click.option("--distance-mm", default="20", show_default=True,
              help="Defocus distance(s) in millimeters, comma-separated (1 or 3).")
@click.option("--phase-range", default="0,3.141592653589793", show_default=True,
              help="Phase range in radians: min,max.")
@click.option("--pad/--no-pad", default=True, show_default=True,
              help="Suppress wrap-around fringes by padded propagation.")
@click.option("--aberration-k", type=int, default=0, show_default=True,
              help="RME seed matrix size k (0 disables aberrations).")
@click.option("--aberration-range", default="0,2", show_default=True,
              help="RME phase range in radians: min,max.")
@click.option("--amplitude-corpus", default=None,
              help="Corpus for amplitude maps (objects become non-phase-only).")
@click.option("--no-gt", is_flag=True, help="Store holograms only (no ground truth).")
@optics_options
@common_options
def simulate(corpus, count, distance_mm, phase_range, pad, aberration_k,
             aberration_range, amplitude_corpus, no_gt, wavelength_nm, pitch_um,
             grid, out, force, log_json, seed):
    """Simulate a hologram dataset from an image corpus."""
    params = {
        "corpus": corpus,
        "count": count,
        "distances_m": list(_mm_list(distance_mm)),
        "phase_range": list(_pair(phase_range)),
        "pad": pad,
        "aberration_k": aberration_k,
        "aberration_range": list(_pair(aberration_range)),
        "amplitude_corpus": amplitude_corpus,
        "no_gt": no_gt,
        "wavelength_m": wavelength_nm * 1e-9,
        "pixel_pitch_m": pitch_um * 1e-6,
        "grid_size": grid,
        "seed": seed,
    }
    _execute("simulate", params, out, force, log_json)


@main.command()
@click.option("--strategy", type=click.Choice(["dd", "tpd", "cd"]), required=True,
              help="Dataset-training strategy.")
@click.option("--dataset", required=True, type=click.Path(), help="Dataset directory.")
@click.option("--alpha", type=float, default=0.3, show_default=True,
              help="Co-driven data-term weight.")
@click.option("--beta", type=float, default=0.1, show_default=True,
              help="Dual-output amplitude-term weight.")
@click.option("--epochs", type=int, default=100, show_default=True, help="Training epochs.")
@click.option("--batch", type=int, default=16, show_default=True, help="Batch size.")
@click.option("--lr", "learning_rate", type=float, default=1e-3, show_default=True,
              help="Initial learning rate.")
@click.option("--distance-mm", default=None,
              help="Subset of dataset distances to feed the network (mm, comma-separated).")
@click.option("--aperture-px", type=float, default=None,
              help="Aperture-constraint radius in pixels (needs --dual).")
@model_options
@common_options
def train(strategy, dataset, alpha, beta, epochs, batch, learning_rate, distance_mm,
          aperture_px, depth, base_width, dual, out, force, log_json, seed):
    """Train a network on a simulated dataset."""
    params = {
        "strategy": strategy,
        "dataset": dataset,
        "alpha": alpha,
        "beta": beta,
        "epochs": epochs,
        "batch": batch,
        "learning_rate": learning_rate,
        "distances_m": list(_mm_list(distance_mm)) if distance_mm else None,
        "aperture_px": aperture_px,
        "depth": depth,
        "base_width": base_width,
        "dual": dual,
        "seed": seed,
    }
    _execute("train", params, out, force, log_json)


@main.command()
@click.option("--strategy", type=click.Choice(["trained", "upd"]), default="trained",
              show_default=True, help="Use a checkpoint, or optimize from scratch (upd).")
@click.option("--weights", type=click.Path(), default=None, help="Checkpoint file.")
@click.option("--dataset", type=click.Path(), default=None, help="Dataset to reconstruct.")
@click.option("--record", type=int, default=None, help="Single record index.")
@click.option("--cycles", type=int, default=10000, show_default=True,
              help="Optimization cycles for --strategy upd.")
@click.option("--hologram", type=click.Path(), default=None,
              help="External hologram image file (requires optics flags).")
@click.option("--distance-mm", default="20", show_default=True,
              help="Defocus distance in millimeters (external holograms).")
@model_options
@optics_options
@common_options
def infer(strategy, weights, dataset, record, cycles, hologram, distance_mm,
          depth, base_width, dual, wavelength_nm, pitch_um, grid, out, force,
          log_json, seed):
    """Reconstruct phase (and amplitude) from holograms."""
    if hologram is None and dataset is None:
        raise click.UsageError("provide --dataset or --hologram")
    if strategy == "trained" and weights is None:
        raise click.UsageError("--strategy trained requires --weights")
    params = {
        "strategy": strategy,
        "weights": weights,
        "dataset": dataset,
        "record": record,
        "cycles": cycles,
        "hologram": hologram,
        "distances_m": list(_mm_list(distance_mm)),
        "depth": depth,
        "base_width": base_width,
        "dual": dual,
        "wavelength_m": wavelength_nm * 1e-9,
        "pixel_pitch_m": pitch_um * 1e-6,
        "grid_size": grid,
        "pad": False,
        "seed": seed,
    }
    _execute("infer", params, out, force, log_json)


@main.command()
@click.option("--weights", type=click.Path(), required=True, help="tpd checkpoint to refine.")
@click.option("--dataset", type=click.Path(), default=None, help="Dataset to reconstruct.")
@click.option("--record", type=int, default=None, help="Single record index.")
@click.option("--cycles", type=int, default=1000, show_default=True, help="Refinement cycles.")
@click.option("--hologram", type=click.Path(), default=None, help="External hologram image.")
@click.option("--distance-mm", default="20", show_default=True,
              help="Defocus distance in millimeters (external holograms).")
@optics_options
@common_options
def refine(weights, dataset, record, cycles, hologram, distance_mm, wavelength_nm,
           pitch_um, grid, out, force, log_json, seed):
    """Per-measurement refinement of a pre-trained network (tpdr)."""
    if hologram is None and dataset is None:
        raise click.UsageError("provide --dataset or --hologram")
    params = {
        "weights": weights,
        "dataset": dataset,
        "record": record,
        "cycles": cycles,
        "hologram": hologram,
        "distances_m": list(_mm_list(distance_mm)),
        "wavelength_m": wavelength_nm * 1e-9,
        "pixel_pitch_m": pitch_um * 1e-6,
        "grid_size": grid,
        "pad": False,
        "seed": seed,
    }
    _execute("refine", params, out, force, log_json)


def harness_options(fn):
    fn = click.option("--jobs", type=int, default=1, show_default=True,
                      help="Parallel harness workers.")(fn)
    fn = click.option("--epochs", type=int, default=20, show_default=True,
                      help="Training epochs per cell.")(fn)
    fn = click.option("--batch", type=int, default=16, show_default=True, help="Batch size.")(fn)
    fn = click.option("--alpha", type=float, default=0.3, show_default=True,
                      help="Co-driven data-term weight.")(fn)
    fn = click.option("--beta", type=float, default=0.1, show_default=True,
                      help="Dual-output amplitude-term weight.")(fn)
    return fn


@main.command()
@click.option("--train-dataset", required=True, type=click.Path())
@click.option("--test-dataset", required=True, type=click.Path())
@click.option("--strategies", default="dd,tpd,cd,upd,tpdr", show_default=True,
              help="Comma-separated strategy list.")
@click.option("--upd-cycles", type=int, default=10000, show_default=True)
@click.option("--tpdr-cycles", type=int, default=1000, show_default=True)
@harness_options
@model_options
@common_options
def evaluate(train_dataset, test_dataset, strategies, upd_cycles, tpdr_cycles, jobs,
             epochs, batch, alpha, beta, depth, base_width, dual, out, force,
             log_json, seed):
    """Train/infer every strategy on one split (accuracy/time table)."""
    params = {
        "train_dataset": train_dataset,
        "test_dataset": test_dataset,
        "strategies": strategies.split(","),
        "upd_cycles": upd_cycles,
        "tpdr_cycles": tpdr_cycles,
        "jobs": jobs,
        "epochs": epochs,
        "batch": batch,
        "alpha": alpha,
        "beta": beta,
        "depth": depth,
        "base_width": base_width,
        "dual": dual,
        "seed": seed,
    }
    _execute("evaluate", params, out, force, log_json)


@main.command("sweep-defocus")
@click.option("--weights", multiple=True, required=True,
              help="name=checkpoint.ckpt (repeatable).")
@click.option("--test-dataset", required=True, type=click.Path())
@click.option("--z-mm", default="15:25:11", show_default=True,
              help="Defocus sweep in millimeters: start:stop:count.")
@click.option("--jobs", type=int, default=1, show_default=True)
@common_options
def sweep_defocus(weights, test_dataset, z_mm, jobs, out, force, log_json, seed):
    """SSIM-vs-defocus curves for trained checkpoints."""
    try:
        lo, hi, count = z_mm.split(":")
        z_range = (float(lo) * 1e-3, float(hi) * 1e-3, int(count))
    except ValueError:
        raise click.UsageError(f"bad --z-mm {z_mm!r}, expected start:stop:count")
    weight_map = {}
    for item in weights:
        if "=" not in item:
            raise click.UsageError(f"bad --weights {item!r}, expected name=path")
        name, path = item.split("=", 1)
        weight_map[name] = path
    params = {
        "test_dataset": test_dataset,
        "weights": weight_map,
        "z_range_m": list(z_range),
        "jobs": jobs,
        "seed": seed,
    }
    _execute("sweep-defocus", params, out, force, log_json)


def _dataset_pairs(dataset):
    pairs = {}
    for item in dataset:
        try:
            name, dirs = item.split("=", 1)
            tr, te = dirs.split(",", 1)
        except ValueError:
            raise click.UsageError(
                f"bad --dataset {item!r}, expected name=train_dir,test_dir"
            )
        pairs[name] = (tr, te)
    return pairs


@main.command()
@click.option("--dataset", multiple=True, required=True,
              help="name=train_dir,test_dir (repeat per corpus).")
@click.option("--strategies", default="dd,tpd", show_default=True)
@harness_options
@model_options
@common_options
def crossgen(dataset, strategies, jobs, epochs, batch, alpha, beta, depth,
             base_width, dual, out, force, log_json, seed):
    """Cross-corpus generalization grid (train corpus x test corpus)."""
    params = {
        "datasets": _dataset_pairs(dataset),
        "strategies": strategies.split(","),
        "upd_cycles": 0,
        "tpdr_cycles": 0,
        "jobs": jobs,
        "epochs": epochs,
        "batch": batch,
        "alpha": alpha,
        "beta": beta,
        "depth": depth,
        "base_width": base_width,
        "dual": dual,
        "seed": seed,
    }
    _execute("crossgen", params, out, force, log_json)


@main.command()
@click.option("--dataset", multiple=True, required=True,
              help="name=train_dir,test_dir (repeat per corpus).")
@click.option("--strategies", default="dd,tpd", show_default=True)
@click.option("--aperture-px", type=float, default=None,
              help="Aperture radius in pixels (default scales 80 px at N=256).")
@harness_options
@model_options
@common_options
def illposed(dataset, strategies, aperture_px, jobs, epochs, batch, alpha, beta,
             depth, base_width, dual, out, force, log_json, seed):
    """Dual-output recovery under single / aperture / multi-distance input."""
    params = {
        "datasets": _dataset_pairs(dataset),
        "strategies": strategies.split(","),
        "aperture_px": aperture_px,
        "upd_cycles": 0,
        "tpdr_cycles": 0,
        "jobs": jobs,
        "epochs": epochs,
        "batch": batch,
        "alpha": alpha,
        "beta": beta,
        "depth": depth,
        "base_width": base_width,
        "dual": True,
        "seed": seed,
    }
    _execute("illposed", params, out, force, log_json)


@main.command()
@click.option("--train-dataset", required=True, type=click.Path(),
              help="Aberrated training dataset.")
@click.option("--test-dataset", required=True, type=click.Path(),
              help="Aberrated test dataset.")
@click.option("--strategies", default="dd,tpd", show_default=True)
@harness_options
@model_options
@common_options
def aberration(train_dataset, test_dataset, strategies, jobs, epochs, batch, alpha,
               beta, depth, base_width, dual, out, force, log_json, seed):
    """Prior-capacity comparison on aberrated holograms."""
    params = {
        "train_dataset": train_dataset,
        "test_dataset": test_dataset,
        "strategies": strategies.split(","),
        "upd_cycles": 0,
        "tpdr_cycles": 0,
        "jobs": jobs,
        "epochs": epochs,
        "batch": batch,
        "alpha": alpha,
        "beta": beta,
        "depth": depth,
        "base_width": base_width,
        "dual": dual,
        "seed": seed,
    }
    _execute("aberration", params, out, force, log_json)


@main.command()
@click.argument("config", type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(),
              help="Override the output directory.")
@click.option("--force", is_flag=True)
@click.option("--log-json", is_flag=True)
def rerun(config, out, force, log_json):
    """Replay a persisted run_config.json."""
    with open(config) as fh:
        stored = json.load(fh)
    command = stored["command"]
    if command not in COMMANDS:
        raise click.UsageError(f"unknown command {command!r} in {config}")
    target = out or str(Path(config).parent)
    _execute(command, stored["params"], target, force or out is None, log_json)


if __name__ == "__main__":
    main()

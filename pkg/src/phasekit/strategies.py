"""Training and inference strategies and their loss functions.

Five strategies share one architecture:

* dd   - supervised regression from hologram to phase (paired data)
* upd  - per-measurement optimization of an untrained network under the
         re-propagation (physics) loss
* tpd  - network pre-trained on holograms only with the physics loss
* tpdr - tpd followed by per-measurement refinement
* cd   - weighted sum of the data term and the physics term

Every squared-norm loss is reduced as the mean of squared element-wise
differences over pixels, then over the batch. All losses are
differentiable through the propagation operator.
"""

import copy
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .device import current_device
from .errors import ConfigurationError, NumericError, ValidationError
from .models import build_model, forward
from .optics import Hologram, form_hologram_tensor

DD = "dd"
UPD = "upd"
TPD = "tpd"
TPDR = "tpdr"
CD = "cd"
KINDS = (DD, UPD, TPD, TPDR, CD)

DEFAULT_CYCLES = {UPD: 10_000, TPDR: 1_000}
DEFAULT_DECAY_CYCLES = {UPD: 500, TPDR: 100}


@dataclass(frozen=True)
class StrategyConfig:
    """Which strategy to run and every optimizer knob it needs."""

    kind: str = DD
    alpha: float = 0.3        # CD data-term weight
    beta: float = 0.1         # dual-output amplitude-term weight
    aperture_radius: float = None  # pixels; None disables the constraint
    distances: tuple = None   # defaults to the dataset's distances
    cycles: int = None        # upd/tpdr; defaults per kind
    learning_rate: float = 1e-3
    weight_decay: float = None  # defaults: 1e-3 for upd/tpdr, 0 otherwise
    lr_decay: float = 0.95
    lr_decay_every_epochs: int = 5
    lr_decay_every_cycles: int = None  # defaults per kind (500 upd / 100 tpdr)
    lr_floor: float = 1e-5
    batch_size: int = 16
    epochs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown strategy kind {self.kind!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be >= 0")
        if self.distances is not None:
            zs = tuple(float(z) for z in self.distances)
            if len(zs) not in (1, 3):
                raise ConfigurationError("distances must have 1 or 3 entries")
            object.__setattr__(self, "distances", zs)
        if self.cycles is None:
            object.__setattr__(self, "cycles", DEFAULT_CYCLES.get(self.kind, 0))
        elif self.cycles < 0:
            raise ConfigurationError("cycles must be >= 0")
        if self.weight_decay is None:
            object.__setattr__(
                self, "weight_decay", 1e-3 if self.kind in (UPD, TPDR) else 0.0
            )
        if self.lr_decay_every_cycles is None:
            object.__setattr__(
                self, "lr_decay_every_cycles", DEFAULT_DECAY_CYCLES.get(self.kind, 500)
            )

    def to_json_dict(self):
        d = {
            "kind": self.kind,
            "alpha": self.alpha,
            "beta": self.beta,
            "aperture_radius": self.aperture_radius,
            "distances": None if self.distances is None else list(self.distances),
            "cycles": self.cycles,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "lr_decay": self.lr_decay,
            "lr_decay_every_epochs": self.lr_decay_every_epochs,
            "lr_decay_every_cycles": self.lr_decay_every_cycles,
            "lr_floor": self.lr_floor,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "rng_seed": self.rng_seed,
        }
        return d

    @classmethod
    def from_json_dict(cls, d):
        kw = dict(d)
        if kw.get("distances") is not None:
            kw["distances"] = tuple(kw["distances"])
        return cls(**kw)

    def with_(self, **kwargs):
        return replace(self, **kwargs)


@dataclass
class TrainReport:
    """Per-epoch (or per-cycle) loss traces and wall-clock accounting."""

    kind: str
    traces: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    steps: int = 0
    best_cycle: int = None
    weights_path: str = None
    model: object = None  # in-memory reference to the final weights

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "traces": {k: list(map(float, v)) for k, v in self.traces.items()},
            "wall_seconds": self.wall_seconds,
            "steps": self.steps,
            "best_cycle": self.best_cycle,
            "weights_path": self.weights_path,
        }


# ---------------------------------------------------------------------------
# losses


def mse(a, b):
    return torch.mean((a - b) ** 2)


def loss_dd(pred_phase, gt_phase):
    """Supervised phase-domain loss."""
    if pred_phase.shape != gt_phase.shape:
        raise ValidationError(
            f"shape mismatch {tuple(pred_phase.shape)} vs {tuple(gt_phase.shape)}"
        )
    return mse(pred_phase, gt_phase)


def loss_physics(pred_phase, pred_amplitude, hologram, z, optics):
    """Hologram-domain self-supervision: |G(A exp(iP))|^2 vs the measurement.

    pred_amplitude=None assumes a phase-only object (A = 1).
    """
    if not isinstance(hologram, torch.Tensor):
        hologram = torch.as_tensor(np.asarray(hologram))
    hologram = hologram.to(pred_phase.dtype)
    simulated = form_hologram_tensor(pred_phase, pred_amplitude, optics, float(z))
    if simulated.shape != hologram.shape:
        raise ValidationError(
            f"hologram shape {tuple(hologram.shape)} does not match prediction "
            f"{tuple(simulated.shape)}"
        )
    return mse(simulated, hologram)


def loss_cd(pred_phase, gt_phase, hologram, z, optics, alpha):
    """Co-driven loss: alpha * data term + physics term."""
    return alpha * loss_dd(pred_phase, gt_phase) + loss_physics(
        pred_phase, None, hologram, z, optics
    )


def loss_dd_dual(pred_phase, pred_amplitude, gt_phase, gt_amplitude, beta):
    """Supervised dual-output loss: phase term + beta * amplitude term."""
    return loss_dd(pred_phase, gt_phase) + beta * mse(pred_amplitude, gt_amplitude)


_DISK_CACHE = {}


def aperture_mask(n, radius, device=None, dtype=torch.float32):
    """Centered binary disk C(r) on an n x n grid."""
    key = (n, float(radius), str(device), dtype)
    hit = _DISK_CACHE.get(key)
    if hit is None:
        coords = torch.arange(n, dtype=torch.float64) - n // 2
        r2 = coords[None, :] ** 2 + coords[:, None] ** 2
        hit = (r2 <= float(radius) ** 2).to(dtype)
        if device is not None:
            hit = hit.to(device)
        _DISK_CACHE[key] = hit
    return hit


def loss_aperture(pred_amplitude, radius):
    """Penalty on amplitude outside a centered disk of the given radius."""
    n = pred_amplitude.shape[-1]
    mask = aperture_mask(n, radius, pred_amplitude.device, pred_amplitude.dtype)
    outside = pred_amplitude * (1.0 - mask)
    return torch.mean(outside**2)


def loss_multidistance(pred_phase, pred_amplitude, holograms, distances, optics):
    """Sum of physics losses at each defocus distance."""
    if len(holograms) != len(distances):
        raise ValidationError("one hologram per distance required")
    total = None
    for holo, z in zip(holograms, distances):
        term = loss_physics(pred_phase, pred_amplitude, holo, z, optics)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# loss wiring shared by train / upd / tpdr


def _strategy_losses(cfg, spec, optics, distances):
    """Returns fn(outputs, batch) -> dict of loss terms (incl. 'total')."""
    dual = "amplitude" in spec.output_heads
    if cfg.aperture_radius is not None and not dual:
        raise ConfigurationError("aperture constraint needs an amplitude head")

    def physics_term(outputs, holos):
        pred_phase = outputs["phase"]
        pred_amp = outputs.get("amplitude")
        total = None
        for idx, z in enumerate(distances):
            term = loss_physics(pred_phase, pred_amp, holos[:, idx:idx + 1], z, optics)
            total = term if total is None else total + term
        return total

    def data_term(outputs, batch):
        term = loss_dd(outputs["phase"], batch["gt_phase"])
        if dual and batch.get("gt_amplitude") is not None:
            term = term + cfg.beta * mse(outputs["amplitude"], batch["gt_amplitude"])
        return term

    def fn(outputs, batch):
        terms = {}
        if cfg.kind == DD:
            terms["data"] = data_term(outputs, batch)
        elif cfg.kind == CD:
            terms["data"] = cfg.alpha * data_term(outputs, batch)
            terms["physics"] = physics_term(outputs, batch["holograms"])
        else:  # tpd / upd / tpdr
            terms["physics"] = physics_term(outputs, batch["holograms"])
        if cfg.aperture_radius is not None:
            terms["aperture"] = loss_aperture(outputs["amplitude"], cfg.aperture_radius)
        total = sum(terms.values())
        terms["total"] = total
        return terms

    return fn


def _check_finite(value):
    if not math.isfinite(value):
        raise NumericError(f"loss became non-finite: {value}")


def _decay_lr(optimizer, cfg):
    for group in optimizer.param_groups:
        group["lr"] = max(group["lr"] * cfg.lr_decay, cfg.lr_floor)


# ---------------------------------------------------------------------------
# dataset-level training


def _select_distances(cfg, manifest):
    distances = cfg.distances or tuple(manifest.distances)
    missing = [z for z in distances if z not in tuple(manifest.distances)]
    if missing:
        raise ConfigurationError(
            f"strategy distances {missing} not present in dataset {manifest.distances}"
        )
    return distances


def _records_to_tensors(records, manifest, distances):
    index = [manifest.distances.index(z) for z in distances]
    stacks = np.stack([r.hologram_stack()[index] for r in records])
    batch = {"holograms": torch.from_numpy(stacks)}
    if records[0].gt_phase is not None:
        gt = np.stack([r.gt_phase for r in records])[:, None]
        batch["gt_phase"] = torch.from_numpy(gt)
    if records[0].gt_amplitude is not None:
        amp = np.stack([r.gt_amplitude for r in records])[:, None]
        batch["gt_amplitude"] = torch.from_numpy(amp)
    return batch


def train(cfg, manifest, spec, records=None):
    """Optimize a fresh network on a dataset; returns (model, report).

    dd/cd need ground-truth phase in the records; tpd runs on
    hologram-only datasets. upd/tpdr are per-measurement procedures and
    are rejected here (use infer_upd / refine_tpdr).
    """
    from .datagen import load_records

    if cfg.kind in (UPD, TPDR):
        raise ConfigurationError(f"{cfg.kind} is a per-measurement procedure, not dataset training")
    if cfg.kind in (DD, CD) and not manifest.has_ground_truth:
        raise ConfigurationError(
            f"{cfg.kind} requires ground-truth phase but the dataset stores holograms only"
        )
    distances = _select_distances(cfg, manifest)
    if spec.input_channels != len(distances):
        raise ConfigurationError(
            f"model expects {spec.input_channels} input channels but strategy uses "
            f"{len(distances)} distance(s)"
        )
    if records is None:
        records = load_records(manifest)
    data = _records_to_tensors(records, manifest, distances)
    count = data["holograms"].shape[0]

    device = current_device()
    model = build_model(spec).to(device)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    loss_fn = _strategy_losses(cfg, spec, manifest.optics, distances)
    rng = np.random.default_rng(cfg.rng_seed)

    traces = {}
    steps = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        epoch_terms = {}
        n_batches = 0
        for start in range(0, count, cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size].copy())
            batch = {k: v[idx].to(device) for k, v in data.items()}
            outputs = model(batch["holograms"])
            terms = loss_fn(outputs, batch)
            optimizer.zero_grad()
            terms["total"].backward()
            optimizer.step()
            steps += 1
            n_batches += 1
            for k, v in terms.items():
                epoch_terms[k] = epoch_terms.get(k, 0.0) + float(v.detach())
        for k, v in epoch_terms.items():
            traces.setdefault(k, []).append(v / n_batches)
        _check_finite(traces["total"][-1])
        if (epoch + 1) % cfg.lr_decay_every_epochs == 0:
            _decay_lr(optimizer, cfg)

    model = model.to("cpu")
    model.eval()
    model.provenance = {
        "strategy": cfg.kind,
        "epochs": cfg.epochs,
        "cycles": 0,
        "distances": list(distances),
        "optics": manifest.optics.to_json_dict(),
        "corpus": manifest.corpus_descriptor,
    }
    report = TrainReport(
        kind=cfg.kind,
        traces=traces,
        wall_seconds=time.perf_counter() - t0,
        steps=steps,
        model=model,
    )
    return model, report


# ---------------------------------------------------------------------------
# inference


def _stack_holograms(holograms):
    """Normalize a Hologram / list of Holograms to ((1,C,N,N), optics, distances)."""
    if isinstance(holograms, Hologram):
        holograms = [holograms]
    if not holograms or not all(isinstance(h, Hologram) for h in holograms):
        raise ValidationError("expected a Hologram or a list of Holograms")
    optics = holograms[0].config
    distances = tuple(h.z for h in holograms)
    stack = torch.stack([h.intensity.to(torch.float32) for h in holograms])[None]
    return stack, optics, distances


def infer_trained(model, holograms):
    """One forward pass; returns (outputs, wall_seconds)."""
    stack, _, _ = _stack_holograms(holograms)
    model.eval()
    t0 = time.perf_counter()
    with torch.no_grad():
        outputs = forward(model, stack)
    seconds = time.perf_counter() - t0
    return {k: v.detach() for k, v in outputs.items()}, seconds


def _optimize_single(model, cfg, holograms, label):
    """Shared upd/tpdr loop: per-measurement physics optimization.

    Returns the best-loss iterate (not the last): outputs, report.
    """
    stack, optics, distances = _stack_holograms(holograms)
    spec = model.spec
    if spec.input_channels != stack.shape[1]:
        raise ConfigurationError(
            f"model expects {spec.input_channels} channels, got {stack.shape[1]} hologram(s)"
        )
    device = current_device()
    model = model.to(device)
    stack = stack.to(device)
    loss_fn = _strategy_losses(cfg, spec, optics, distances)
    batch = {"holograms": stack}

    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    traces = {}
    best_loss = math.inf
    best_state = None
    best_cycle = -1
    t0 = time.perf_counter()
    model.train()
    for cycle in range(cfg.cycles):
        outputs = model(stack)
        terms = loss_fn(outputs, batch)
        optimizer.zero_grad()
        terms["total"].backward()
        optimizer.step()
        value = float(terms["total"].detach())
        _check_finite(value)
        for k, v in terms.items():
            traces.setdefault(k, []).append(float(v.detach()))
        if value < best_loss:
            best_loss = value
            best_cycle = cycle
            best_state = copy.deepcopy(model.state_dict())
        if (cycle + 1) % cfg.lr_decay_every_cycles == 0:
            _decay_lr(optimizer, cfg)
    if best_state is not None:
        model.load_state_dict(best_state)
    model = model.to("cpu")
    stack = stack.to("cpu")
    model.eval()
    with torch.no_grad():
        outputs = {k: v.detach() for k, v in model(stack).items()}
    model.provenance = dict(model.provenance)
    model.provenance.update({"strategy": label, "cycles": cfg.cycles})
    report = TrainReport(
        kind=label,
        traces=traces,
        wall_seconds=time.perf_counter() - t0,
        steps=cfg.cycles,
        best_cycle=best_cycle if best_cycle >= 0 else None,
        model=model,
    )
    return outputs, report


def infer_upd(holograms, spec, cfg):
    """Untrained physics-driven inference on a single measurement."""
    model = build_model(spec)
    run_cfg = cfg if cfg.kind == UPD else cfg.with_(kind=UPD)
    return _optimize_single(model, run_cfg, holograms, UPD)


def refine_tpdr(model, holograms, cfg):
    """Per-measurement refinement of a tpd-trained network.

    The caller's model is not mutated; refinement runs on a copy.
    """
    if model.provenance.get("strategy") != TPD:
        warnings.warn(
            f"refining weights trained by {model.provenance.get('strategy')!r}, "
            "expected 'tpd'",
            stacklevel=2,
        )
    clone = copy.deepcopy(model)
    run_cfg = cfg if cfg.kind == TPDR else cfg.with_(kind=TPDR)
    return _optimize_single(clone, run_cfg, holograms, TPDR)

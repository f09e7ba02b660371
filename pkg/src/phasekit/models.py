"""U-Net and Y-Net builders plus checkpoint persistence.

The single-output network maps a hologram stack to a phase map; the
Y-Net shares the encoder and runs a second, independent decoder for
amplitude. Output heads are activation-bounded: phase lands in the
declared phase range, amplitude in [0, 1], for any finite input.

Initialization draws from an explicit torch.Generator seeded by the
model spec, so two builds with the same spec are bit-identical without
touching the global RNG (safe under concurrent harness jobs).
"""

import io
import json
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, CorruptCheckpointError, ValidationError

PHASE_HEAD = "phase"
AMPLITUDE_HEAD = "amplitude"

CHECKPOINT_MAGIC = b"PRC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; fully determines the weight shapes."""

    input_channels: int = 1
    output_heads: tuple = (PHASE_HEAD,)
    depth: int = 4
    base_width: int = 32
    rng_seed: int = 0
    phase_range: tuple = (0.0, math.pi)

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigurationError("depth must be >= 2")
        if self.input_channels not in (1, 3):
            raise ConfigurationError("input_channels must be 1 or 3")
        heads = tuple(self.output_heads)
        if heads not in ((PHASE_HEAD,), (PHASE_HEAD, AMPLITUDE_HEAD)):
            raise ConfigurationError(f"unsupported output heads {heads}")
        object.__setattr__(self, "output_heads", heads)
        lo, hi = self.phase_range
        if not lo < hi:
            raise ConfigurationError("phase_range must be increasing")
        object.__setattr__(self, "phase_range", (float(lo), float(hi)))

    @property
    def dual_output(self):
        return AMPLITUDE_HEAD in self.output_heads

    def to_json_dict(self):
        return {
            "input_channels": self.input_channels,
            "output_heads": list(self.output_heads),
            "depth": self.depth,
            "base_width": self.base_width,
            "rng_seed": self.rng_seed,
            "phase_range": list(self.phase_range),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            input_channels=d["input_channels"],
            output_heads=tuple(d["output_heads"]),
            depth=d["depth"],
            base_width=d["base_width"],
            rng_seed=d["rng_seed"],
            phase_range=tuple(d["phase_range"]),
        )


def _norm(channels):
    return nn.GroupNorm(min(8, channels), channels)


class DoubleConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


class Decoder(nn.Module):
    """Upsampling path with skip concatenation and a bounded 1x1 head."""

    def __init__(self, widths, head):
        super().__init__()
        self.head_kind = head
        self.reduce = nn.ModuleList()
        self.blocks = nn.ModuleList()
        up_from = widths[-1] * 2  # bottleneck width
        for w in reversed(widths):
            self.reduce.append(nn.Conv2d(up_from, w, 1))
            self.blocks.append(DoubleConv(2 * w, w))
            up_from = w
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, bottom, skips, phase_range):
        x = bottom
        for reduce, block, skip in zip(self.reduce, self.blocks, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = reduce(x)
            x = block(torch.cat([x, skip], dim=1))
        out = torch.sigmoid(self.head(x))
        if self.head_kind == PHASE_HEAD:
            lo, hi = phase_range
            out = lo + (hi - lo) * out
        return out


class PhaseNet(nn.Module):
    """Shared encoder, one decoder per output head."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.provenance = {"strategy": "untrained", "epochs": 0, "cycles": 0}
        widths = [spec.base_width * 2**d for d in range(spec.depth)]
        self.encoders = nn.ModuleList()
        cin = spec.input_channels
        for w in widths:
            self.encoders.append(DoubleConv(cin, w))
            cin = w
        self.bottleneck = DoubleConv(widths[-1], widths[-1] * 2)
        self.decoders = nn.ModuleDict(
            {head: Decoder(widths, head) for head in spec.output_heads}
        )
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.input_channels:
            raise ValidationError(
                f"expected input (B, {spec.input_channels}, N, N), got {tuple(x.shape)}"
            )
        n = x.shape[-1]
        if x.shape[-2] != n or n % 2**spec.depth != 0:
            raise ConfigurationError(
                f"grid size {tuple(x.shape[-2:])} not divisible by 2^depth={2**spec.depth}"
            )
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        return {
            head: dec(x, skips, spec.phase_range) for head, dec in self.decoders.items()
        }


def _init_weights(model, seed):
    gen = torch.Generator().manual_seed(seed)
    for name, module in sorted(model.named_modules(), key=lambda kv: kv[0]):
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                module.weight.normal_(0.0, std, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.GroupNorm):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def build_model(spec):
    """Construct a network with deterministic, spec-seeded initialization."""
    model = PhaseNet(spec)
    _init_weights(model, spec.rng_seed)
    return model


def parameter_count(spec):
    return sum(p.numel() for p in build_model(spec).parameters())


def forward(model, holograms):
    """Single forward pass; accepts (N,N), (C,N,N) or (B,C,N,N) input."""
    x = holograms
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    x = x.to(torch.float32)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    out = model(x)
    return out


# ---------------------------------------------------------------------------
# checkpoints: versioned header + named-tensor table, float32 little-endian


def save_checkpoint(model, path):
    state = model.state_dict()
    names = sorted(state.keys())
    table = []
    payload = io.BytesIO()
    for name in names:
        tensor = state[name].detach().cpu().to(torch.float32).contiguous()
        arr = tensor.numpy().astype("<f4")
        table.append({"name": name, "shape": list(tensor.shape)})
        payload.write(arr.tobytes())
    meta = {
        "spec": model.spec.to_json_dict(),
        "provenance": model.provenance,
        "tensors": table,
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(payload.getvalue())


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CorruptCheckpointError(f"{path}: truncated header")
    version, meta_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {version}")
    try:
        meta = json.loads(blob[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: corrupt metadata") from exc
    spec = ModelSpec.from_json_dict(meta["spec"])
    model = build_model(spec)
    offset = 12 + meta_len
    state = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptCheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CorruptCheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    model.load_state_dict(state)
    model.provenance = meta["provenance"]
    return model

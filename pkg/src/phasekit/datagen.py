"""Dataset construction: image corpora to phase objects to holograms.

A dataset is a directory with a ``manifest.json`` and one subdirectory
per record under ``records/``. Every tensor is a .prt file (see
tensorio). Holograms are computed in float64 through the optics module
and stored as float32, so re-forming a hologram from the stored ground
truth reproduces the stored file bit-for-bit.
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from scipy import ndimage

from . import tensorio
from .errors import StorageError, ValidationError
from .optics import Hologram, OpticalConfig, SampleObject, form_hologram

CONTAINER_VERSION = "1"
DEFAULT_PHASE_RANGE = (0.0, math.pi)

IMAGE_EXTENSIONS = {".png", ".bmp", ".pgm"}


# ---------------------------------------------------------------------------
# image -> object maps


def image_to_phase(image, phase_range, grid_size):
    """Resize an image in [0, 1] to the grid and map it affinely to phase.

    Bilinear, antialiased resize (area averaging when shrinking); the
    affine map sends 0 -> p_min and 1 -> p_max.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValidationError("empty image")
    if not np.isfinite(img).all():
        raise ValidationError("image contains NaN/Inf")
    p_min, p_max = phase_range
    if not p_min < p_max:
        raise ValidationError(f"invalid phase range [{p_min}, {p_max}]")
    resized = _resize(img, grid_size)
    return p_min + resized * (p_max - p_min)


def _resize(img, n):
    if img.shape == (n, n):
        return img
    interp = cv2.INTER_AREA if img.shape[0] > n else cv2.INTER_LINEAR
    return cv2.resize(img, (n, n), interpolation=interp).astype(np.float64)


@dataclass(frozen=True)
class RMEConfig:
    """Random-matrix-enlargement aberration phase settings."""

    seed_matrix_size: int = 4
    amplitude_range: tuple = (0.0, 2.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.seed_matrix_size < 1:
            raise ValidationError("seed_matrix_size must be >= 1")
        lo, hi = self.amplitude_range
        if lo > hi:
            raise ValidationError("amplitude_range min must be <= max")

    def to_json_dict(self):
        return {
            "seed_matrix_size": self.seed_matrix_size,
            "amplitude_range": list(self.amplitude_range),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(d["seed_matrix_size"], tuple(d["amplitude_range"]), d["rng_seed"])


def rme_aberration(cfg, grid_size):
    """Smooth random phase: a k x k uniform seed bicubically enlarged.

    Deterministic for a fixed rng_seed. The cubic spline wraps at the
    borders, which keeps the enlarged map free of edge discontinuities
    (its spectrum stays below the k-cell scale); overshoot is clamped
    back into the amplitude range.
    """
    k = cfg.seed_matrix_size
    if k > grid_size:
        raise ValidationError(f"seed matrix {k} larger than grid {grid_size}")
    rng = np.random.default_rng(cfg.rng_seed)
    seed = rng.uniform(0.0, 1.0, size=(k, k))
    if k == 1:
        big = np.full((grid_size, grid_size), seed[0, 0])
    else:
        big = ndimage.zoom(seed, grid_size / k, order=3, mode="grid-wrap", grid_mode=True)
    lo, hi = cfg.amplitude_range
    out = lo + big.astype(np.float64) * (hi - lo)
    return np.clip(out, min(lo, hi), max(lo, hi))


# ---------------------------------------------------------------------------
# corpora

SYNTHETIC_STYLES = ("dense", "medium", "sparse")


def synthetic_corpus(count, style, rng_seed=0, size=256):
    """Deterministic stream of synthetic images in [0, 1].

    dense: multi-scale filtered noise textures (stand-in for natural
    images); sparse: a few bright strokes on an empty background
    (handwritten-digit-like); medium: smooth blobby textures in between.
    """
    if count <= 0:
        raise ValidationError("count must be positive")
    if style not in SYNTHETIC_STYLES:
        raise ValidationError(f"unknown corpus style {style!r}")
    rng = np.random.default_rng(rng_seed)
    for _ in range(count):
        if style == "sparse":
            yield _sparse_glyph(rng, size)
        elif style == "dense":
            yield _noise_texture(rng, size, scales=(4, 8, 16, 32, 64), floor=0.05)
        else:
            yield _noise_texture(rng, size, scales=(4, 8), floor=0.02)


def _noise_texture(rng, size, scales, floor):
    img = np.zeros((size, size))
    for i, k in enumerate(scales):
        layer = rng.uniform(0, 1, size=(k, k))
        img += cv2.resize(layer, (size, size), interpolation=cv2.INTER_CUBIC) / (i + 1)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return np.clip(floor + (1 - floor) * img, 0.0, 1.0)


def _sparse_glyph(rng, size):
    img = np.zeros((size, size), dtype=np.float64)
    n_strokes = rng.integers(2, 6)
    for _ in range(n_strokes):
        p0 = rng.uniform(0.15, 0.85, size=2) * size
        p1 = rng.uniform(0.15, 0.85, size=2) * size
        ctrl = (p0 + p1) / 2 + rng.normal(scale=0.12 * size, size=2)
        t = np.linspace(0, 1, 4 * size)[:, None]
        path = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * ctrl + t**2 * p1
        thickness = int(rng.integers(1, 4))
        for y, x in path:
            yi, xi = int(round(y)), int(round(x))
            img[max(0, yi - thickness):yi + thickness + 1,
                max(0, xi - thickness):xi + thickness + 1] = 1.0
    return img


def folder_corpus(directory, grid_size=None):
    """Images of a folder (PNG/BMP/PGM) in lexicographic order, in [0, 1]."""
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not files:
        raise ValidationError(f"no corpus images found in {directory}")
    for path in files:
        img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise StorageError(f"unreadable image {path}")
        yield img.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# records and manifests


@dataclass
class DatasetRecord:
    """One sample: hologram stack, optional ground truth and aberration."""

    record_id: str
    holograms: list
    gt_phase: np.ndarray = None
    gt_amplitude: np.ndarray = None
    aberration_phase: np.ndarray = None

    def hologram_stack(self):
        """(C, N, N) float32 array, one channel per distance."""
        return np.stack([h.numpy().astype(np.float32) for h in self.holograms])


@dataclass
class DatasetManifest:
    optics: OpticalConfig
    distances: list
    count: int
    phase_range: tuple
    corpus_descriptor: str
    records: list
    container_version: str = CONTAINER_VERSION
    root: Path = None

    def __post_init__(self):
        if self.count <= 0:
            raise ValidationError("dataset must contain at least one record")
        if self.count != len(self.records):
            raise ValidationError("manifest count does not match record list")

    @property
    def has_ground_truth(self):
        return bool(self.records) and self.records[0].get("gt_phase") is not None

    def to_json_dict(self):
        return {
            "container_version": self.container_version,
            "optics": self.optics.to_json_dict(),
            "distances_m": list(self.distances),
            "count": self.count,
            "phase_range": list(self.phase_range),
            "corpus_descriptor": self.corpus_descriptor,
            "records": self.records,
        }

    @classmethod
    def from_json_dict(cls, d, root=None):
        return cls(
            optics=OpticalConfig.from_json_dict(d["optics"]),
            distances=[float(z) for z in d["distances_m"]],
            count=d["count"],
            phase_range=tuple(d["phase_range"]),
            corpus_descriptor=d["corpus_descriptor"],
            records=d["records"],
            container_version=d["container_version"],
            root=root,
        )


def _distance_token(z):
    return format(z, ".6g")


def write_record(root, record, distances):
    rec_dir = Path(root) / "records" / record.record_id
    try:
        rec_dir.mkdir(parents=True, exist_ok=True)
        entry = {"id": record.record_id, "holograms": {}}
        for holo, z in zip(record.holograms, distances):
            name = f"holo_{_distance_token(z)}.prt"
            tensorio.write_tensor(rec_dir / name, holo.numpy().astype(np.float32))
            entry["holograms"][_distance_token(z)] = f"records/{record.record_id}/{name}"
        for attr, fname in (
            ("gt_phase", "gt_phase.prt"),
            ("gt_amplitude", "gt_amp.prt"),
            ("aberration_phase", "aberration.prt"),
        ):
            arr = getattr(record, attr)
            if arr is not None:
                tensorio.write_tensor(rec_dir / fname, np.asarray(arr, dtype=np.float32))
                entry[attr] = f"records/{record.record_id}/{fname}"
            else:
                entry[attr] = None
        return entry
    except OSError as exc:
        raise StorageError(f"failed writing record {record.record_id}: {exc}") from exc


def load_record(root, entry, optics, distances):
    root = Path(root)
    holos = []
    for z in distances:
        rel = entry["holograms"][_distance_token(z)]
        arr = tensorio.read_tensor(root / rel)
        holos.append(Hologram(torch.from_numpy(arr), z, optics))
    def _maybe(key):
        rel = entry.get(key)
        return tensorio.read_tensor(root / rel) if rel else None
    return DatasetRecord(
        record_id=entry["id"],
        holograms=holos,
        gt_phase=_maybe("gt_phase"),
        gt_amplitude=_maybe("gt_amplitude"),
        aberration_phase=_maybe("aberration_phase"),
    )


def load_manifest(dataset_dir):
    dataset_dir = Path(dataset_dir)
    path = dataset_dir / "manifest.json"
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    return DatasetManifest.from_json_dict(data, root=dataset_dir)


def load_records(manifest):
    if manifest.root is None:
        raise StorageError("manifest has no on-disk root")
    return [
        load_record(manifest.root, entry, manifest.optics, manifest.distances)
        for entry in manifest.records
    ]


# ---------------------------------------------------------------------------
# generation


def form_record_holograms(phase32, amplitude32, aberration32, optics, distances):
    """Holograms for stored float32 object maps, in float64 precision.

    The float32 inputs are exactly what a record persists; computing in
    float64 from them makes regeneration from disk reproduce the stored
    float32 holograms bit-for-bit.
    """
    object_phase = phase32.astype(np.float64)
    if aberration32 is not None:
        object_phase = object_phase + aberration32.astype(np.float64)
    amp = None if amplitude32 is None else torch.from_numpy(amplitude32.astype(np.float64))
    sample = SampleObject(torch.from_numpy(object_phase), amp)
    out = []
    for z in distances:
        holo = form_hologram(sample, z, optics)
        out.append(Hologram(holo.intensity.to(torch.float32), z, optics))
    return out


def generate_dataset(
    corpus,
    out_dir,
    optics,
    count,
    distances=None,
    phase_range=DEFAULT_PHASE_RANGE,
    amplitude_source=None,
    aberration=None,
    keep_ground_truth=True,
    corpus_descriptor="",
):
    """Build a dataset on disk and return its manifest.

    corpus / amplitude_source are iterables of images in [0, 1] (see
    synthetic_corpus / folder_corpus). The ground-truth phase stored per
    record never includes the aberration phase; the holograms do.
    """
    out_dir = Path(out_dir)
    distances = [float(z) for z in (distances or optics.distances)]
    n = optics.grid_size
    corpus_it = iter(corpus)
    amp_it = iter(amplitude_source) if amplitude_source is not None else None

    entries = []
    made = 0
    for index in range(count):
        try:
            img = next(corpus_it)
        except StopIteration:
            raise ValidationError(
                f"corpus exhausted after {made} of {count} records"
            ) from None
        # hold object maps as the exact float32 values that get stored, so
        # re-forming a hologram from the persisted record is bit-identical
        phase = image_to_phase(img, phase_range, n).astype(np.float32)
        amplitude = None
        if amp_it is not None:
            try:
                amp_img = next(amp_it)
            except StopIteration:
                raise ValidationError(
                    f"amplitude source exhausted after {made} of {count} records"
                ) from None
            amplitude = np.clip(
                _resize(np.asarray(amp_img, dtype=np.float64), n), 0.0, 1.0
            ).astype(np.float32)

        aberration_phase = None
        if aberration is not None:
            per_record = RMEConfig(
                seed_matrix_size=aberration.seed_matrix_size,
                amplitude_range=aberration.amplitude_range,
                rng_seed=aberration.rng_seed + index,
            )
            aberration_phase = rme_aberration(per_record, n).astype(np.float32)

        holos = form_record_holograms(phase, amplitude, aberration_phase, optics, distances)
        record = DatasetRecord(
            record_id=f"{index:06d}",
            holograms=holos,
            gt_phase=phase if keep_ground_truth else None,
            gt_amplitude=amplitude if keep_ground_truth else None,
            aberration_phase=aberration_phase,
        )
        entries.append(write_record(out_dir, record, distances))
        made += 1

    manifest = DatasetManifest(
        optics=optics,
        distances=distances,
        count=count,
        phase_range=tuple(phase_range),
        corpus_descriptor=corpus_descriptor,
        records=entries,
        root=out_dir,
    )
    try:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest.to_json_dict(), fh, indent=2)
    except OSError as exc:
        raise StorageError(f"failed writing manifest: {exc}") from exc
    return manifest


def ingest_external_hologram(path, optics):
    """Load a recorded hologram image under user-supplied optics.

    Grayscale conversion, bilinear resize to the configured grid, then
    scaling so the mean intensity equals the unit plane-wave reference.
    """
    if optics is None:
        raise ValidationError("external holograms require explicit optics metadata")
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise StorageError(f"unreadable hologram file {path}")
    arr = img.astype(np.float64)
    if float(arr.var()) == 0.0:
        warnings.warn(f"{path}: hologram has zero variance", stacklevel=2)
    arr = _resize(arr, optics.grid_size)
    mean = arr.mean()
    if mean > 0:
        arr = arr / mean
    z = optics.distances[0]
    return Hologram(torch.from_numpy(arr), z, optics)

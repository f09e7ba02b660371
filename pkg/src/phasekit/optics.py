"""Scalar-diffraction forward model for in-line holography.

Propagation uses the angular-spectrum method: multiply the field
spectrum by exp(i*2*pi*z*sqrt(1/lambda^2 - fx^2 - fy^2)) and zero the
evanescent frequencies. On the periodic grid the transform is unitary,
so grid energy is conserved exactly whenever no evanescent content is
removed. All tensor math runs through torch and is differentiable, so
holograms can sit inside training losses.

Sign convention: positive z propagates from the object plane toward the
sensor. A hologram is the intensity |u|^2 of the propagated field, with
a unit plane wave serving as reference level 1.
"""

import json
import logging
import math
import threading
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigurationError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_WAVELENGTH = 532e-9
DEFAULT_PITCH = 4e-6
DEFAULT_GRID = 256
DEFAULT_DISTANCE = 20e-3


@dataclass(frozen=True)
class OpticalConfig:
    """Geometry of the simulated imaging system (SI units)."""

    wavelength: float = DEFAULT_WAVELENGTH
    pixel_pitch: float = DEFAULT_PITCH
    grid_size: int = DEFAULT_GRID
    pad: bool = False
    distance: tuple = (DEFAULT_DISTANCE,)

    def __post_init__(self):
        if not (self.wavelength > 0 and math.isfinite(self.wavelength)):
            raise ConfigurationError(f"wavelength must be positive, got {self.wavelength}")
        if not (self.pixel_pitch > 0 and math.isfinite(self.pixel_pitch)):
            raise ConfigurationError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        n = self.grid_size
        if n < 8 or n % 2 != 0:
            raise ConfigurationError(f"grid_size must be even and >= 8, got {n}")
        zs = self.distance
        if isinstance(zs, (int, float)):
            zs = (float(zs),)
        object.__setattr__(self, "distance", tuple(float(z) for z in zs))
        for z in self.distance:
            if not math.isfinite(z):
                raise ConfigurationError(f"non-finite propagation distance {z}")

    @property
    def distances(self):
        return self.distance

    @property
    def extent(self):
        """Physical side length of the grid in meters."""
        return self.grid_size * self.pixel_pitch

    def max_well_sampled_distance(self):
        """|z| above which the transfer-function phase is undersampled."""
        return self.extent**2 / self.wavelength

    def to_json_dict(self):
        return {
            "wavelength_m": self.wavelength,
            "pixel_pitch_m": self.pixel_pitch,
            "grid_size": self.grid_size,
            "pad": self.pad,
            "distance_m": list(self.distance),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            wavelength=d["wavelength_m"],
            pixel_pitch=d["pixel_pitch_m"],
            grid_size=d["grid_size"],
            pad=d["pad"],
            distance=tuple(d["distance_m"]),
        )

    def dumps(self):
        return json.dumps(self.to_json_dict(), indent=2)

    def with_(self, **kwargs):
        return replace(self, **kwargs)


def _as_tensor(values, complex_ok=True):
    if isinstance(values, torch.Tensor):
        return values
    arr = np.asarray(values)
    return torch.from_numpy(arr.copy() if not arr.flags.writeable else arr)


@dataclass
class ComplexField:
    """Sampled complex wave on a square grid, carrying its optics."""

    values: torch.Tensor
    config: OpticalConfig

    def __post_init__(self):
        self.values = _as_tensor(self.values)
        if not self.values.is_complex():
            self.values = self.values.to(torch.complex128)
        _check_grid(self.values, self.config)
        if not torch.isfinite(self.values.real).all() or not torch.isfinite(self.values.imag).all():
            raise ValidationError("field contains NaN/Inf")

    def energy(self):
        return float((self.values.abs() ** 2).sum())

    def numpy(self):
        return self.values.detach().cpu().numpy()


@dataclass
class SampleObject:
    """Object-plane phase map (radians) and amplitude map.

    amplitude=None marks a phase-only object (amplitude identically 1).
    """

    phase: torch.Tensor
    amplitude: torch.Tensor = None

    def __post_init__(self):
        self.phase = _as_tensor(self.phase)
        if self.phase.is_complex():
            raise ValidationError("phase must be a real grid")
        if not torch.isfinite(self.phase.detach()).all():
            raise ValidationError("phase contains NaN/Inf")
        if self.amplitude is not None:
            self.amplitude = _as_tensor(self.amplitude)
            if self.amplitude.shape != self.phase.shape:
                raise ValidationError("amplitude/phase shape mismatch")
            amp = self.amplitude.detach()
            if not torch.isfinite(amp).all():
                raise ValidationError("amplitude contains NaN/Inf")
            if float(amp.min()) < 0.0 or float(amp.max()) > 1.0 + 1e-6:
                raise ValidationError("amplitude entries must lie in [0, 1]")

    @property
    def phase_only(self):
        return self.amplitude is None

    def check_phase_range(self, phase_range):
        lo, hi = phase_range
        pmin, pmax = float(self.phase.min()), float(self.phase.max())
        if pmin < lo - 1e-9 or pmax > hi + 1e-9:
            raise ValidationError(
                f"phase [{pmin:.4g}, {pmax:.4g}] outside declared range [{lo:.4g}, {hi:.4g}]"
            )

    def to_field(self, config, dtype=torch.complex128):
        """A * exp(i P) as a ComplexField under the given optics."""
        real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
        p = self.phase.to(real_dtype)
        u = torch.exp(1j * p)
        if self.amplitude is not None:
            u = self.amplitude.to(real_dtype) * u
        return ComplexField(u.to(dtype), config)


@dataclass
class Hologram:
    """Recorded intensity image with its defocus distance."""

    intensity: torch.Tensor
    z: float
    config: OpticalConfig

    def __post_init__(self):
        self.intensity = _as_tensor(self.intensity)
        if self.intensity.is_complex():
            raise ValidationError("hologram intensity must be real")
        if not torch.isfinite(self.intensity.detach()).all():
            raise ValidationError("hologram contains NaN/Inf")
        if float(self.intensity.detach().min()) < -1e-9:
            raise ValidationError("hologram intensity must be non-negative")
        self.z = float(self.z)

    def numpy(self):
        return self.intensity.detach().cpu().numpy()


def _check_grid(values, config):
    if values.ndim < 2 or values.shape[-1] != values.shape[-2]:
        raise ConfigurationError(f"grid must be square, got shape {tuple(values.shape)}")
    n = values.shape[-1]
    if n % 2 != 0:
        raise ConfigurationError(f"grid size must be even, got {n}")
    if n != config.grid_size:
        raise ConfigurationError(
            f"grid size {n} does not match config.grid_size {config.grid_size}"
        )


_TF_CACHE = {}
_TF_LOCK = threading.Lock()


def _transfer_function(n, pitch, wavelength, z, device, cdtype):
    """Angular-spectrum transfer function and its evanescent mask.

    Frequencies are the standard DFT frequencies k/(n*pitch) with
    k in [-n/2, n/2). Evanescent components (fx^2+fy^2 > 1/lambda^2)
    are zeroed.
    """
    key = (n, pitch, wavelength, z, str(device), cdtype)
    with _TF_LOCK:
        hit = _TF_CACHE.get(key)
    if hit is not None:
        return hit
    rdtype = torch.float64 if cdtype == torch.complex128 else torch.float32
    fx = torch.fft.fftfreq(n, d=pitch, dtype=torch.float64, device=device)
    f2 = fx[None, :] ** 2 + fx[:, None] ** 2
    arg = 1.0 / wavelength**2 - f2
    propagating = arg > 0
    kz = torch.sqrt(torch.clamp(arg, min=0.0))
    tf = torch.exp(1j * (2.0 * math.pi * z) * kz) * propagating
    tf = tf.to(cdtype)
    out = (tf, propagating)
    with _TF_LOCK:
        _TF_CACHE[key] = out
    return out


def propagate_tensor(u, config, z, warn_sampling=True):
    """Angular-spectrum propagation of a complex tensor (..., N, N).

    Differentiable; preserves dtype (complex64 or complex128). z=0 is
    an exact identity.
    """
    if not isinstance(u, torch.Tensor) or not u.is_complex():
        raise ValidationError("propagate_tensor expects a complex torch tensor")
    n = u.shape[-1]
    if u.shape[-2] != n or n % 2 != 0:
        raise ConfigurationError(f"grid must be square and even, got {tuple(u.shape[-2:])}")
    if z == 0.0:
        return u
    if warn_sampling and abs(z) >= config.max_well_sampled_distance():
        warnings.warn(
            f"|z|={abs(z):.3g} m exceeds the well-sampled propagation range "
            f"{config.max_well_sampled_distance():.3g} m for this grid",
            stacklevel=2,
        )
    tf, propagating = _transfer_function(
        n, config.pixel_pitch, config.wavelength, float(z), u.device, u.dtype
    )
    spectrum = torch.fft.fft2(u)
    if not bool(propagating.all()):
        removed = (spectrum.detach().abs() ** 2 * (~propagating)).sum()
        if float(removed) > 0.0:
            log.debug("propagation zeroed evanescent energy: %.3g", float(removed))
    return torch.fft.ifft2(spectrum * tf)


def angular_spectrum_propagate(fld, z):
    """Propagate a ComplexField by distance z (meters)."""
    if not torch.isfinite(fld.values.real).all():
        raise ValidationError("field contains NaN/Inf")
    out = propagate_tensor(fld.values, fld.config, float(z))
    return ComplexField(out, fld.config)


def _embed_in_plane(u, factor=2):
    """Center u in a factor*N sized unit-amplitude, zero-phase field."""
    n = u.shape[-1]
    big = factor * n
    canvas = torch.ones(u.shape[:-2] + (big, big), dtype=u.dtype, device=u.device)
    lo = (big - n) // 2
    canvas[..., lo:lo + n, lo:lo + n] = u
    return canvas, lo


def form_hologram_tensor(phase, amplitude, config, z):
    """Intensity |G(A exp(iP), z)|^2 as a tensor; differentiable.

    phase/amplitude: real tensors (..., N, N); amplitude=None means 1.
    Honors config.pad by embedding the object in a 2N x 2N unit plane,
    propagating, and cropping the intensity back to N x N.
    """
    if not isinstance(phase, torch.Tensor):
        phase = _as_tensor(phase)
    cdtype = torch.complex128 if phase.dtype == torch.float64 else torch.complex64
    u = torch.exp(1j * phase).to(cdtype)
    if amplitude is not None:
        u = amplitude.to(u.real.dtype) * u
    if config.pad:
        n = u.shape[-1]
        u, lo = _embed_in_plane(u, 2)
        big_cfg = config.with_(grid_size=2 * n, pad=False)
        out = propagate_tensor(u, big_cfg, z)
        intensity = out.abs() ** 2
        return intensity[..., lo:lo + n, lo:lo + n]
    out = propagate_tensor(u, config, z)
    return out.abs() ** 2


def form_hologram(sample, z, config):
    """Simulate the in-line hologram of a sample at distance z."""
    _check_grid(sample.phase, config)
    intensity = form_hologram_tensor(sample.phase, sample.amplitude, config, float(z))
    return Hologram(intensity, z, config)


def pad_and_crop(sample, z, config):
    """Padded hologram formation (edge-effect suppression).

    The object is embedded centered in a 2N x 2N zero-phase,
    unit-amplitude field, propagated, and the intensity cropped back to
    the central N x N window. Requires config.pad.
    """
    if not config.pad:
        raise ConfigurationError("pad_and_crop requires config.pad = true")
    return form_hologram(sample, z, config)

"""Reconstruction quality metrics.

PSNR and SSIM follow the standard definitions (SSIM: 11x11 Gaussian
window, sigma 1.5, K1=0.01, K2=0.03, valid-region average). Phase maps
are compared after piston alignment: a global phase offset is
unobservable in intensity, so the mean difference is subtracted before
any phase metric.
"""

import numpy as np
from scipy.signal import convolve2d

from .errors import ValidationError

PSNR_CAP_DB = 100.0


def _to_2d(arr):
    a = np.asarray(arr, dtype=np.float64)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-D image, got shape {np.shape(arr)}")
    return a


def align_piston(pred, gt):
    """Remove the global phase offset: pred - mean(pred - gt)."""
    pred = _to_2d(pred)
    gt = _to_2d(gt)
    return pred - np.mean(pred - gt)


def psnr(pred, gt, data_range):
    """10*log10(range^2 / MSE); identical inputs report the 100 dB cap."""
    pred = _to_2d(pred)
    gt = _to_2d(gt)
    if pred.shape != gt.shape:
        raise ValidationError("psnr: shape mismatch")
    err = float(np.mean((pred - gt) ** 2))
    if err == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(data_range**2 / err)), PSNR_CAP_DB)


_SSIM_SIZE = 11
_SSIM_SIGMA = 1.5


def _gaussian_window():
    half = _SSIM_SIZE // 2
    g = np.exp(-0.5 * (np.arange(_SSIM_SIZE) - half) ** 2 / _SSIM_SIGMA**2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred, gt, data_range):
    """Mean structural similarity over all fully-interior windows."""
    pred = _to_2d(pred)
    gt = _to_2d(gt)
    if pred.shape != gt.shape:
        raise ValidationError("ssim: shape mismatch")
    if min(pred.shape) < _SSIM_SIZE:
        raise ValidationError(f"ssim needs images of at least {_SSIM_SIZE} px")
    w = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return convolve2d(x, w, mode="valid")

    mu_a = filt(pred)
    mu_b = filt(gt)
    var_a = filt(pred * pred) - mu_a**2
    var_b = filt(gt * gt) - mu_b**2
    cov = filt(pred * gt) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def band_split_error(pred, gt, cutoff=0.05):
    """RMS of the piston-aligned error below/above a radial frequency.

    cutoff is in cycles per pixel; the DC bin counts as low band.
    Returns (low_rms, high_rms).
    """
    pred = _to_2d(pred)
    gt = _to_2d(gt)
    err = align_piston(pred, gt) - gt
    n = err.shape[0]
    spec = np.fft.fft2(err)
    f = np.fft.fftfreq(n)
    rad = np.sqrt(f[None, :] ** 2 + f[:, None] ** 2)
    low = np.where(rad <= cutoff, spec, 0.0)
    high = np.where(rad > cutoff, spec, 0.0)
    low_rms = float(np.sqrt(np.mean(np.abs(np.fft.ifft2(low)) ** 2)))
    high_rms = float(np.sqrt(np.mean(np.abs(np.fft.ifft2(high)) ** 2)))
    return low_rms, high_rms


def line_profile(image, index, axis="row"):
    """Extract one row or column as a 1-D trace."""
    img = _to_2d(image)
    if axis not in ("row", "column"):
        raise ValidationError(f"axis must be 'row' or 'column', got {axis!r}")
    bound = img.shape[0] if axis == "row" else img.shape[1]
    if not 0 <= index < bound:
        raise ValidationError(f"{axis} index {index} out of range [0, {bound})")
    return img[index, :].copy() if axis == "row" else img[:, index].copy()


def phase_metrics(pred, gt, phase_range):
    """PSNR/SSIM of a phase map after piston alignment."""
    data_range = float(phase_range[1] - phase_range[0])
    aligned = align_piston(pred, gt)
    return {
        "psnr": psnr(aligned, gt, data_range),
        "ssim": ssim(aligned, gt, data_range),
    }


def amplitude_metrics(pred, gt):
    return {"psnr": psnr(pred, gt, 1.0), "ssim": ssim(pred, gt, 1.0)}

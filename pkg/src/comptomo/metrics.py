"""Reconstruction quality measures: SNR, PSNR, SSIM, NMSE.

SNR here is the mean-over-standard-deviation of the reconstruction alone
(the historic scipy definition), so it measures flatness rather than
fidelity; reconstructions are ranked by the other three measures.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

CSV_HEADER = "scenario,method,snr,psnr,ssim,nmse"

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    snr: float
    psnr: float
    ssim: float
    nmse: float

    def csv_row(self, scenario, method):
        return (
            f"{scenario},{method},{self.snr:.6g},{self.psnr:.6g},"
            f"{self.ssim:.6g},{self.nmse:.6g}"
        )


def _gaussian_window():
    half = _SSIM_WINDOW // 2
    ax = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-0.5 * (ax / _SSIM_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _local_mean(img, window):
    # constant-zero padding with weight renormalisation keeps the local
    # statistics well defined up to the border and for tiny images
    num = ndimage.correlate(img, window, mode="constant", cval=0.0)
    den = ndimage.correlate(np.ones_like(img), window, mode="constant", cval=0.0)
    return num / den


def structural_similarity(reconstruction, ground_truth):
    """Mean local structural similarity with an 11x11 Gaussian window.

    Dynamic range is taken from the ground truth (max - min); the window is
    renormalised near the borders.
    """
    x = np.asarray(reconstruction, dtype=float)
    y = np.asarray(ground_truth, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    dyn = float(y.max() - y.min())
    if dyn == 0.0:
        dyn = max(float(np.abs(y).max()), 1e-12)
    c1 = (_SSIM_K1 * dyn) ** 2
    c2 = (_SSIM_K2 * dyn) ** 2

    w = _gaussian_window()
    mx = _local_mean(x, w)
    my = _local_mean(y, w)
    mxx = _local_mean(x * x, w)
    myy = _local_mean(y * y, w)
    mxy = _local_mean(x * y, w)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my

    ssim_map = ((2 * mx * my + c1) * (2 * cxy + c2)) / (
        (mx * mx + my * my + c1) * (vx + vy + c2)
    )
    return float(ssim_map.mean())


def compute_metrics(reconstruction, ground_truth, squared_nmse=False):
    """All four quality measures of a reconstruction against ground truth.

    Parameters
    ----------
    squared_nmse : bool
        If True report the squared relative error instead of the relative
        L2 norm (both orderings agree).

    Returns
    -------
    MetricReport
        SNR of the reconstruction (mean/std, +inf for a flat image), PSNR in
        dB against the ground-truth peak (+inf for an exact match), SSIM and
        NMSE.
    """
    rec = np.asarray(reconstruction, dtype=float)
    gt = np.asarray(ground_truth, dtype=float)
    if rec.shape != gt.shape:
        raise ValueError(f"shape mismatch: {rec.shape} vs {gt.shape}")
    if not np.any(gt):
        raise ValueError("ground truth must not be identically zero")

    std = float(rec.std())
    snr = math.inf if std == 0.0 else float(rec.mean()) / std

    mse = float(np.mean((rec - gt) ** 2))
    peak = float(gt.max())
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(peak * peak / mse)

    rel = float(np.linalg.norm(rec - gt) / np.linalg.norm(gt))
    nmse = rel * rel if squared_nmse else rel

    return MetricReport(
        snr=snr, psnr=psnr, ssim=structural_similarity(rec, gt), nmse=nmse
    )

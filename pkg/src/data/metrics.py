"""Image-quality and distribution-distance metrics: PSNR, global SSIM, MMD."""
from typing import Optional
import numpy as np
from skimage.metrics import peak_signal_noise_ratio
from sklearn.metrics.pairwise import euclidean_distances, rbf_kernel
from src.utils.errors import MetricError

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    """10 log10(peak^2 / MSE) in dB, capped (zero MSE gives the cap)."""
    if peak <= 0:
        raise MetricError(f"peak must be positive, got {peak}")
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return cap
    return min(float(peak_signal_noise_ratio(a, b, data_range=peak)), cap)


def _ssim_global(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    return float(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))


def ssim(a, b, peak: float = 1.0) -> float:
    """
    SSIM with one window covering the whole image.

    A [N, C, H, W] stack is scored per image and averaged.
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or min(a.shape[-2:]) < 8:
        raise MetricError(f"SSIM needs spatial size >= 8, got shape {a.shape}")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    if a.ndim == 4:
        return float(np.mean([_ssim_global(x, y, c1, c2) for x, y in zip(a, b)]))
    return _ssim_global(a, b, c1, c2)


def median_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise distance of the pooled samples (1.0 when it is zero)."""
    distances = euclidean_distances(pooled, pooled)
    upper = distances[np.triu_indices(pooled.shape[0], k=1)]
    median = float(np.median(upper)) if upper.size else 0.0
    return median if median > 0 else 1.0


def mmd(samples_a, samples_b, bandwidth: Optional[float] = None) -> float:
    """
    Unbiased RBF-kernel MMD^2 between two sample sets.

    Args:
        samples_a: [n, ...] samples (flattened per sample)
        samples_b: [m, ...] samples with the same per-sample size
        bandwidth: Kernel width sigma in exp(-d^2 / (2 sigma^2)); median
                   heuristic over the pooled samples when None
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise MetricError(f"MMD needs at least 2 samples per side, got {n} and {m}")
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"Sample sizes differ: {a.shape[1]} vs {b.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([a, b]))
    if bandwidth <= 0:
        raise MetricError(f"bandwidth must be positive, got {bandwidth}")

    gamma = 1.0 / (2.0 * bandwidth ** 2)
    k_aa = rbf_kernel(a, a, gamma=gamma)
    k_bb = rbf_kernel(b, b, gamma=gamma)
    k_ab = rbf_kernel(a, b, gamma=gamma)
    return float(
        (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
        + (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
        - 2.0 * k_ab.mean()
    )

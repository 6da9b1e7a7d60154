"""Image-quality metrics and evaluation harnesses.

PSNR/SSIM operate on [0,1] rasters. The Fréchet embedding distance is
computed over GaussianStats fitted to embedder outputs; the success-rate
harness scores decoupling outputs against synthetic ground truth with
thresholded proxies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.ndimage import gaussian_filter

from .raster import RasterError, luminance
from .triplets import light_saliency

PSNR_CAP_DB = 100.0

# SSIM formation constants and window, single-scale reference form
_SSIM_SIGMA = 1.5
_SSIM_TRUNCATE = 3.5  # radius 5 -> 11x11 window
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2

COV_EPSILON = 1e-6


class MetricError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with MAX=1, capped at 100."""
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale structural similarity, Gaussian-windowed, averaged
    over channels."""
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < 11:
        raise MetricError("ssim needs images at least 11 pixels per side")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    pad = int(_SSIM_TRUNCATE * _SSIM_SIGMA + 0.5)

    def blur(x):
        return gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_TRUNCATE)

    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        ux, uy = blur(x), blur(y)
        vx = blur(x * x) - ux * ux
        vy = blur(y * y) - uy * uy
        vxy = blur(x * y) - ux * uy
        s = ((2 * ux * uy + _C1) * (2 * vxy + _C2)) / (
            (ux * ux + uy * uy + _C1) * (vx + vy + _C2))
        vals.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(vals))


@dataclass
class MetricReport:
    samples: list = field(default_factory=list)
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0
    count: int = 0

    def to_dict(self) -> dict:
        return {"samples": self.samples, "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim, "count": self.count}


def metric_report(preds, targets, ids=None) -> MetricReport:
    preds, targets = list(preds), list(targets)
    if len(preds) != len(targets) or not preds:
        raise MetricError("need equal-length non-empty prediction/target sets")
    samples = []
    for i, (p, t) in enumerate(zip(preds, targets)):
        samples.append({
            "id": ids[i] if ids else str(i),
            "psnr": psnr(p, t),
            "ssim": ssim(p, t),
        })
    return MetricReport(
        samples=samples,
        mean_psnr=float(np.mean([s["psnr"] for s in samples])),
        mean_ssim=float(np.mean([s["ssim"] for s in samples])),
        count=len(samples),
    )


# ---------------------------------------------------------------------------
# Fréchet embedding distance


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray


def fit_stats(embeddings: np.ndarray) -> GaussianStats:
    emb = np.asarray(embeddings, np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise MetricError("need a (n >= 2, dim) embedding matrix")
    return GaussianStats(mean=emb.mean(axis=0), cov=np.cov(emb, rowvar=False))


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """||mu1-mu2||^2 + tr(S1 + S2 - 2 sqrt(S1 S2)) with epsilon-regularized
    covariances."""
    mu1, mu2 = np.asarray(s1.mean, np.float64), np.asarray(s2.mean, np.float64)
    if mu1.shape != mu2.shape or s1.cov.shape != s2.cov.shape:
        raise MetricError("stats dims do not match")
    d = mu1.shape[0]
    c1 = np.asarray(s1.cov, np.float64) + COV_EPSILON * np.eye(d)
    c2 = np.asarray(s2.cov, np.float64) + COV_EPSILON * np.eye(d)
    for c in (c1, c2):
        if np.linalg.eigvalsh(c).min() < -1e-8:
            raise MetricError("covariance not PSD after regularization")
    diff = mu1 - mu2
    covmean = scipy.linalg.sqrtm(c1 @ c2)
    if np.iscomplexobj(covmean):
        if np.abs(covmean.imag).max() > 1e-3:
            raise MetricError("matrix square root has large imaginary part")
        covmean = covmean.real
    val = diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(covmean)
    return float(max(val, 0.0))


def light_fid(embedder, generated, reference) -> float:
    """Fréchet distance between embedding distributions of two image sets."""
    generated, reference = list(generated), list(reference)
    dim = embedder.embedding_dim
    for name, s in (("generated", generated), ("reference", reference)):
        if len(s) < dim + 1:
            raise MetricError(
                f"{name} set has {len(s)} samples, need >= {dim + 1}")
    e1 = embedder.embed_many(generated)
    e2 = embedder.embed_many(reference)
    return frechet_distance(fit_stats(e1), fit_stats(e2))


# ---------------------------------------------------------------------------
# decoupling success rates


@dataclass(frozen=True)
class SuccessCriteria:
    tau_content: float = 0.30
    dark_mean_max: float = 0.05
    min_correlation: float = 0.7
    true_dark_level: float = 0.02


def dark_region_mean(light_pred: np.ndarray, light_true: np.ndarray,
                     level: float = 0.02) -> float:
    """Mean predicted value over pixels that are dark in the true light."""
    dark = light_true.max(axis=2) < level
    if not dark.any():
        return 0.0
    return float(light_pred[dark].mean())


def pearson_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-lag normalized cross-correlation; NaN when either side is
    constant."""
    x = a.astype(np.float64).ravel()
    y = b.astype(np.float64).ravel()
    x = x - x.mean()
    y = y - y.mean()
    denom = np.sqrt((x * x).sum() * (y * y).sum())
    if denom == 0.0:
        return float("nan")
    return float((x * y).sum() / denom)


def success_rate_harness(records, criteria: SuccessCriteria = SuccessCriteria()) -> dict:
    """Score decoupling predictions against synthetic ground truth.

    Each record needs content_pred, light_pred, content_true, light_true.
    Content succeeds when the predicted content shows no prominent light;
    light succeeds when the prediction is dark where the truth is dark
    and correlates with the truth elsewhere.
    """
    records = list(records)
    if not records:
        raise MetricError("no records")
    content_ok = light_ok = both_ok = 0
    for r in records:
        for k in ("content_pred", "light_pred", "content_true", "light_true"):
            if k not in r:
                raise MetricError(f"record missing {k}")
        c = light_saliency(r["content_pred"]) < criteria.tau_content
        dm = dark_region_mean(r["light_pred"], r["light_true"],
                              criteria.true_dark_level)
        corr = pearson_correlation(r["light_pred"], r["light_true"])
        l = (dm < criteria.dark_mean_max) and (
            not np.isnan(corr)) and corr > criteria.min_correlation
        content_ok += c
        light_ok += l
        both_ok += c and l
    n = len(records)
    return {"content_rate": content_ok / n, "light_rate": light_ok / n,
            "total_rate": both_ok / n, "count": n}

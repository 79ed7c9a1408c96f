"""Quantitative readouts for the toy runs: mode occupancy, residual off the
data plane, and a distribution-level invariance check via energy distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groups import LinearAction
from .measures import SampleSet, TMixtureConfig, augment_samples


@dataclass(frozen=True)
class ModeReport:
    freqs: np.ndarray  # length n_modes, sums to 1
    min_mode_freq: float

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.float64)
        if abs(f.sum() - 1.0) > 1e-12:
            raise ValueError("mode frequencies must sum to 1")
        f.setflags(write=False)
        object.__setattr__(self, "freqs", f)


def mode_occupancy(samples: SampleSet, cfg: TMixtureConfig) -> ModeReport:
    """Project onto the data plane and assign each sample to its nearest center."""
    if samples.dim != cfg.ambient_dim:
        raise ValueError("sample dimension does not match the data config")
    planar = cfg.project(samples.data)  # (n, 2)
    d2 = np.sum((planar[:, None, :] - cfg.centers[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(d2, axis=1)
    freqs = np.bincount(nearest, minlength=cfg.n_modes).astype(np.float64) / samples.n
    return ModeReport(freqs=freqs, min_mode_freq=float(freqs.min()))


def orthogonal_residual(samples: SampleSet, cfg: TMixtureConfig
                        ) -> tuple[np.ndarray, dict]:
    """Per-sample norm of the component orthogonal to the data plane."""
    x = samples.data
    b = cfg.plane  # (2, d) orthonormal
    resid = x - (x @ b.T) @ b
    norms = np.linalg.norm(resid, axis=1)
    return norms, {
        "median": float(np.median(norms)),
        "p90": float(np.quantile(norms, 0.9)),
    }


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """V-statistic energy distance; exactly 0 when x is y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(
        2.0 * _mean_cross_dist(x, y) - _mean_cross_dist(x, x) - _mean_cross_dist(y, y)
    )


def _cross_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.maximum(d2, 0.0))


def _mean_cross_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(_cross_dist(a, b)))


def invariance_error(samples: SampleSet, action: LinearAction,
                     rng: np.random.Generator, n_resamples: int = 200) -> dict:
    """Energy distance between the samples and a random group augmentation,
    against a null band from split-half resampling of the samples alone.

    The null band is the central 95% interval of the split-half distances;
    an invariant sample law lands inside it, a non-invariant one far above.
    """
    if samples.n < 4:
        raise ValueError("need at least 4 samples")
    augmented = augment_samples(samples, action, rng)
    ed = energy_distance(samples.data, augmented.data)
    half = samples.n // 2
    # Reuse one pairwise distance matrix across the resamples.
    dxx = _cross_dist(samples.data, samples.data)
    nulls = np.empty(n_resamples)
    for k in range(n_resamples):
        perm = rng.permutation(samples.n)
        a, b = perm[:half], perm[half: 2 * half]
        nulls[k] = float(
            2.0 * np.mean(dxx[np.ix_(a, b)])
            - np.mean(dxx[np.ix_(a, a)])
            - np.mean(dxx[np.ix_(b, b)])
        )
    lo, hi = np.quantile(nulls, [0.025, 0.975])
    return {"ed": ed, "null_lo": float(lo), "null_hi": float(hi)}

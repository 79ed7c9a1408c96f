"""Discrete measures, sample sets, measure symmetrization, and the toy data sources."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .groups import LinearAction, PermutationAction, haar_samples


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability vector over a finite state space, optionally embedded in R^d."""

    weights: np.ndarray
    points: np.ndarray | None = None  # (|X|, d) embedding, if any

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if w.min() < 0:
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.points is not None:
            pts = np.asarray(self.points, dtype=np.float64)
            if pts.shape[0] != w.size:
                raise ValueError("points/weights length mismatch")
            pts.setflags(write=False)
            object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.weights.size

    def expect(self, values: np.ndarray) -> float:
        return float(self.weights @ np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class SampleSet:
    """An (n, d) matrix of samples with a provenance tag."""

    data: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.data, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("samples must form an (n, d) matrix with n >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "data", x)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _c4_centers(radius: float = 10.0) -> np.ndarray:
    # one C4 orbit: rotating (r, r) by successive quarter turns
    c = np.array([radius, radius])
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    return np.stack([np.linalg.matrix_power(rot, k) @ c for k in range(4)])


def _default_plane(ambient_dim: int) -> np.ndarray:
    basis = np.zeros((2, ambient_dim))
    basis[0, 0] = 1.0
    basis[1, 1] = 1.0
    return basis


@dataclass(frozen=True)
class TMixtureConfig:
    """Four heavy-tailed 2D t-modes at (+-10, +-10), embedded in a plane in R^12."""

    n_modes: int = 4
    centers: np.ndarray = field(default_factory=_c4_centers)
    dof: float = 0.5
    ambient_dim: int = 12
    plane: np.ndarray | None = None  # (2, ambient_dim) orthonormal rows

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        object.__setattr__(self, "centers", centers)
        plane = self.plane if self.plane is not None else _default_plane(self.ambient_dim)
        plane = np.asarray(plane, dtype=np.float64)
        if plane.shape != (2, self.ambient_dim):
            raise ValueError("plane must be (2, ambient_dim)")
        if not np.allclose(plane @ plane.T, np.eye(2), atol=1e-10):
            raise ValueError("plane basis must be orthonormal")
        object.__setattr__(self, "plane", plane)
        if centers.shape != (self.n_modes, 2):
            raise ValueError("centers must be (n_modes, 2)")

    def embed(self, planar: np.ndarray) -> np.ndarray:
        """Map (n, 2) plane coordinates into ambient space."""
        return np.asarray(planar) @ self.plane

    def project(self, ambient: np.ndarray) -> np.ndarray:
        """(n, d) ambient points -> (n, 2) plane coordinates."""
        return np.asarray(ambient) @ self.plane.T


def symmetrize_measure(P: DiscreteMeasure, action: PermutationAction) -> DiscreteMeasure:
    """Average the pushforwards of P over the group; output is group-invariant."""
    if action.state_count != P.size:
        raise ValueError("action state count does not match measure size")
    w = P.weights
    acc = np.zeros_like(w)
    for sigma in action.group.elements():
        # pushforward under T_sigma: mass at j comes from state T_sigma^-1(j)
        acc += w[action.inverse_perm(sigma)]
    return DiscreteMeasure(acc / action.group.order, P.points)


def is_invariant(P: DiscreteMeasure, action: PermutationAction, tol: float = 1e-12) -> bool:
    """True iff every pushforward of P under the group equals P within tol (sup norm)."""
    w = P.weights
    return all(
        np.max(np.abs(w[action.inverse_perm(s)] - w)) <= tol
        for s in action.group.elements()
    )


def augment_samples(S: SampleSet, action: LinearAction, rng: np.random.Generator) -> SampleSet:
    """Transform each row by an independent Haar group element (samples from S^Sigma[P])."""
    if S.dim != action.dim:
        raise ValueError("sample dimension does not match action dimension")
    sigmas = haar_samples(action.group, rng, S.n)
    out = np.einsum("nij,nj->ni", action.matrices[sigmas], S.data)
    return SampleSet(out, provenance=f"{S.provenance}|augmented")


def sample_t_mixture(cfg: TMixtureConfig, n: int, rng: np.random.Generator) -> SampleSet:
    """Draw n samples from the planar t-mixture, embedded in ambient space.

    Each sample is plane_basis . (center_k + t), with k uniform over modes and
    t a 2D Student-t draw via the Gaussian/chi-square ratio representation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    modes = rng.integers(cfg.n_modes, size=n)
    z = rng.standard_normal((n, 2))
    chi2 = 2.0 * rng.standard_gamma(cfg.dof / 2.0, size=n)  # chi-square_nu via Gamma(nu/2, 2)
    t = z * np.sqrt(cfg.dof / chi2)[:, None]
    planar = cfg.centers[modes] + t
    return SampleSet(cfg.embed(planar), provenance=f"t_mixture(n={n})")


def sample_invariant_noise(
    dim: int, action: LinearAction, rng: np.random.Generator, n: int
) -> SampleSet:
    """Standard Gaussian noise passed through an independent Haar element per sample."""
    if action.dim != dim:
        raise ValueError("action dimension mismatch")
    base = SampleSet(rng.standard_normal((n, dim)), provenance=f"gaussian(n={n})")
    return augment_samples(base, action, rng)

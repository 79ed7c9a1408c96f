"""Test-function machinery: symmetrization, convex generators with Legendre
transforms, the shift functional underlying (f, Gamma)-divergences, and
probability kernels for coarse-graining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groups import PermutationAction
from .measures import DiscreteMeasure

# Discriminator values tabulated over a finite state space.
TabulatedFunction = np.ndarray


def symmetrize_function(gamma: np.ndarray, action: PermutationAction) -> np.ndarray:
    """Orbit-average a tabulated function; the result is constant on orbits."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (action.state_count,):
        raise ValueError("function length does not match action state count")
    acc = np.zeros_like(gamma)
    for sigma in action.group.elements():
        acc += gamma[action.perms[sigma]]
    return acc / action.group.order


@dataclass(frozen=True)
class FDivGenerator:
    """A convex generator f with f(1) = 0 and its Legendre transform.

    kind "kl" is f(x) = x log x; kind "alpha" is f(x) = (x^a - 1)/(a(a-1)).
    Alpha generators default to a > 1; 0 < a < 1 is allowed behind
    allow_small_alpha (separate conjugate branch, unbounded f*).
    """

    kind: str = "kl"
    alpha: float = 2.0
    allow_small_alpha: bool = False

    def __post_init__(self):
        if self.kind not in ("kl", "alpha"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == "alpha":
            a = self.alpha
            if a <= 0 or a == 1.0:
                raise ValueError("alpha must be positive and != 1")
            if a < 1.0 and not self.allow_small_alpha:
                raise ValueError("alpha < 1 requires allow_small_alpha=True")

    def f(self, x):
        """f(x) for x >= 0, extended by +inf outside the domain."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "kl":
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        else:
            a = self.alpha
            val = (np.power(x, a) - 1.0) / (a * (a - 1.0))
        return np.where(x < 0, np.inf, val)

    def f_prime(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "kl":
            return np.log(x) + 1.0
        a = self.alpha
        return np.power(x, a - 1.0) / (a - 1.0)

    def conjugate(self, y):
        """Legendre transform f*(y); finite on all of R for admissible f."""
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "kl":
            return np.exp(y - 1.0)
        a = self.alpha
        if a > 1.0:
            # sup over x >= 0 sits at x = ((a-1) y)^(1/(a-1)) for y > 0, at 0 otherwise
            base = np.maximum((a - 1.0) * y, 0.0)
            return np.power(base, a / (a - 1.0)) / a + 1.0 / (a * (a - 1.0))
        # 0 < a < 1: f* finite only for y < 1/(a-1)... actually y < 0 region;
        # f*(y) = ((a-1) y)^(a/(a-1))/a + 1/(a(a-1)) for y < 0, +inf for y >= 0
        with np.errstate(invalid="ignore"):
            val = np.power((a - 1.0) * y, a / (a - 1.0)) / a + 1.0 / (a * (a - 1.0))
        return np.where(y < 0, val, np.inf)

    def conjugate_prime(self, y):
        """(f*)'(y), the optimizing density ratio; nonnegative."""
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "kl":
            return np.exp(y - 1.0)
        a = self.alpha
        if a > 1.0:
            return np.power(np.maximum((a - 1.0) * y, 0.0), 1.0 / (a - 1.0))
        with np.errstate(invalid="ignore"):
            val = np.power((a - 1.0) * y, 1.0 / (a - 1.0))
        return np.where(y < 0, val, np.inf)

    def conjugate_limit(self) -> float:
        """lim_{y -> -inf} f*(y); finite exactly when f is admissible."""
        if self.kind == "kl":
            return 0.0
        a = self.alpha
        if a > 1.0:
            return 1.0 / (a * (a - 1.0))
        return -np.inf

    def centered_conjugate(self, y):
        """Conjugate of the tilted generator f(x) - f'(1)(x - 1).

        Same divergence, but the conjugate vanishes at 0, which makes
        zero-discriminator objectives vanish identically.
        """
        b = self.f_prime(1.0)
        return self.conjugate(np.asarray(y) + b) - b

    @staticmethod
    def from_descriptor(desc: dict) -> "FDivGenerator":
        """Parse {"f": "kl"} or {"f": "alpha", "alpha": 2.0}."""
        kind = desc["f"]
        if kind == "kl":
            return FDivGenerator("kl")
        return FDivGenerator("alpha", alpha=float(desc["alpha"]))


def lambda_f(
    gen: FDivGenerator,
    gamma: np.ndarray,
    P: DiscreteMeasure | np.ndarray,
    iters: int = 200,
) -> tuple[float, float]:
    """The shift functional inf_nu { nu + E_P[f*(gamma - nu)] }.

    Returns (value, minimizing nu).  The 1D objective is convex in nu; the
    minimizer is bracketed around the range of gamma and located by ternary
    search with a fixed iteration budget.
    """
    weights = P.weights if isinstance(P, DiscreteMeasure) else np.asarray(P, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if not np.all(np.isfinite(gamma)):
        raise ValueError("gamma must be finite")
    if gamma.shape != weights.shape:
        raise ValueError("gamma/measure size mismatch")

    # nu* satisfies E_P[(f*)'(gamma - nu)] = 1; (f*)' hits 1 at f'(1), so the
    # minimizer lies within f'(1) of the range of gamma.
    pad = 1.0 + abs(float(gen.f_prime(1.0)))
    lo = float(gamma.min()) - pad
    hi = float(gamma.max()) + pad

    def objective(nu: float) -> float:
        return nu + float(weights @ gen.conjugate(gamma - nu))

    for _ in range(iters):
        third = (hi - lo) / 3.0
        m1, m2 = lo + third, hi - third
        if objective(m1) <= objective(m2):
            hi = m2
        else:
            lo = m1
    nu = 0.5 * (lo + hi)
    return objective(nu), nu


@dataclass(frozen=True)
class ProbabilityKernel:
    """A row-stochastic matrix; row x is the kernel K_x."""

    matrix: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.matrix, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kernel must be square")
        if k.min() < 0 or np.max(np.abs(k.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("kernel rows must be probability vectors")
        k.setflags(write=False)
        object.__setattr__(self, "matrix", k)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def kernel_smooth(K: ProbabilityKernel, gamma: np.ndarray) -> np.ndarray:
    """S_K[gamma](x) = sum_x' K[x, x'] gamma(x')."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (K.size,):
        raise ValueError("function/kernel size mismatch")
    return K.matrix @ gamma


def kernel_push(K: ProbabilityKernel, P: DiscreteMeasure) -> DiscreteMeasure:
    """S^K[P], the dual pushforward: new weights are K^T . weights."""
    if P.size != K.size:
        raise ValueError("measure/kernel size mismatch")
    return DiscreteMeasure(K.matrix.T @ P.weights, P.points)


def coarse_grain_kernel(labels: np.ndarray) -> ProbabilityKernel:
    """Uniform back-mapping kernel of a coarse-graining map given as integer labels.

    K_x is uniform on the label class of x; the induced S_K is a projection.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    k = np.zeros((n, n))
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        k[np.ix_(members, members)] = 1.0 / members.size
    return ProbabilityKernel(k)


def haar_kernel(action: PermutationAction) -> ProbabilityKernel:
    """The kernel K_x = uniform over orbit(x); reproduces symmetrize_function."""
    n = action.state_count
    k = np.zeros((n, n))
    for sigma in action.group.elements():
        k[np.arange(n), action.perms[sigma]] += 1.0 / action.group.order
    return ProbabilityKernel(k)

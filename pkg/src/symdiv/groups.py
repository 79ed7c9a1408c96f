"""Finite groups, their actions on vector and finite state spaces, and orbit machinery.

Groups are stored by explicit Cayley table with elements indexed 0..m-1.
Dihedral element layout: index k < n is the rotation r^k, index n + k is s*r^k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FiniteGroup:
    """A finite group given by its Cayley table.

    cayley[i, j] is the index of the product (element i) * (element j).
    """

    order: int
    cayley: np.ndarray
    identity: int = field(init=False)
    inverses: np.ndarray = field(init=False)

    def __post_init__(self):
        cayley = np.asarray(self.cayley, dtype=np.int64)
        cayley.setflags(write=False)
        object.__setattr__(self, "cayley", cayley)
        identity = _find_identity(cayley)
        object.__setattr__(self, "identity", identity)
        inv = np.empty(self.order, dtype=np.int64)
        for a in range(self.order):
            hits = np.flatnonzero(cayley[a] == identity)
            if hits.size != 1:
                raise ValueError(f"element {a} has no unique inverse")
            inv[a] = hits[0]
        inv.setflags(write=False)
        object.__setattr__(self, "inverses", inv)

    def mul(self, a: int, b: int) -> int:
        return int(self.cayley[a, b])

    def inv(self, a: int) -> int:
        return int(self.inverses[a])

    def elements(self) -> range:
        return range(self.order)


def _find_identity(cayley: np.ndarray) -> int:
    m = cayley.shape[0]
    idx = np.arange(m)
    for e in range(m):
        if np.array_equal(cayley[e], idx) and np.array_equal(cayley[:, e], idx):
            return e
    raise ValueError("Cayley table has no identity element")


def verify_group_axioms(group: FiniteGroup) -> bool:
    """Brute-force check of associativity, identity, and inverse consistency."""
    c = group.cayley
    m = group.order
    if c.shape != (m, m) or c.min() < 0 or c.max() >= m:
        return False
    # rows and columns must be permutations of 0..m-1
    for a in range(m):
        if len(set(c[a].tolist())) != m or len(set(c[:, a].tolist())) != m:
            return False
    # associativity over all triples, vectorized over the last index
    for a in range(m):
        for b in range(m):
            if not np.array_equal(c[c[a, b]], c[a][c[b]]):
                return False
    e = group.identity
    if not (np.array_equal(c[e], np.arange(m)) and np.array_equal(c[:, e], np.arange(m))):
        return False
    for a in range(m):
        if c[a, group.inverses[a]] != e or c[group.inverses[a], a] != e:
            return False
    return True


def is_abelian(group: FiniteGroup) -> bool:
    return np.array_equal(group.cayley, group.cayley.T)


def make_cyclic(n: int) -> FiniteGroup:
    """The cyclic group C_n, cayley[i, j] = (i + j) mod n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n)
    return FiniteGroup(order=n, cayley=(i[:, None] + i[None, :]) % n)


def make_dihedral(n: int) -> FiniteGroup:
    """The dihedral group D_n of order 2n, with r^n = s^2 = e and s r s = r^-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2 * n
    cayley = np.empty((m, m), dtype=np.int64)
    for i in range(m):
        a, ri = divmod(i, n)
        for j in range(m):
            b, rj = divmod(j, n)
            # (s^a r^ri)(s^b r^rj) = s^(a+b) r^((-1)^b ri + rj)
            rot = (ri * (-1) ** b + rj) % n
            cayley[i, j] = ((a + b) % 2) * n + rot
    return FiniteGroup(order=m, cayley=cayley)


@dataclass(frozen=True)
class LinearAction:
    """An action of a finite group by orthogonal matrices on R^dim."""

    group: FiniteGroup
    dim: int
    matrices: np.ndarray  # (order, dim, dim)

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.float64)
        if mats.shape != (self.group.order, self.dim, self.dim):
            raise ValueError("matrix stack shape mismatch")
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    def apply(self, element: int, x: np.ndarray) -> np.ndarray:
        """Apply T_sigma to points given as (..., dim) arrays."""
        return np.asarray(x) @ self.matrices[element].T

    def matrix(self, element: int) -> np.ndarray:
        return self.matrices[element]


@dataclass(frozen=True)
class PermutationAction:
    """An action of a finite group by permutations of a finite state space.

    perms[sigma, i] is the image state of i under T_sigma.
    """

    group: FiniteGroup
    state_count: int
    perms: np.ndarray  # (order, state_count)

    def __post_init__(self):
        perms = np.asarray(self.perms, dtype=np.int64)
        if perms.shape != (self.group.order, self.state_count):
            raise ValueError("permutation stack shape mismatch")
        perms.setflags(write=False)
        object.__setattr__(self, "perms", perms)

    def apply(self, element: int, state):
        return self.perms[element][state]

    def inverse_perm(self, element: int) -> np.ndarray:
        return self.perms[self.group.inv(element)]


def trivial_permutation_action(state_count: int) -> PermutationAction:
    group = make_cyclic(1)
    return PermutationAction(group, state_count, np.arange(state_count)[None, :])


def planar_rotation_action(
    group: FiniteGroup, ambient_dim: int, plane: np.ndarray, *, dihedral: bool | None = None
) -> LinearAction:
    """Rotations (and reflections, for D_n) of angle 2*pi*k/n within a plane.

    The plane is given by two orthonormal ambient vectors; all matrices act as
    the identity on the orthogonal complement.  Whether the group is cyclic or
    dihedral is inferred from its Cayley table unless `dihedral` is forced.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if ambient_dim < 2 or plane.shape != (2, ambient_dim):
        raise ValueError("plane must be two vectors of length ambient_dim >= 2")
    gram = plane @ plane.T
    if not np.allclose(gram, np.eye(2), atol=1e-10):
        raise ValueError("plane vectors must be orthonormal within 1e-10")
    if dihedral is None:
        dihedral = not is_abelian(group) or _looks_dihedral(group)
    n = group.order // 2 if dihedral else group.order
    if dihedral and group.order != 2 * n:
        raise ValueError("dihedral group must have even order")

    u, v = plane
    basis = np.stack([u, v])  # (2, d)
    mats = np.empty((group.order, ambient_dim, ambient_dim))
    for idx in range(group.order):
        refl, k = (divmod(idx, n) if dihedral else (0, idx))
        theta = 2.0 * np.pi * k / n
        rot2 = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        rep2 = rot2 if not refl else np.array([[1.0, 0.0], [0.0, -1.0]]) @ rot2
        # identity off the plane, the 2D representation within it
        mats[idx] = np.eye(ambient_dim) - basis.T @ basis + basis.T @ rep2 @ basis
    action = LinearAction(group, ambient_dim, mats)
    _check_representation(action)
    return action


def _looks_dihedral(group: FiniteGroup) -> bool:
    # D_1 and D_2 are abelian; distinguish them from C_2, C_4 by element orders
    m = group.order
    if m % 2 != 0:
        return False
    orders = [_element_order(group, a) for a in range(m)]
    return max(orders) <= m // 2 and m > 1


def _element_order(group: FiniteGroup, a: int) -> int:
    x, k = a, 1
    while x != group.identity:
        x = group.mul(x, a)
        k += 1
    return k


def _check_representation(action: LinearAction, tol: float = 1e-12) -> None:
    g = action.group
    mats = action.matrices
    if not np.allclose(mats[g.identity], np.eye(action.dim), atol=tol):
        raise ValueError("identity element must map to the identity matrix")
    for a in range(g.order):
        if not np.allclose(mats[a].T @ mats[a], np.eye(action.dim), atol=tol):
            raise ValueError(f"matrix for element {a} is not orthogonal")
        for b in range(g.order):
            if not np.allclose(mats[a] @ mats[b], mats[g.mul(a, b)], atol=tol):
                raise ValueError("matrices do not respect the group product")


def permutation_from_linear(
    action: LinearAction, points: np.ndarray, tol: float = 1e-8
) -> PermutationAction:
    """Induce a permutation action on a finite point set closed under the group.

    Each transformed point must match exactly one input point within tol;
    ambiguity or a non-closed point set raises, never snaps silently.
    """
    points = np.asarray(points, dtype=np.float64)
    n_pts = points.shape[0]
    perms = np.empty((action.group.order, n_pts), dtype=np.int64)
    for sigma in action.group.elements():
        images = action.apply(sigma, points)
        for i in range(n_pts):
            dists = np.linalg.norm(points - images[i], axis=1)
            hits = np.flatnonzero(dists <= tol)
            if hits.size != 1:
                raise ValueError(
                    f"point {i} under element {sigma} matches {hits.size} points "
                    f"within tol={tol}; point set is not cleanly closed under the action"
                )
            perms[sigma, i] = hits[0]
        if len(set(perms[sigma].tolist())) != n_pts:
            raise ValueError(f"element {sigma} does not induce a permutation")
    return PermutationAction(action.group, n_pts, perms)


def haar_sample(group: FiniteGroup, rng: np.random.Generator) -> int:
    """One draw from the Haar (uniform) measure on a finite group."""
    return int(rng.integers(group.order))


def haar_samples(group: FiniteGroup, rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(group.order, size=n)


def orbits(action: PermutationAction) -> list[list[int]]:
    """Partition of the state space into group orbits, each sorted ascending."""
    seen = np.zeros(action.state_count, dtype=bool)
    out = []
    for s in range(action.state_count):
        if seen[s]:
            continue
        orbit = np.unique(action.perms[:, s])
        seen[orbit] = True
        out.append(orbit.tolist())
    return out


def orbit_labels(action: PermutationAction) -> np.ndarray:
    """State -> orbit index, with orbits ordered by smallest member."""
    labels = np.full(action.state_count, -1, dtype=np.int64)
    for k, orb in enumerate(orbits(action)):
        labels[orb] = k
    return labels


def action_from_descriptor(desc: dict) -> LinearAction:
    """Build a planar action from a JSON descriptor.

    Format: {"kind": "cyclic"|"dihedral", "n": int, "ambient_dim": int,
             "plane": [[...], [...]]}.
    """
    kind = desc["kind"]
    n = int(desc["n"])
    if kind == "cyclic":
        group = make_cyclic(n)
    elif kind == "dihedral":
        group = make_dihedral(n)
    else:
        raise ValueError(f"unknown group kind {kind!r}")
    dim = int(desc["ambient_dim"])
    plane = np.asarray(desc["plane"], dtype=np.float64)
    return planar_rotation_action(group, dim, plane, dihedral=(kind == "dihedral"))


def group_from_descriptor(desc: dict) -> FiniteGroup:
    kind = desc["kind"]
    n = int(desc["n"])
    if kind == "cyclic":
        return make_cyclic(n)
    if kind == "dihedral":
        return make_dihedral(n)
    raise ValueError(f"unknown group kind {kind!r}")

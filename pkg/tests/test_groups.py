"""Group construction, actions, Haar sampling, and orbit machinery."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symdiv.groups import (
    FiniteGroup,
    LinearAction,
    action_from_descriptor,
    group_from_descriptor,
    haar_sample,
    haar_samples,
    is_abelian,
    make_cyclic,
    make_dihedral,
    orbit_labels,
    orbits,
    permutation_from_linear,
    planar_rotation_action,
    trivial_permutation_action,
    verify_group_axioms,
)


# ---------------------------------------------------------------------------
# cyclic / dihedral construction


def test_cyclic_trivial():
    g = make_cyclic(1)
    assert g.order == 1
    assert g.identity == 0
    assert verify_group_axioms(g)


def test_cyclic_four_inverse():
    g = make_cyclic(4)
    assert g.inv(1) == 3
    assert g.mul(1, 3) == g.identity


@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_cyclic_axioms(n):
    assert verify_group_axioms(make_cyclic(n))


def test_dihedral_one_is_z2():
    g = make_dihedral(1)
    assert g.order == 2
    assert g.mul(1, 1) == g.identity
    assert verify_group_axioms(g)


def test_dihedral_two_abelian():
    assert is_abelian(make_dihedral(2))


def test_dihedral_four_nonabelian():
    g = make_dihedral(4)
    assert g.order == 8
    assert verify_group_axioms(g)
    # exhibit a non-commuting pair by brute force
    assert any(
        g.mul(a, b) != g.mul(b, a) for a in g.elements() for b in g.elements()
    )


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_dihedral_axioms_and_relations(n):
    g = make_dihedral(n)
    assert verify_group_axioms(g)
    # layout: k < n is r^k, n + k is s r^k; relations r^n = s^2 = e, s r s = r^-1
    if n > 1:
        r, s = 1, n
        assert g.mul(s, s) == g.identity
        assert g.mul(g.mul(s, r), s) == g.inv(r)


def test_bad_cayley_rejected():
    with pytest.raises(ValueError):
        FiniteGroup(order=2, cayley=np.array([[0, 1], [0, 1]]))


# ---------------------------------------------------------------------------
# planar linear actions


def test_planar_trivial_group_identity():
    act = planar_rotation_action(make_cyclic(1), 3, np.eye(3)[:2])
    assert np.allclose(act.matrices[0], np.eye(3))


def test_planar_c4_quarter_turn():
    act = planar_rotation_action(make_cyclic(4), 2, np.eye(2))
    assert np.allclose(act.matrix(1), np.array([[0.0, -1.0], [1.0, 0.0]]), atol=1e-12)


def test_planar_c4_half_turn_squares_to_identity():
    plane = np.zeros((2, 12))
    plane[0, 0] = plane[1, 1] = 1.0
    act = planar_rotation_action(make_cyclic(4), 12, plane)
    assert np.allclose(act.matrix(2) @ act.matrix(2), act.matrix(0), atol=1e-12)


def test_planar_dihedral_has_reflections():
    act = planar_rotation_action(make_dihedral(4), 2, np.eye(2))
    dets = [np.linalg.det(act.matrix(s)) for s in act.group.elements()]
    assert np.allclose(sorted(dets), [-1.0] * 4 + [1.0] * 4, atol=1e-12)


def test_planar_requires_orthonormal_plane():
    with pytest.raises(ValueError):
        planar_rotation_action(make_cyclic(4), 3, np.array([[1.0, 0, 0], [1.0, 0, 0]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 999))
def test_action_composition_and_isometry(a, b, seed):
    plane = np.zeros((2, 5))
    plane[0, 0] = plane[1, 1] = 1.0
    act = planar_rotation_action(make_cyclic(4), 5, plane)
    x = np.random.default_rng(seed).standard_normal(5)
    lhs = act.apply(a, act.apply(b, x))
    rhs = act.apply(act.group.mul(a, b), x)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10
    assert abs(np.linalg.norm(act.apply(a, x)) - np.linalg.norm(x)) <= 1e-10


def test_dihedral_composition_on_vectors():
    act = planar_rotation_action(make_dihedral(3), 2, np.eye(2))
    rng = np.random.default_rng(7)
    x = rng.standard_normal(2)
    for a in act.group.elements():
        for b in act.group.elements():
            lhs = act.apply(a, act.apply(b, x))
            rhs = act.apply(act.group.mul(a, b), x)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10


# ---------------------------------------------------------------------------
# induced permutation actions


def test_permutation_from_linear_c2_swap():
    act = planar_rotation_action(make_cyclic(2), 2, np.eye(2))
    pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
    perm = permutation_from_linear(act, pts)
    assert np.array_equal(perm.perms[0], [0, 1])
    assert np.array_equal(perm.perms[1], [1, 0])


def test_permutation_from_linear_c4_centers_cycle():
    act = planar_rotation_action(make_cyclic(4), 2, np.eye(2))
    c = np.array([10.0, 10.0])
    rot = act.matrix(1)
    pts = np.stack([np.linalg.matrix_power(rot, k) @ c for k in range(4)])
    perm = permutation_from_linear(act, pts)
    # element 1 advances every center one step around the orbit: a 4-cycle
    p = perm.perms[1]
    seen, i = [], 0
    for _ in range(4):
        seen.append(i)
        i = p[i]
    assert sorted(seen) == [0, 1, 2, 3] and i == 0


def test_permutation_from_linear_rejects_open_set():
    act = planar_rotation_action(make_cyclic(4), 2, np.eye(2))
    with pytest.raises(ValueError):
        permutation_from_linear(act, np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]))


# ---------------------------------------------------------------------------
# Haar sampling


def test_haar_trivial_group():
    rng = np.random.default_rng(0)
    assert all(haar_sample(make_cyclic(1), rng) == 0 for _ in range(10))


def test_haar_uniformity_binomial_bound():
    g = make_cyclic(4)
    draws = haar_samples(g, np.random.default_rng(12), 40_000)
    counts = np.bincount(draws, minlength=4)
    p = 0.25
    sigma = np.sqrt(40_000 * p * (1 - p))
    assert np.max(np.abs(counts - 40_000 * p)) <= 4 * sigma


def test_haar_left_translation_invariance():
    g = make_cyclic(4)
    draws = haar_samples(g, np.random.default_rng(3), 40_000)
    shifted = g.cayley[2][draws]
    c0 = np.bincount(draws, minlength=4) / draws.size
    c1 = np.bincount(shifted, minlength=4) / draws.size
    # same multiset of frequencies, each still near uniform
    assert np.max(np.abs(np.sort(c0) - np.sort(c1))) <= 1e-12
    assert np.max(np.abs(c1 - 0.25)) <= 0.02


def test_haar_seed_reproducible():
    g = make_dihedral(4)
    a = haar_samples(g, np.random.default_rng(42), 100)
    b = haar_samples(g, np.random.default_rng(42), 100)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# orbits


def test_orbits_trivial_group_singletons():
    act = trivial_permutation_action(4)
    assert orbits(act) == [[0], [1], [2], [3]]


def test_orbits_c2_double_swap():
    g = make_cyclic(2)
    perms = np.array([[0, 1, 2, 3], [1, 0, 3, 2]])
    from symdiv.groups import PermutationAction

    act = PermutationAction(g, 4, perms)
    assert orbits(act) == [[0, 1], [2, 3]]
    assert np.array_equal(orbit_labels(act), [0, 0, 1, 1])


def test_orbits_c4_cycle_single_orbit():
    g = make_cyclic(4)
    perms = np.stack([np.roll(np.arange(4), -k) for k in range(4)])
    from symdiv.groups import PermutationAction

    act = PermutationAction(g, 4, perms)
    assert orbits(act) == [[0, 1, 2, 3]]


# ---------------------------------------------------------------------------
# descriptors


def test_descriptor_round_trip():
    desc = {
        "kind": "dihedral",
        "n": 2,
        "ambient_dim": 4,
        "plane": np.eye(4)[:2].tolist(),
    }
    act = action_from_descriptor(desc)
    assert isinstance(act, LinearAction)
    assert act.group.order == 4
    assert group_from_descriptor({"kind": "cyclic", "n": 3}).order == 3
    with pytest.raises(ValueError):
        group_from_descriptor({"kind": "sporadic", "n": 1})

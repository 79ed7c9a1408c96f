"""Divergences between group-invariant distributions.

Symmetrization operators, exact variational divergences on finite state
spaces, group-equivariant networks, and a small adversarial-training testbed
for the symmetry-preserving objectives.
"""

from . import exactdiv, funcspace, gan, groups, measures, metrics, nn  # noqa: F401

__version__ = "0.1.0"

"""Compiler and exact verifier for binary optimization on globally driven
Rydberg atom arrays.

The pipeline turns a quadratic binary problem on a complete or complete
bipartite graph into (1) a parity-constraint layout, (2) a maximum-weight
independent set instance built from a small gadget catalogue, and (3) a
physical atom layout for a single global detuning whose low diagonal spectrum
encodes the problem; anchors (auxiliary atoms) carry all problem-dependent
programming.  Verification enumerates the exact diagonal spectrum — no tail
truncation — and decodes it back onto the original problem.
"""

from .physics import PhysicsConfig  # noqa: F401

__all__ = ["PhysicsConfig"]
__version__ = "0.1.0"

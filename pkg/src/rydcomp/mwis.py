"""Unit-disk graphs and exact maximum-weight independent sets.

The graphs here are small (gadgets and gadget assemblies, up to ~100 nodes)
and the solver must be exact *including degenerate maximisers*: the logical
subspace of a gadget is the full set of maximisers, so near-ties within an
absolute tolerance are collected, never broken arbitrarily.

Configurations are integer bitmasks, node ``i`` on bit ``i``, matching
``physics``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class UDGraph:
    """Unit-disk graph: edge iff pair distance is strictly below ``radius``.

    ``boundary_pairs`` lists pairs whose distance equals the radius to within
    1e-9; such geometry is ambiguous hardware-wise and is flagged loudly at
    construction but otherwise treated as a non-edge (strict comparison).
    """

    n: int
    radius: float
    edges: tuple
    neighbor_masks: tuple
    boundary_pairs: tuple = ()

    def degree(self, i: int) -> int:
        return bin(self.neighbor_masks[i]).count("1")

    def independent(self, mask: int) -> bool:
        m = mask
        while m:
            i = (m & -m).bit_length() - 1
            if self.neighbor_masks[i] & mask:
                return False
            m &= m - 1
        return True


def ud_graph(positions, radius) -> UDGraph:
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    if radius <= 0:
        raise ValidationError("unit-disk radius must be positive")
    edges = []
    boundary = []
    nb = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(pos[i] - pos[j])))
            if abs(d - radius) < BOUNDARY_TOL:
                boundary.append((i, j))
            if d < radius:
                edges.append((i, j))
                nb[i] |= 1 << j
                nb[j] |= 1 << i
    if boundary:
        warnings.warn(
            f"{len(boundary)} atom pair(s) sit exactly at the unit-disk radius; "
            "treating as non-edges (strict comparison)",
            stacklevel=2,
        )
    return UDGraph(n, float(radius), tuple(edges), tuple(nb), tuple(boundary))


def enumerate_independent_sets(g: UDGraph):
    """Yield every independent set of ``g`` exactly once (as bitmasks)."""

    nb = g.neighbor_masks

    def rec(i, cur, blocked):
        if i == g.n:
            yield cur
            return
        yield from rec(i + 1, cur, blocked)
        if not (blocked >> i) & 1:
            yield from rec(i + 1, cur | (1 << i), blocked | nb[i])

    yield from rec(0, 0, 0)


@dataclass(frozen=True)
class MWISSolution:
    value: float
    masks: tuple  # every maximiser within tolerance, sorted


def solve_mwis(g: UDGraph, weights, tol: float = 1e-9) -> MWISSolution:
    """Exact MWIS value plus *all* maximisers within ``tol`` of the optimum.

    Branch and bound: branch vertices in descending (weight, degree) order,
    bound by the sum of positive residual weights; independent connected
    components are solved separately and recombined, with memoisation on the
    residual vertex set.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) != g.n:
        raise ValidationError("weight vector length does not match graph")
    if g.n and w.min() <= 0:
        raise ValidationError("weights must be positive")
    nb = g.neighbor_masks
    order = sorted(range(g.n), key=lambda v: (-w[v], -g.degree(v), v))
    rank = [0] * g.n
    for pos_, v in enumerate(order):
        rank[v] = pos_
    memo = {}

    def components(mask):
        comps = []
        left = mask
        while left:
            seed = left & -left
            comp = seed
            frontier = seed
            while frontier:
                grow = 0
                m = frontier
                while m:
                    i = (m & -m).bit_length() - 1
                    grow |= nb[i] & mask
                    m &= m - 1
                frontier = grow & ~comp
                comp |= grow & mask
            comps.append(comp)
            left &= ~comp
        return comps

    def solve(mask):
        if mask == 0:
            return 0.0, ((0.0, 0),)
        hit = memo.get(mask)
        if hit is not None:
            return hit
        comps = components(mask)
        if len(comps) > 1:
            parts = [solve(c) for c in comps]
            best = sum(p[0] for p in parts)
            sols = [(0.0, 0)]
            suffix = [0.0] * (len(parts) + 1)
            for i in range(len(parts) - 1, -1, -1):
                suffix[i] = suffix[i + 1] + parts[i][0]
            for i, (pv, pairs) in enumerate(parts):
                nxt = []
                for acc_v, acc_m in sols:
                    for sv, sm in pairs:
                        v = acc_v + sv
                        if v + suffix[i + 1] >= best - tol:
                            nxt.append((v, acc_m | sm))
                sols = nxt
            out = (best, tuple((v, m) for v, m in sols if v >= best - tol))
            memo[mask] = out
            return out
        # single component: branch on the first vertex in the static order
        v = min(
            (i for i in range(g.n) if (mask >> i) & 1), key=lambda i: rank[i]
        )
        take_mask = mask & ~(nb[v] | (1 << v))
        tb, tsols = solve(take_mask)
        tb += w[v]
        tsols = tuple((sv + w[v], sm | (1 << v)) for sv, sm in tsols)
        skip_mask = mask & ~(1 << v)
        # bound: positive residual weight of the skip branch
        ub = 0.0
        m = skip_mask
        while m:
            i = (m & -m).bit_length() - 1
            ub += w[i]
            m &= m - 1
        if ub < tb - tol:
            out = (tb, tsols)
        else:
            sb, ssols = solve(skip_mask)
            best = max(tb, sb)
            pairs = [p for p in tsols if p[0] >= best - tol]
            pairs += [p for p in ssols if p[0] >= best - tol]
            out = (best, tuple(pairs))
        memo[mask] = out
        return out

    best, pairs = solve((1 << g.n) - 1)
    masks = tuple(sorted({m for v, m in pairs if v >= best - tol}))
    return MWISSolution(float(best), masks)


def step_energy(g: UDGraph, detunings, coupling, config: int) -> float:
    """Energy under the step-potential model: -sum detunings + coupling/edge.

    The independent-set correspondence needs 0 < detuning_i < coupling for
    every site; violations are reported as a warning (the energy itself is
    still well defined).
    """
    det = np.broadcast_to(np.asarray(detunings, dtype=float), (g.n,))
    if g.n and not (0 < det.min() and det.max() < coupling):
        warnings.warn(
            "step-potential mapping needs 0 < detuning < coupling on every "
            f"site (got range [{det.min()}, {det.max()}], coupling {coupling})",
            stacklevel=2,
        )
    e = 0.0
    for i in range(g.n):
        if (config >> i) & 1:
            e -= float(det[i])
    for i, j in g.edges:
        if (config >> i) & 1 and (config >> j) & 1:
            e += coupling
    return e

"""Binary optimisation problem input: parsing, validation, evaluation.

Two families are understood:

* complete ("K_n"): minimise  sum_i h_i x_i + sum_{i<j} Q_ij x_i x_j
  over x in {0,1}^n, with any subset of the n(n-1)/2 couplings present.
* bipartite ("K_{n,m}"): variables split into a left block (0..n-1) and a
  right block (n..n+m-1); couplings run only across the cut and the cost is
  sum_{ij} J_ij (x_i XOR y_j).  Linear terms are rejected for this family:
  the cut cost is invariant under a global flip, so a linear term cannot be
  folded into the couplings exactly.

``brute_force_optimum`` is the reference answer used to certify decodings.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

from .errors import ProblemFormatError, UnsupportedFamilyError, ValidationError

_FAMILY_RE = re.compile(r"^K_?\{?(\d+)(?:\s*,\s*(\d+))?\}?$")


@dataclass(frozen=True)
class Problem:
    family: str  # "complete" | "bipartite"
    n: int
    m: int  # 0 for complete graphs
    linear: tuple  # ((index, value), ...)
    quadratic: tuple  # ((i, j, value), ...) with i < j

    @property
    def n_vars(self) -> int:
        return self.n + self.m

    @property
    def label(self) -> str:
        if self.family == "complete":
            return f"K_{self.n}"
        return f"K_{{{self.n},{self.m}}}"

    def coupling(self, i: int, j: int) -> float:
        i, j = min(i, j), max(i, j)
        for a, b, v in self.quadratic:
            if (a, b) == (i, j):
                return v
        return 0.0

    def to_dict(self) -> dict:
        return {
            "family": self.label,
            "linear": [[i, v] for i, v in self.linear],
            "quadratic": [[i, j, v] for i, j, v in self.quadratic],
        }


def _family(tag):
    if not isinstance(tag, str):
        raise ProblemFormatError("'family' must be a string like 'K_5' or 'K_{2,3}'")
    m = _FAMILY_RE.match(tag.strip())
    if not m:
        raise UnsupportedFamilyError(
            f"cannot parse family {tag!r}; expected 'K_n' or 'K_{{n,m}}'"
        )
    n = int(m.group(1))
    right = int(m.group(2)) if m.group(2) else 0
    if n < 1 or (m.group(2) is not None and right < 1):
        raise ValidationError("family sizes must be positive")
    return ("bipartite", n, right) if m.group(2) else ("complete", n, 0)


def _number(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ProblemFormatError(f"{what} must be a number, got {x!r}")
    v = float(x)
    if not math.isfinite(v):
        raise ValidationError(f"{what} must be finite, got {v}")
    return v


def parse_problem(data) -> Problem:
    """Build a validated :class:`Problem` from a dict or a JSON string."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProblemFormatError("problem must be a JSON object")
    unknown = set(data) - {"family", "linear", "quadratic"}
    if unknown:
        raise ProblemFormatError(f"unknown problem keys: {sorted(unknown)}")
    if "family" not in data:
        raise ProblemFormatError("problem needs a 'family'")
    family, n, m = _family(data["family"])
    n_vars = n + m

    linear = []
    for entry in data.get("linear", ()):
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ProblemFormatError(f"linear entries are [index, value]: {entry!r}")
        i, v = entry
        if not isinstance(i, int) or isinstance(i, bool):
            raise ProblemFormatError(f"linear index must be an integer: {entry!r}")
        if not 0 <= i < n_vars:
            raise ValidationError(f"linear index {i} out of range for {n_vars} variables")
        v = _number(v, f"linear[{i}]")
        if family == "bipartite" and v != 0.0:
            raise ValidationError(
                "bipartite problems cannot carry linear terms (the cut cost is "
                "flip-invariant, so they do not fold into couplings exactly)"
            )
        if any(i == j for j, _ in linear):
            raise ValidationError(f"duplicate linear entry for variable {i}")
        if v != 0.0:
            linear.append((i, v))

    quadratic = []
    for entry in data.get("quadratic", ()):
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise ProblemFormatError(f"quadratic entries are [i, j, value]: {entry!r}")
        i, j, v = entry
        if not all(isinstance(k, int) and not isinstance(k, bool) for k in (i, j)):
            raise ProblemFormatError(f"quadratic indices must be integers: {entry!r}")
        if i == j:
            raise ValidationError(f"quadratic entry couples {i} with itself")
        if not (0 <= i < n_vars and 0 <= j < n_vars):
            raise ValidationError(f"quadratic indices {i},{j} out of range")
        i, j = min(i, j), max(i, j)
        if family == "bipartite" and not (i < n <= j):
            raise ValidationError(
                f"bipartite couplings must cross the cut; ({i},{j}) does not"
            )
        v = _number(v, f"quadratic[{i},{j}]")
        if any((i, j) == (a, b) for a, b, _ in quadratic):
            raise ValidationError(f"duplicate quadratic entry ({i},{j})")
        quadratic.append((i, j, v))

    return Problem(family, n, m, tuple(linear), tuple(quadratic))


def load_problem(path) -> Problem:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_problem(text)


def evaluate(problem: Problem, assignment) -> float:
    """Cost of one assignment (sequence of n_vars bits)."""
    x = list(assignment)
    if len(x) != problem.n_vars or any(b not in (0, 1) for b in x):
        raise ValidationError(
            f"assignment must be {problem.n_vars} bits, got {assignment!r}"
        )
    total = 0.0
    for i, v in problem.linear:
        total += v * x[i]
    if problem.family == "complete":
        for i, j, v in problem.quadratic:
            total += v * x[i] * x[j]
    else:
        for i, j, v in problem.quadratic:
            total += v * (x[i] ^ x[j])
    return total


def brute_force_optimum(problem: Problem, limit: int = 24):
    """Exhaustive minimum: (value, tuple of optimal assignments)."""
    k = problem.n_vars
    if k > limit:
        raise ValidationError(f"brute force capped at {limit} variables, got {k}")
    best = math.inf
    argmin = []
    for mask in range(1 << k):
        bits = tuple((mask >> i) & 1 for i in range(k))
        val = evaluate(problem, bits)
        if val < best - 1e-12:
            best, argmin = val, [bits]
        elif val <= best + 1e-12:
            argmin.append(bits)
    return best, tuple(argmin)

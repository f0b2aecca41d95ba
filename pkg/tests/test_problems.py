"""Problem parsing, family grammar, evaluation, brute-force reference."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydcomp.errors import (
    ProblemFormatError,
    UnsupportedFamilyError,
    ValidationError,
)
from rydcomp.problems import brute_force_optimum, evaluate, parse_problem

K23 = {
    "family": "K_{2,3}",
    "quadratic": [[0, 2, 0.2], [0, 3, -0.1], [1, 4, 0.3]],
}


class TestFamilyGrammar:
    @pytest.mark.parametrize(
        "tag,family,n,m",
        [
            ("K_5", "complete", 5, 0),
            ("K5", "complete", 5, 0),
            ("K_{2,3}", "bipartite", 2, 3),
            ("K_{2, 3}", "bipartite", 2, 3),
            ("K2,3", "bipartite", 2, 3),
            ("K_1", "complete", 1, 0),
        ],
    )
    def test_accepted(self, tag, family, n, m):
        p = parse_problem({"family": tag})
        assert (p.family, p.n, p.m) == (family, n, m)

    @pytest.mark.parametrize("tag", ["Q_5", "K_", "K_{2;3}", "5", "K_2x3"])
    def test_rejected(self, tag):
        with pytest.raises(UnsupportedFamilyError):
            parse_problem({"family": tag})

    def test_labels_are_canonical(self):
        assert parse_problem({"family": "K5"}).label == "K_5"
        assert parse_problem({"family": "K2,3"}).label == "K_{2,3}"

    def test_zero_size(self):
        with pytest.raises(ValidationError):
            parse_problem({"family": "K_0"})


class TestParsing:
    def test_complete_roundtrip(self):
        p = parse_problem(
            {
                "family": "K_3",
                "linear": [[0, 1.5], [2, -0.5]],
                "quadratic": [[1, 0, 2.0], [1, 2, -1.0]],
            }
        )
        assert p.linear == ((0, 1.5), (2, -0.5))
        assert p.quadratic == ((0, 1, 2.0), (1, 2, -1.0))  # indices sorted
        assert p.coupling(2, 1) == -1.0
        assert p.coupling(0, 2) == 0.0
        assert parse_problem(p.to_dict()) == p

    def test_json_string_input(self):
        p = parse_problem(json.dumps(K23))
        assert p.n_vars == 5
        assert p.coupling(0, 2) == 0.2

    def test_bad_json(self):
        with pytest.raises(ProblemFormatError, match="JSON"):
            parse_problem("{not json")

    def test_not_an_object(self):
        with pytest.raises(ProblemFormatError):
            parse_problem("[1, 2]")

    def test_unknown_keys(self):
        with pytest.raises(ProblemFormatError, match="unknown"):
            parse_problem({"family": "K_2", "offset": 3})

    def test_malformed_entries(self):
        with pytest.raises(ProblemFormatError):
            parse_problem({"family": "K_2", "linear": [[0]]})
        with pytest.raises(ProblemFormatError):
            parse_problem({"family": "K_2", "quadratic": [[0, 1]]})
        with pytest.raises(ProblemFormatError):
            parse_problem({"family": "K_2", "quadratic": [[0.5, 1, 1.0]]})

    def test_index_range(self):
        with pytest.raises(ValidationError, match="range"):
            parse_problem({"family": "K_2", "linear": [[2, 1.0]]})
        with pytest.raises(ValidationError, match="range"):
            parse_problem({"family": "K_2", "quadratic": [[0, 5, 1.0]]})

    def test_self_coupling(self):
        with pytest.raises(ValidationError, match="itself"):
            parse_problem({"family": "K_2", "quadratic": [[1, 1, 1.0]]})

    def test_duplicates(self):
        with pytest.raises(ValidationError, match="duplicate"):
            parse_problem(
                {"family": "K_3", "quadratic": [[0, 1, 1.0], [1, 0, 2.0]]}
            )
        with pytest.raises(ValidationError, match="duplicate"):
            parse_problem({"family": "K_2", "linear": [[0, 1.0], [0, 2.0]]})

    def test_nonfinite(self):
        with pytest.raises(ValidationError, match="finite"):
            parse_problem({"family": "K_2", "linear": [[0, float("nan")]]})

    def test_bipartite_rejects_linear(self):
        with pytest.raises(ValidationError, match="linear"):
            parse_problem({"family": "K_{2,2}", "linear": [[0, 0.5]]})
        # explicit zeros are tolerated and dropped
        p = parse_problem({"family": "K_{2,2}", "linear": [[0, 0.0]]})
        assert p.linear == ()

    def test_bipartite_rejects_same_side_coupling(self):
        with pytest.raises(ValidationError, match="cross"):
            parse_problem({"family": "K_{2,3}", "quadratic": [[0, 1, 1.0]]})
        with pytest.raises(ValidationError, match="cross"):
            parse_problem({"family": "K_{2,3}", "quadratic": [[2, 3, 1.0]]})


class TestEvaluate:
    def test_complete_by_hand(self):
        p = parse_problem(
            {
                "family": "K_3",
                "linear": [[0, 1.0], [1, -2.0]],
                "quadratic": [[0, 1, 3.0], [1, 2, -1.0]],
            }
        )
        # x = (1,1,0): 1 - 2 + 3 = 2;  x = (0,1,1): -2 - 1 = -3
        assert evaluate(p, (1, 1, 0)) == pytest.approx(2.0)
        assert evaluate(p, (0, 1, 1)) == pytest.approx(-3.0)
        assert evaluate(p, (0, 0, 0)) == 0.0

    def test_bipartite_xor_cost(self):
        p = parse_problem(K23)
        # all equal: no disagreement anywhere
        assert evaluate(p, (0, 0, 0, 0, 0)) == 0.0
        assert evaluate(p, (1, 1, 1, 1, 1)) == 0.0
        # x0=1 disagrees with y0 (J=0.2) and y1 (J=-0.1)
        assert evaluate(p, (1, 0, 0, 0, 0)) == pytest.approx(0.1)

    def test_flip_symmetry(self):
        p = parse_problem(K23)
        for mask in range(32):
            bits = tuple((mask >> i) & 1 for i in range(5))
            flipped = tuple(1 - b for b in bits)
            assert evaluate(p, bits) == pytest.approx(evaluate(p, flipped))

    def test_assignment_validation(self):
        p = parse_problem({"family": "K_2"})
        with pytest.raises(ValidationError):
            evaluate(p, (0,))
        with pytest.raises(ValidationError):
            evaluate(p, (0, 2))


class TestBruteForce:
    def test_hand_checked_minimum(self):
        p = parse_problem(
            {
                "family": "K_2",
                "linear": [[0, -1.0], [1, 2.0]],
                "quadratic": [[0, 1, -3.0]],
            }
        )
        # (0,0)=0, (1,0)=-1, (0,1)=2, (1,1)=-2
        value, argmin = brute_force_optimum(p)
        assert value == -2.0
        assert argmin == ((1, 1),)

    def test_bipartite_optima_come_in_flip_pairs(self):
        p = parse_problem(K23)
        value, argmin = brute_force_optimum(p)
        assert value == pytest.approx(-0.1)
        flips = {tuple(1 - b for b in a) for a in argmin}
        assert flips == set(argmin)

    def test_cap(self):
        with pytest.raises(ValidationError, match="capped"):
            brute_force_optimum(parse_problem({"family": "K_{5,20}"}))

    @given(st.data())
    @settings(max_examples=30, deadline=None)
    def test_never_beaten_by_random_assignment(self, data):
        coeffs = data.draw(
            st.lists(
                st.floats(-2, 2, allow_nan=False),
                min_size=6,
                max_size=6,
            )
        )
        quad = [[i, j, coeffs.pop()] for i in range(4) for j in range(i + 1, 4)]
        p = parse_problem({"family": "K_4", "quadratic": quad})
        value, argmin = brute_force_optimum(p)
        bits = tuple(data.draw(st.integers(0, 1)) for _ in range(4))
        assert evaluate(p, bits) >= value - 1e-12
        for a in argmin:
            assert evaluate(p, a) == pytest.approx(value)

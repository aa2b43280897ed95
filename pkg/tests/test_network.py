from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoflow.network import (
    NetworkError,
    PowerNetwork,
    build_system,
    complete_graph,
    count_trivial_solutions,
    cycle_graph,
    enumerate_trivial_solutions,
    load_network,
    parse_network,
    parse_network_json,
    path_graph,
    random_susceptances,
    star_graph,
    trivial_solution_array,
)
from oracles import loop_residual


def test_parse_complete_four():
    text = "n 4\n0 1 1\n0 2 1\n0 3 1\n1 2 1\n1 3 1\n2 3 1\n"
    net = parse_network(text)
    assert net.n == 4
    assert net.num_edges == 6


def test_parse_cycle_with_comments():
    text = "# five-node ring\nn 5\n0 1 1.0  # first line\n1 2 1.0\n2 3 1.0\n3 4 1.0\n4 0 1.0\n"
    net = parse_network(text)
    assert net.num_edges == 5
    assert net.is_biconnected()


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("n 3\n0 1 1.0\n2 2 1.0\n", "self-loop"),
        ("n 3\n0 1 1.0\n1 0 2.0\n1 2 1.0\n", "duplicate"),
        ("n 4\n0 1 1.0\n2 3 1.0\n", "disconnected"),
        ("n 3\n0 1 0.0\n1 2 1.0\n", "zero susceptance"),
        ("n 3\n0 1 abc\n", "malformed"),
        ("n 3\n0 1\n", "expected"),
        ("0 1 1.0\n", "expected 'n"),
        ("", "missing"),
        ("n 3\n0 5 1.0\n", "outside"),
        ("n 3\n0 1 nan\n1 2 1.0\n", "non-finite"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(NetworkError, match=fragment):
        parse_network(text)


def test_json_and_text_agree(tmp_path):
    net = cycle_graph(5, [1.0, -0.5, 2.0, 0.7, -1.3])
    (tmp_path / "c5.edges").write_text(net.to_text())
    (tmp_path / "c5.json").write_text('{"n": 5, "edges": ' + str([list(e) for e in net.edges]) + "}")
    a = load_network(tmp_path / "c5.edges")
    b = load_network(tmp_path / "c5.json")
    assert a.edges == b.edges == net.edges


def test_json_malformed():
    with pytest.raises(NetworkError):
        parse_network_json('{"n": 3}')


def test_non_biconnected_is_accepted_but_can_be_required():
    pairs = [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 2, 1.0)]
    net = PowerNetwork.from_edges(5, pairs)
    assert not net.is_biconnected()
    with pytest.raises(NetworkError, match="biconnected"):
        PowerNetwork.from_edges(5, pairs, require_biconnected=True)


def test_families():
    assert complete_graph(5).num_edges == 10
    assert cycle_graph(7).num_edges == 7
    assert path_graph(4).is_tree
    assert star_graph(5).is_tree
    assert not cycle_graph(5).is_tree


def test_system_dimensions():
    assert build_system(complete_graph(4)).num_equations == 6
    system = build_system(cycle_graph(10))
    assert system.num_equations == 18
    assert system.num_vars == 18


def test_cycle_zero_at_flat_start():
    system = build_system(cycle_graph(5))
    z = np.concatenate([np.ones(4), np.zeros(4)])
    assert np.array_equal(system.evaluate(z), np.zeros(8))


def test_trivial_counts():
    assert len(enumerate_trivial_solutions(complete_graph(4))) == 8
    assert count_trivial_solutions(cycle_graph(20)) == 524_288
    two = enumerate_trivial_solutions(PowerNetwork.from_edges(2, [(0, 1, 1.0)]))
    assert [(s.x[0], s.y[0]) for s in two] == [(1, 0), (-1, 0)]


def test_trivial_enumeration_order():
    # binary counting on the sign pattern, node 1 least significant
    sols = enumerate_trivial_solutions(complete_graph(4))
    assert list(sols[1].x.real) == [-1, 1, 1]
    assert list(sols[2].x.real) == [1, -1, 1]
    assert list(sols[7].x.real) == [-1, -1, -1]
    arr = trivial_solution_array(complete_graph(4))
    assert np.array_equal(arr, np.array([s.z for s in sols]))


def test_trivial_cap():
    with pytest.raises(NetworkError):
        enumerate_trivial_solutions(cycle_graph(20), cap=10)


@pytest.mark.parametrize("n", range(2, 21))
def test_trivial_count_law(n):
    assert count_trivial_solutions(path_graph(n)) == 2 ** (n - 1)


@pytest.mark.parametrize("net", [complete_graph(4), cycle_graph(5), cycle_graph(6), complete_graph(5)])
def test_trivial_solutions_exact_zero(net):
    rng = np.random.default_rng(0)
    b = random_susceptances(net.num_edges, rng)
    system = build_system(net.with_susceptances(b))
    for sol in enumerate_trivial_solutions(net):
        assert np.all(system.evaluate(sol.z) == 0)
        assert sol.residual == 0.0
        assert sol.is_trivial and sol.is_real


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), family=st.sampled_from(["complete", "cycle"]), n=st.integers(3, 8))
def test_evaluate_matches_loop_oracle(seed, family, n):
    rng = np.random.default_rng(seed)
    net = complete_graph(n) if family == "complete" else cycle_graph(n)
    b = rng.normal(size=net.num_edges) + 1j * rng.normal(size=net.num_edges)
    z = rng.normal(size=2 * (n - 1)) + 1j * rng.normal(size=2 * (n - 1))
    got = build_system(net).evaluate(z, b)
    want = loop_residual(net, b, z)
    assert np.allclose(got, want, rtol=1e-14, atol=1e-14 * np.abs(want).max())


def test_random_susceptances_range():
    b = random_susceptances(1000, np.random.default_rng(1))
    assert np.all((np.abs(b) >= 0.5) & (np.abs(b) <= 2.0))
    assert (b > 0).any() and (b < 0).any()
    wide = random_susceptances(1000, np.random.default_rng(1), 0.1, 2.0)
    assert np.abs(wide).min() >= 0.1

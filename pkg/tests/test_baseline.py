from __future__ import annotations

import numpy as np
import pytest

from monoflow.baseline import (
    MAX_TOTAL_DEGREE_VARS,
    PathCapError,
    compare_with_monodromy,
    match_points,
    solve_total_degree,
    start_roots,
)
from monoflow.network import (
    build_system,
    complete_graph,
    cycle_graph,
    enumerate_trivial_solutions,
    path_graph,
    random_susceptances,
    star_graph,
    trivial_solution_array,
)
from monoflow.tracker import TrackResult
from oracles import loop_residual


def test_k4_paths_and_trivials(k4_solved):
    td = k4_solved.td
    assert td.path_count == 64
    assert td.finite_paths + td.diverged + td.failed == td.path_count
    pts = td.points
    for t in trivial_solution_array(k4_solved.net):
        assert np.abs(pts - t).max(axis=1).min() <= 1e-10
    assert abs(abs(td.gamma) - 1) < 1e-15


def test_c5_path_count():
    net = cycle_graph(5, random_susceptances(5, np.random.default_rng(60)))
    td = solve_total_degree(build_system(net), rng=np.random.default_rng(61))
    assert td.path_count == 256
    assert len(td.solutions) == 30
    for s in td.solutions:
        assert np.abs(loop_residual(net, net.susceptances, s.z)).max() <= 1e-10 * max(1.0, np.abs(s.z).max()) ** 2


def test_path_cap():
    net = complete_graph(MAX_TOTAL_DEGREE_VARS + 2)
    with pytest.raises(PathCapError):
        solve_total_degree(build_system(net))


@pytest.mark.parametrize("net", [path_graph(4), star_graph(5)])
def test_trees_have_only_trivial_endpoints(net):
    td = solve_total_degree(build_system(net), rng=np.random.default_rng(62))
    assert all(s.is_trivial for s in td.solutions)
    assert len(td.solutions) == 2 ** (net.n - 1)


def test_finite_set_independent_of_gamma_and_r():
    net = complete_graph(4, random_susceptances(6, np.random.default_rng(63)))
    system = build_system(net)
    runs = [solve_total_degree(system, rng=np.random.default_rng(s)) for s in (64, 65, 66)]
    base = runs[0].points
    for other in runs[1:]:
        pairs, ua, ub = match_points(base, other.points, 1e-6)
        assert not ua and not ub
        assert len(pairs) == len(base)
    assert len({r.gamma for r in runs}) == 3


def test_compare_detects_deleted_solution(k4_solved):
    trivials = enumerate_trivial_solutions(k4_solved.net)
    full = compare_with_monodromy(k4_solved.td, k4_solved.mono.registry, trivials)
    assert full.ok and full.matched == 20

    class Truncated:
        def expanded(self):
            return k4_solved.mono.registry.expanded()[1:]

    report = compare_with_monodromy(k4_solved.td, Truncated(), trivials)
    assert not report.ok
    assert len(report.unmatched_total_degree) == 1
    assert not report.unmatched_monodromy
    doc = report.to_dict()
    assert doc["ok"] is False and len(doc["unmatched_total_degree"]) == 1


def test_compare_tree_without_registry():
    net = path_graph(4)
    td = solve_total_degree(build_system(net), rng=np.random.default_rng(67))
    report = compare_with_monodromy(td, None, enumerate_trivial_solutions(net))
    assert report.ok and report.matched == 8


def test_match_points_one_to_one():
    A = np.array([[0.0, 1.0], [0.0, 1.0 + 1e-9]])
    B = np.array([[0.0, 1.0]])
    pairs, ua, ub = match_points(A, B, 1e-6)
    assert len(pairs) == 1 and len(ua) == 1 and not ub
    pairs, ua, ub = match_points(np.zeros((0, 2)), B)
    assert pairs == [] and ub == [0]


def test_match_points_relative_scale():
    A = np.array([[1e4, 0.0]])
    assert match_points(A, A + 5e-3)[0] == [(0, 0)]
    assert match_points(A, A + 5e-1)[0] == []


def test_start_root_order():
    r = np.array([4.0, 9.0], dtype=complex)
    roots = start_roots(r)
    assert roots.tolist() == [[2, 3], [2, -3], [-2, 3], [-2, -3]]


def test_collisions_resolved_in_favour_of_stepped_paths():
    from monoflow.baseline import _collision_groups, _resolve_collisions

    z = np.array([0.5, 0.5j])
    ok = TrackResult("success", z.copy(), 10, 0, 0.0)
    rescued = TrackResult("success", z + 1e-12, 10, 0, 0.0, s=1 - 1e-8, rescued=True)
    other = TrackResult("success", np.array([2.0, 1.0]), 10, 0, 0.0)
    results = [ok, rescued, other]
    assert _collision_groups(results, 1e-6) == [[0, 1]]
    out, rerun = _resolve_collisions(None, None, results, None, 1, 1e-6)
    assert rerun == 0
    assert [r.status for r in out] == ["success", "diverged", "success"]

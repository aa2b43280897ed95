"""Total-degree homotopy: the independent check on the monodromy solver.

Every equation is quadratic, so the start system ``z_i**2 = r_i`` has
``2**(2(n-1)) = 4**(n-1)`` roots and every one of them is tracked.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from monoflow.network import PowerFlowSystem, Solution
from monoflow.numsys import TotalDegreeHomotopy, evaluate_from_matrix, jacobian_from_matrix, newton_batch
from monoflow.symmetry import close
from monoflow.tracker import DIVERGED, TrackOptions, track_parallel

log = logging.getLogger(__name__)

#: default cap on n - 1 (16,384 paths)
MAX_TOTAL_DEGREE_VARS = 7


class PathCapError(ValueError):
    pass


def start_roots(r: np.ndarray) -> np.ndarray:
    """All ``2**N`` roots of ``z_i**2 = r_i``; row ``j`` takes ``-sqrt(r_i)`` where bit ``N-1-i`` of ``j`` is set."""
    root = np.sqrt(np.asarray(r, dtype=complex))
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=root.size)))
    return signs * root


@dataclass
class TotalDegreeRun:
    path_count: int
    solutions: list[Solution]
    finite_paths: int
    diverged: int
    failed: int
    gamma: complex
    r: np.ndarray = field(repr=False)
    statuses: dict = field(default_factory=dict)
    retried: int = 0

    @property
    def points(self) -> np.ndarray:
        if not self.solutions:
            return np.zeros((0, 0), dtype=complex)
        return np.array([s.z for s in self.solutions])


def solve_total_degree(
    system: PowerFlowSystem,
    b=None,
    opts: TrackOptions | None = None,
    rng: np.random.Generator | None = None,
    workers: int = 1,
    force: bool = False,
    dedup_tol: float = 1e-6,
) -> TotalDegreeRun:
    """Track all ``4**(n-1)`` total-degree paths to the system at susceptances ``b``."""
    h = system.n - 1
    if h > MAX_TOTAL_DEGREE_VARS and not force:
        raise PathCapError(
            f"total-degree homotopy on n={system.n} needs {4**h} paths (cap {4**MAX_TOTAL_DEGREE_VARS}); pass force"
        )
    opts = opts or TrackOptions()
    rng = rng if rng is not None else np.random.default_rng()
    b = system.b if b is None else np.asarray(b)
    N = system.num_vars
    gamma = np.exp(2j * np.pi * rng.uniform())
    r = rng.uniform(0.5, 2.0, size=N) * np.exp(2j * np.pi * rng.uniform(size=N))
    hom = TotalDegreeHomotopy(system, b, gamma, r)
    starts = start_roots(r)

    results = track_parallel(hom, starts, opts, workers=workers)
    retry = [i for i, res in enumerate(results) if not res.success and res.status != DIVERGED]
    if retry:
        again = track_parallel(hom, starts[retry], opts.halved(), workers=workers)
        for i, res in zip(retry, again):
            results[i] = res
    results, rerun = _resolve_collisions(hom, starts, results, opts, workers, dedup_tol)
    statuses = Counter(res.status for res in results)

    ends = np.array([res.endpoint for res in results if res.success]).reshape(-1, N)
    sols = _refine_and_dedup(system, b, ends, dedup_tol)
    finite = statuses.get("success", 0)
    diverged = statuses.get(DIVERGED, 0)
    return TotalDegreeRun(
        path_count=len(starts),
        solutions=sols,
        finite_paths=finite,
        diverged=diverged,
        failed=len(starts) - finite - diverged,
        gamma=gamma,
        r=r,
        statuses=dict(statuses),
        retried=len(retry) + rerun,
    )


def _collision_groups(results, tol) -> list[list[int]]:
    """Groups (two or more) of successful paths that share an endpoint."""
    idx = [i for i, res in enumerate(results) if res.success]
    groups: list[list[int]] = []
    for i in idx:
        for g in groups:
            if close(results[i].endpoint, results[g[0]].endpoint, tol):
                g.append(i)
                break
        else:
            groups.append([i])
    return [g for g in groups if len(g) > 1]


def _resolve_collisions(hom, starts, results, opts, workers, tol, rounds=2):
    # Generic solutions are regular, so two paths sharing an endpoint means
    # some of them jumped. A Newton landing loses to a path that stepped all
    # the way in; remaining ties are retracked with tighter settings.
    rerun = 0
    for _ in range(rounds):
        groups = _collision_groups(results, tol)
        for g in groups:
            if any(not results[i].rescued for i in g):
                for i in g:
                    if results[i].rescued:
                        results[i] = replace(results[i], status=DIVERGED)
        groups = _collision_groups(results, tol)
        if not groups:
            break
        bad = [i for g in groups for i in g]
        opts = opts.tightened()
        log.info("retracking %d colliding total-degree paths", len(bad))
        again = track_parallel(hom, starts[bad], opts, workers=workers)
        before = {i: results[i] for i in bad}
        for i, res in zip(bad, again):
            results[i] = res
        # never lose an endpoint that was already verified
        for g in groups:
            if not any(results[i].success and close(results[i].endpoint, before[g[0]].endpoint, tol) for i in bad):
                keep = next((i for i in g if not results[i].success), g[0])
                results[keep] = before[keep]
        rerun += len(bad)
    return results, rerun


def _refine_and_dedup(system, b, ends, tol) -> list[Solution]:
    if len(ends) == 0:
        return []
    Bm = system.susceptance_matrix(np.asarray(b, dtype=complex))
    zr, _, _, _, _ = newton_batch(
        lambda z, rows: evaluate_from_matrix(Bm, z),
        lambda z, rows: jacobian_from_matrix(Bm, z),
        ends,
        1e-12,
        5,
        relative=True,
    )
    zr = np.where(np.all(np.isfinite(zr), axis=-1)[:, None], zr, ends)
    kept: list[np.ndarray] = []
    for z in zr:
        if not any(close(z, k, tol) for k in kept):
            kept.append(z)
    res = np.abs(evaluate_from_matrix(Bm, np.array(kept))).max(axis=-1)
    return [Solution.from_vector(z, r) for z, r in zip(kept, res)]


@dataclass
class ComparisonReport:
    matched: int
    unmatched_total_degree: list[np.ndarray]
    unmatched_monodromy: list[np.ndarray]
    total_degree_count: int
    monodromy_count: int

    @property
    def ok(self) -> bool:
        return not self.unmatched_total_degree and not self.unmatched_monodromy

    def to_dict(self) -> dict:
        def pts(arr):
            return [[[float(v.real), float(v.imag)] for v in z] for z in arr]

        return {
            "ok": self.ok,
            "matched": self.matched,
            "total_degree_count": self.total_degree_count,
            "monodromy_count": self.monodromy_count,
            "unmatched_total_degree": pts(self.unmatched_total_degree),
            "unmatched_monodromy": pts(self.unmatched_monodromy),
        }


def match_points(A: np.ndarray, B: np.ndarray, tol: float = 1e-6) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Greedy one-to-one matching of rows of ``A`` and ``B`` (nearest first) within :func:`close`.

    Returns ``(pairs, unmatched_a, unmatched_b)``.
    """
    if len(A) == 0 or len(B) == 0:
        return [], list(range(len(A))), list(range(len(B)))
    A = np.asarray(A).reshape(len(A), -1)
    B = np.asarray(B).reshape(len(B), -1)
    D = np.abs(A[:, None, :] - B[None, :, :]).max(axis=-1)
    scale = np.maximum(1.0, np.abs(A).max(axis=-1))[:, None]
    cand = np.argwhere(D <= tol * scale)
    order = np.argsort(D[cand[:, 0], cand[:, 1]], kind="stable")
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for i, j in cand[order]:
        if i not in used_a and j not in used_b:
            used_a.add(int(i))
            used_b.add(int(j))
            pairs.append((int(i), int(j)))
    return (
        sorted(pairs),
        [i for i in range(len(A)) if i not in used_a],
        [j for j in range(len(B)) if j not in used_b],
    )


def compare_with_monodromy(td: TotalDegreeRun, registry, trivials, tol: float = 1e-6) -> ComparisonReport:
    """Match total-degree endpoints one-to-one against trivial solutions plus the expanded registry."""
    td_pts = td.points
    triv = np.array([s.z if isinstance(s, Solution) else s for s in trivials]).reshape(len(trivials), -1)
    mono = registry.expanded() if registry is not None else np.zeros((0, triv.shape[1]), dtype=complex)
    others = np.concatenate([triv, mono.reshape(len(mono), -1)]) if len(mono) else triv
    pairs, ua, ub = match_points(td_pts, others, tol)
    return ComparisonReport(
        matched=len(pairs),
        unmatched_total_degree=[td_pts[i] for i in ua],
        unmatched_monodromy=[others[j] for j in ub],
        total_degree_count=len(td_pts),
        monodromy_count=len(others),
    )

"""Monodromy solver for the nontrivial solutions.

A start pair (susceptances, nontrivial solution) is built directly: pick
phasors on the unit circle through the tangent half-angle parametrization,
then solve the balance equations, which are linear in the susceptances, for
a kernel vector. From there, solutions are transported to the target
susceptances and the fiber is filled by tracking every known solution around
random triangles in complex susceptance space.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from monoflow.network import PowerFlowSystem, PowerNetwork, Solution, trivial_distance
from monoflow.numsys import (
    ParameterHomotopy,
    _susceptance_matrix,
    equilibrated_sv_ratio,
    evaluate_from_matrix,
    jacobian_from_matrix,
    newton_batch,
    scaled_residual,
)
from monoflow.symmetry import SymmetryGroup, canonicalize_vector, close, symmetry_group
from monoflow.tracker import TrackOptions, track_parallel

log = logging.getLogger(__name__)

T_MARGIN = 0.1
_FORBIDDEN_T = (1j, -1j, 0.0, 1.0, -1.0)


class UnsupportedTopologyError(ValueError):
    """Tree networks have no nontrivial solutions; nothing to seed."""


class SeedingError(RuntimeError):
    pass


class MonodromyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# seeding

@dataclass
class SeedPair:
    b_seed: np.ndarray
    z_seed: np.ndarray
    t_used: np.ndarray
    A: np.ndarray = field(repr=False)
    residual: float = 0.0


def half_angle_point(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``x = 2t/(1+t^2)``, ``y = (1-t^2)/(1+t^2)``, so ``x^2 + y^2 = 1``."""
    t = np.asarray(t, dtype=complex)
    d = 1.0 + t * t
    return 2.0 * t / d, (1.0 - t * t) / d


def t_margins_ok(t: np.ndarray, margin: float = T_MARGIN) -> bool:
    t = np.asarray(t, dtype=complex)
    for c in _FORBIDDEN_T:
        if np.any(np.abs(t - c) < margin):
            return False
    diff = np.abs(t[:, None] - t[None, :])
    np.fill_diagonal(diff, np.inf)
    return bool(np.all(diff >= margin))


def sample_t(h: int, rng: np.random.Generator, margin: float = T_MARGIN) -> np.ndarray:
    """Complex parameters with modulus in [0.5, 2] and uniform phase, resampled until they respect the margins."""
    t = np.empty(h, dtype=complex)
    for k in range(h):
        while True:
            c = rng.uniform(0.5, 2.0) * np.exp(2j * np.pi * rng.uniform())
            if all(abs(c - f) >= margin for f in _FORBIDDEN_T) and all(abs(c - t[m]) >= margin for m in range(k)):
                t[k] = c
                break
    return t


def weighted_incidence(net: PowerNetwork, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(n-1) x |E|`` matrix of the balance equations as linear forms in the susceptances.

    Column ``e = (p, q)`` holds ``x_p y_q - x_q y_p`` in row ``p`` and its
    negative in row ``q``; the reference node's row is dropped.
    """
    X = np.concatenate([[1.0 + 0j], x])
    Y = np.concatenate([[0.0 + 0j], y])
    A = np.zeros((net.n, net.num_edges), dtype=complex)
    for e, (p, q, _) in enumerate(net.edges):
        w = X[p] * Y[q] - X[q] * Y[p]
        A[p, e] += w
        A[q, e] -= w
    return A[1:]


def complete_pivot_kernel(A: np.ndarray, tol: float | None = None) -> tuple[int, np.ndarray]:
    """Rank and a kernel basis of ``A`` from Gauss-Jordan with complete pivoting.

    Basis vectors (columns of the returned array) are ordered by free column
    in pivot order.
    """
    M = np.array(A, dtype=complex, copy=True)
    rows, cols = M.shape
    if tol is None:
        tol = max(rows, cols) * np.finfo(float).eps * max(np.abs(M).max(initial=0.0), 1.0)
    perm = np.arange(cols)
    rank = 0
    for r in range(min(rows, cols)):
        sub = np.abs(M[r:, r:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol:
            break
        i += r
        j += r
        M[[r, i]] = M[[i, r]]
        M[:, [r, j]] = M[:, [j, r]]
        perm[[r, j]] = perm[[j, r]]
        M[r] /= M[r, r]
        for k in range(rows):
            if k != r and M[k, r] != 0:
                M[k] -= M[k, r] * M[r]
        rank += 1
    free = cols - rank
    basis = np.zeros((cols, free), dtype=complex)
    for f in range(free):
        v = np.zeros(cols, dtype=complex)
        v[rank + f] = 1.0
        v[:rank] = -M[:rank, rank + f]
        basis[perm, f] = v
    return rank, basis


def seed(net: PowerNetwork, rng: np.random.Generator, max_resamples: int = 5) -> SeedPair:
    """Construct a generic complex susceptance vector together with a nontrivial solution."""
    if net.num_edges < net.n:
        raise UnsupportedTopologyError(
            f"{net.name or 'network'} is a tree (|E| = n - 1): its nontrivial solution set is empty"
        )
    h = net.n - 1
    sys = PowerFlowSystem(net)
    for _ in range(max_resamples):
        t = sample_t(h, rng)
        x, y = half_angle_point(t)
        A = weighted_incidence(net, x, y)
        rank, basis = complete_pivot_kernel(A)
        if rank != h or basis.shape[1] == 0:
            continue
        # a single free-column basis vector vanishes on every other free
        # edge, so take a random combination to get full support
        coef = rng.normal(size=basis.shape[1]) + 1j * rng.normal(size=basis.shape[1])
        b = basis @ coef
        b = b / np.abs(b).max()
        if np.abs(b).min() < 1e-3:
            continue
        z0 = np.concatenate([x, y])
        Bm = _susceptance_matrix(net, b)
        zr, _, conv, _, _ = newton_batch(
            lambda z, rows: evaluate_from_matrix(Bm, z),
            lambda z, rows: jacobian_from_matrix(Bm, z),
            z0[None, :],
            1e-12,
            10,
            relative=True,
        )
        z = zr[0] if conv[0] else z0
        res = float(np.abs(evaluate_from_matrix(Bm, z)).max())
        if res > 1e-10 or np.abs(z[h:]).max() <= 0.01:
            continue
        return SeedPair(b_seed=b, z_seed=z, t_used=t, A=A, residual=res)
    raise SeedingError(f"could not build a full-rank seed after {max_resamples} samples")


# ---------------------------------------------------------------------------
# registry

class SolutionRegistry:
    """Canonical representatives of the nontrivial fiber at fixed susceptances.

    Insertion refines the point, rejects anything near a trivial solution or
    singular, canonicalizes under the symmetry group and deduplicates.
    """

    def __init__(self, system: PowerFlowSystem, b, group: SymmetryGroup, dedup_tol: float = 1e-6):
        self.system = system
        self.b = np.asarray(b)
        self.group = group
        self.dedup_tol = dedup_tol
        self._Bm = _susceptance_matrix(system.network, self.b)
        self._reps: list[np.ndarray] = []
        self._orbit: list[int] = []
        self._buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        self._cell = max(1e3 * dedup_tol, 1e-4)
        self.stats = Counter()

    def __len__(self) -> int:
        return len(self._reps)

    @property
    def representatives(self) -> np.ndarray:
        if not self._reps:
            return np.zeros((0, self.system.num_vars), dtype=complex)
        return np.array(self._reps)

    @property
    def orbit_sizes(self) -> list[int]:
        return list(self._orbit)

    @property
    def nontrivial_count(self) -> int:
        return int(sum(self._orbit))

    def orbit_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self._orbit).items()))

    def _key(self, z) -> tuple[int, int]:
        # buckets on the first coordinate, log-spaced so relative tolerances fit in one cell
        def cell(v):
            return math.floor(math.copysign(math.log1p(abs(v) / self._cell), v))

        return (cell(z[0].real), cell(z[0].imag))

    def find(self, z: np.ndarray) -> int | None:
        """Index of a stored representative within the dedup tolerance of ``z``."""
        kr, ki = self._key(z)
        for dr in (-1, 0, 1):
            for di in (-1, 0, 1):
                for idx in self._buckets.get((kr + dr, ki + di), ()):
                    if close(z, self._reps[idx], self.dedup_tol):
                        return idx
        return None

    def refine(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Newton-polish a stack of points; returns ``(points, accepted)``."""
        Z = np.atleast_2d(Z)
        Bm = self._Bm
        zr, _, _, _, _ = newton_batch(
            lambda z, rows: evaluate_from_matrix(Bm, z),
            lambda z, rows: jacobian_from_matrix(Bm, z),
            Z,
            1e-12,
            5,
            relative=True,
        )
        res = scaled_residual(evaluate_from_matrix(Bm, zr), zr)
        return zr, np.atleast_1d(res <= 1e-10) & np.all(np.isfinite(zr), axis=-1)

    def is_regular(self, z: np.ndarray) -> bool:
        """Singular-value ratio test on the row- then column-equilibrated Jacobian.

        Equilibration keeps large-magnitude solutions, whose raw Jacobian
        condition grows like ``|z|**2``, from being rejected as singular. The
        cutoff is where the forward error ``cond * eps`` of a refined point
        reaches the dedup tolerance: beyond it the point cannot be told apart
        from its neighbours anyway.
        """
        return bool(equilibrated_sv_ratio(jacobian_from_matrix(self._Bm, z)) > self.regularity_cutoff)

    @property
    def regularity_cutoff(self) -> float:
        return float(np.finfo(float).eps) / self.dedup_tol

    def insert(self, z: np.ndarray, refined: bool = False) -> bool:
        """Insert one point; returns True if it produced a new representative."""
        z = np.asarray(z, dtype=complex)
        if not refined:
            zr, ok = self.refine(z)
            if not ok[0]:
                self.stats["rejected_residual"] += 1
                return False
            z = zr[0]
        if trivial_distance(z) <= self.dedup_tol:
            self.stats["rejected_trivial"] += 1
            log.debug("discarding endpoint next to a trivial solution (path jump)")
            return False
        rep, size = canonicalize_vector(z, self.group)
        if self.find(rep) is not None:
            return False
        if not self.is_regular(rep):
            self.stats["rejected_singular"] += 1
            return False
        self._buckets[self._key(rep)].append(len(self._reps))
        self._reps.append(rep)
        self._orbit.append(size)
        return True

    def insert_many(self, Z: np.ndarray) -> int:
        if len(Z) == 0:
            return 0
        zr, ok = self.refine(np.asarray(Z))
        self.stats["rejected_residual"] += int(np.count_nonzero(~ok))
        return sum(self.insert(z, refined=True) for z in zr[ok])

    def expanded(self) -> np.ndarray:
        """Every orbit member of every representative, polished, deduplicated."""
        out: list[np.ndarray] = []
        for rep in self._reps:
            images = self.group.orbit(rep)
            zr, ok = self.refine(images)
            kept: list[np.ndarray] = []
            for w, img, good in zip(zr, images, ok):
                w = w if good else img
                if not any(close(w, k, self.dedup_tol) for k in kept):
                    kept.append(w)
            out.extend(kept)
        if not out:
            return np.zeros((0, self.system.num_vars), dtype=complex)
        return np.array(out)

    def solutions(self, expand: bool = True) -> list[Solution]:
        Bm = self._Bm
        if expand:
            pts = self.expanded()
            sizes = [s for s, rep in zip(self._orbit, self._reps) for _ in range(s)]
        else:
            pts = self.representatives
            sizes = list(self._orbit)
        res = np.abs(evaluate_from_matrix(Bm, pts)).max(axis=-1, initial=0.0) if len(pts) else []
        return [Solution.from_vector(z, r, orbit_size=s) for z, r, s in zip(pts, res, sizes)]

    def copy_empty(self, b) -> "SolutionRegistry":
        return SolutionRegistry(self.system, b, self.group, self.dedup_tol)


# ---------------------------------------------------------------------------
# loops

def default_stall_loops(n: int) -> int:
    if n <= 8:
        return 20
    return math.ceil(20 + 2 ** (n - 6))


@dataclass
class MonodromyOptions:
    stall_loops: int | None = None
    expected_count: int | None = None
    transport_retries: int = 10
    dedup_tol: float = 1e-6
    perturbation: tuple[float, float] = (0.5, 2.0)
    track_orbits: bool = False
    max_loops: int = 100_000
    workers: int = 1
    track: TrackOptions = field(default_factory=TrackOptions)


@dataclass
class MonodromyResult:
    registry: SolutionRegistry
    seed: SeedPair
    loops: int
    paths_tracked: int
    path_failures: int
    stale_loops: int
    seeds_used: int = 1

    @property
    def stats(self) -> dict:
        return {
            "loops_run": self.loops,
            "paths_tracked": self.paths_tracked,
            "path_failures": self.path_failures,
            "stale_loops": self.stale_loops,
            "seeds_used": self.seeds_used,
            **{k: int(v) for k, v in self.registry.stats.items()},
        }


def random_vertex(
    center: np.ndarray, rng: np.random.Generator, lo: float = 0.5, hi: float = 2.0, scale=None
) -> np.ndarray:
    """``center`` plus complex noise of modulus ``rho * scale`` per entry, ``rho`` uniform in [lo, hi].

    ``scale`` defaults to the RMS modulus of ``center``. Scaling each entry by
    its own modulus instead keeps small susceptances small and leaves
    solutions near infinity almost never permuted.
    """
    center = np.asarray(center, dtype=complex)
    if scale is None:
        scale = np.sqrt(np.mean(np.abs(center) ** 2))
    scale = np.asarray(scale, dtype=float)
    rho = rng.uniform(lo, hi, size=center.shape)
    phase = np.exp(2j * np.pi * rng.uniform(size=center.shape))
    return center + scale * rho * phase


def track_segments(system, Z, vertices, opts: TrackOptions, workers: int = 1):
    """Track rows of ``Z`` along the polygonal path through ``vertices``.

    Returns ``(endpoints, alive)`` where ``alive`` marks rows that made it
    through every segment.
    """
    Z = np.array(Z, dtype=complex)
    alive = np.ones(len(Z), dtype=bool)
    failures = 0
    for b0, b1 in zip(vertices[:-1], vertices[1:]):
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        hom = ParameterHomotopy(system, b0, b1)
        results = track_parallel(hom, Z[rows], opts, workers=workers)
        for r, res in zip(rows, results):
            if res.success:
                Z[r] = res.endpoint
            else:
                alive[r] = False
                failures += 1
    return Z, alive, failures


def run_monodromy(
    system: PowerFlowSystem,
    b_target,
    opts: MonodromyOptions | None = None,
    rng: np.random.Generator | None = None,
) -> MonodromyResult:
    """Populate the nontrivial fiber at ``b_target`` by monodromy loops."""
    opts = opts or MonodromyOptions()
    rng = rng if rng is not None else np.random.default_rng()
    net = system.network
    b_target = np.asarray(b_target, dtype=complex)
    group = symmetry_group(net)
    registry = SolutionRegistry(system, b_target, group, opts.dedup_tol)
    stall = opts.stall_loops if opts.stall_loops is not None else default_stall_loops(net.n)

    paths = 0
    failures = 0
    start = None
    for attempt in range(1, opts.transport_retries + 1):
        pair = seed(net, rng)
        Z, alive, nf = track_segments(system, pair.z_seed[None, :], [pair.b_seed, b_target], opts.track, 1)
        paths += 1
        failures += nf
        if alive[0] and registry.insert(Z[0]):
            start = pair
            break
        log.info("seed transport %d failed, reseeding", attempt)
    if start is None:
        raise MonodromyError(
            f"could not transport a seed to the target after {opts.transport_retries} seeds; "
            "the target susceptances may not be generic"
        )

    loops = 0
    stale = 0
    while stale < stall and loops < opts.max_loops:
        if opts.expected_count is not None and len(registry) >= opts.expected_count:
            break
        b1 = random_vertex(b_target, rng, *opts.perturbation)
        b2 = random_vertex(b_target, rng, *opts.perturbation)
        reps = registry.representatives
        if opts.track_orbits:
            reps = group.orbit(reps).reshape(-1, reps.shape[-1])
        Z, alive, nf = track_segments(system, reps, [b_target, b1, b2, b_target], opts.track, opts.workers)
        loops += 1
        paths += len(reps)
        failures += nf
        new = registry.insert_many(Z[alive])
        stale = 0 if new else stale + 1
        log.debug("loop %d: %d new, %d representatives, %d failures", loops, new, len(registry), nf)

    return MonodromyResult(
        registry=registry,
        seed=start,
        loops=loops,
        paths_tracked=paths,
        path_failures=failures,
        stale_loops=stale,
        seeds_used=attempt,
    )


def transport_fiber(
    registry: SolutionRegistry,
    system: PowerFlowSystem,
    b_from,
    b_to,
    opts: MonodromyOptions | None = None,
    rng: np.random.Generator | None = None,
    retries: int = 3,
) -> tuple[SolutionRegistry, int]:
    """Move every representative from ``b_from`` to ``b_to`` via a random complex midpoint.

    Returns the new registry and the number of representatives lost after
    ``retries`` fresh midpoints.
    """
    opts = opts or MonodromyOptions()
    rng = rng if rng is not None else np.random.default_rng()
    b_from = np.asarray(b_from, dtype=complex)
    b_to = np.asarray(b_to, dtype=complex)
    out = registry.copy_empty(b_to)
    if np.array_equal(b_from, b_to):
        for rep in registry.representatives:
            out.insert(rep, refined=True)
        return out, 0
    pending = registry.representatives
    for _ in range(retries + 1):
        if len(pending) == 0:
            break
        scale = np.sqrt(np.mean(np.maximum(np.abs(b_from), np.abs(b_to)) ** 2))
        mid = random_vertex(0.5 * (b_from + b_to), rng, *opts.perturbation, scale=scale)
        Z, alive, _ = track_segments(system, pending, [b_from, mid, b_to], opts.track, opts.workers)
        out.insert_many(Z[alive])
        pending = pending[~alive]
    if len(pending):
        log.warning("transport lost %d representatives", len(pending))
    return out, len(pending)

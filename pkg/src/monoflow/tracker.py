"""Predictor-corrector path tracking for ``H(z, s) = 0``, ``s: 0 -> 1``.

The predictor is classical RK4 on the Davidenko equation
``dz/ds = -Hz(z, s)^{-1} Hs(z, s)``; the corrector is Newton at fixed ``s``.
Paths are advanced in lockstep as one numpy batch, but each path keeps its
own step size and bookkeeping, so a path's result does not depend on which
other paths share its batch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from monoflow.numsys import RESOLVABLE_RATIO, equilibrated_sv_ratio, newton_batch, scaled_residual, solve_batch

SUCCESS = "success"
DIVERGED = "diverged"
SINGULAR = "singular"
STEP_LIMIT = "step-limit"
MIN_STEP = "min-step"

_RUNNING = ""


@dataclass(frozen=True)
class TrackOptions:
    initial_step: float = 0.1
    min_step: float = 1e-7
    max_step: float = 0.2
    corrector_tol: float = 1e-8
    max_corrector_iters: int = 4
    max_steps: int = 10_000
    divergence_threshold: float = 1e8
    endpoint_tol: float = 1e-10
    endpoint_iters: int = 10
    # growth-exponent test for paths that stall close to s = 1
    infinity_window: float = 1e-4
    infinity_exponent: float = 0.2
    # Newton rescue of paths that stall inside the infinity window
    endgame_radius: float = 1.0
    # stepping in t = -log(1 - s) once a jump to s = 1 fails inside tail_start
    tail_start: float = 0.05
    tail_end: float = 1e-12
    log_initial_step: float = 1.0
    log_max_step: float = 2.0
    log_min_step: float = 1e-3

    def __post_init__(self):
        if not (0 < self.min_step <= self.initial_step <= self.max_step <= 1):
            raise ValueError("need 0 < min_step <= initial_step <= max_step <= 1")
        if self.corrector_tol <= 0 or self.max_corrector_iters < 1 or self.max_steps < 1:
            raise ValueError("invalid corrector or step-count options")

    def halved(self) -> "TrackOptions":
        """Same options with the initial step halved (used for retries)."""
        from dataclasses import replace

        return replace(self, initial_step=max(self.min_step, self.initial_step / 2))

    def tightened(self) -> "TrackOptions":
        """Shorter steps and a stricter corrector, for paths suspected of jumping."""
        from dataclasses import replace

        return replace(
            self,
            initial_step=max(self.min_step, self.initial_step / 4),
            max_step=max(self.min_step, self.max_step / 4),
            corrector_tol=max(1e-13, self.corrector_tol / 100),
        )


@dataclass
class TrackResult:
    status: str
    endpoint: np.ndarray | None
    steps: int
    failures: int
    residual: float = np.inf
    s: float = 1.0  # where the path stopped
    rescued: bool = False  # landed by the Newton endgame rather than by stepping

    @property
    def success(self) -> bool:
        return self.status == SUCCESS


def _tangent(hom, z, s):
    dz, ok = solve_batch(hom.Hz(z, s), -hom.Hs(z, s))
    return dz, ok


def _rk4(hom, z, s, h):
    hh = h[:, None]
    k1, ok1 = _tangent(hom, z, s)
    k2, ok2 = _tangent(hom, z + 0.5 * hh * k1, s + 0.5 * h)
    k3, ok3 = _tangent(hom, z + 0.5 * hh * k2, s + 0.5 * h)
    k4, ok4 = _tangent(hom, z + hh * k3, s + h)
    zp = z + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    ok = ok1 & ok2 & ok3 & ok4 & np.all(np.isfinite(zp), axis=-1)
    return zp, ok


def _update_growth(rows, s, norms, anchor_t, anchor_l, slopes):
    t = -np.log1p(-s[rows])
    l = np.log(np.maximum(norms, 1e-300))
    due = t - anchor_t[rows] >= 1.0
    rows, t, l = rows[due], t[due], l[due]
    slopes[rows, 0] = slopes[rows, 1]
    slopes[rows, 1] = (l - anchor_l[rows]) / (t - anchor_t[rows])
    anchor_t[rows] = t
    anchor_l[rows] = l


def _endgame(hom, z, rows, opts: TrackOptions) -> np.ndarray:
    """Newton at ``s = 1`` for paths stalled just short of it; returns the rows that landed.

    Near an ill-conditioned endpoint the corrector cannot meet its tolerance
    and the step collapses. Such a path is kept if Newton from the stall point
    reaches a resolvable solution close by.
    """
    one = np.ones(rows.size)
    func = lambda zz, r: hom.H(zz, one[r])  # noqa: E731
    jac = lambda zz, r: hom.Hz(zz, one[r])  # noqa: E731
    z0 = z[rows]
    zr, _, _, _, _ = newton_batch(func, jac, z0, opts.endpoint_tol, opts.endpoint_iters, relative=True, check_residual=False)
    ok = np.all(np.isfinite(zr), axis=-1)
    scale = np.maximum(1.0, np.abs(z0).max(axis=-1))
    ok &= np.abs(zr - z0).max(axis=-1) <= opts.endgame_radius * scale
    if np.any(ok):
        k = np.flatnonzero(ok)
        ok[k] &= scaled_residual(hom.H(zr[k], one[k]), zr[k]) <= opts.endpoint_tol
    if np.any(ok):
        k = np.flatnonzero(ok)
        ok[k] &= equilibrated_sv_ratio(hom.Hz(zr[k], one[k])) > RESOLVABLE_RATIO
    z[rows[ok]] = zr[ok]
    return rows[ok]


def _rk4_log(hom, z, s, dt):
    """RK4 in ``t = -log(1 - s)``, where ``dz/dt = (1 - s) dz/ds``."""
    rem = 1.0 - s

    def f(zz, tau):
        ss = 1.0 - rem * np.exp(-tau)
        k, ok = _tangent(hom, zz, ss)
        return (1.0 - ss)[:, None] * k, ok

    d = dt[:, None]
    k1, ok1 = f(z, np.zeros_like(dt))
    k2, ok2 = f(z + 0.5 * d * k1, 0.5 * dt)
    k3, ok3 = f(z + 0.5 * d * k2, 0.5 * dt)
    k4, ok4 = f(z + d * k3, dt)
    zp = z + (d / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    ok = ok1 & ok2 & ok3 & ok4 & np.all(np.isfinite(zp), axis=-1)
    return zp, ok


def track_many(hom, starts, opts: TrackOptions | None = None) -> list[TrackResult]:
    """Track every row of ``starts`` from ``s = 0`` to ``s = 1`` along ``hom``.

    ``hom`` provides ``H``, ``Hz`` and ``Hs``, each taking a stack of points
    and a matching vector of ``s`` values.

    Steps are taken in ``s`` until a jump to ``s = 1`` fails within
    ``tail_start`` of the end; from then on the path steps in
    ``t = -log(1 - s)`` down to ``1 - s = tail_end``. This keeps paths that run
    off to infinity from crawling towards ``s = 1`` with halving steps.

    A path is ``diverged`` once ``|z|_inf`` exceeds the divergence threshold,
    or when it stalls (or finishes its tail) within ``infinity_window`` of
    ``s = 1`` while ``|z|`` has been growing like ``(1 - s)**-nu`` with
    ``nu > infinity_exponent`` over the last two e-folds of ``1 - s``. Before
    that verdict the path gets one Newton attempt at ``s = 1`` (see
    :func:`_endgame`). Successful endpoints are refined at ``s = 1`` to a
    residual below ``endpoint_tol * max(1, |z|)**2``.
    """
    opts = opts or TrackOptions()
    z = np.array(starts, dtype=complex, copy=True)
    if z.ndim != 2:
        raise ValueError("starts must be a 2-D array of points")
    P = z.shape[0]
    s = np.zeros(P)
    h = np.full(P, opts.initial_step)
    dt = np.full(P, opts.log_initial_step)
    logmode = np.zeros(P, dtype=bool)
    streak = np.zeros(P, dtype=int)
    steps = np.zeros(P, dtype=int)
    failures = np.zeros(P, dtype=int)
    status = np.full(P, _RUNNING, dtype=object)
    reached = np.zeros(P, dtype=bool)
    rescued = np.zeros(P, dtype=bool)
    # log-log growth of |z| against 1/(1 - s), sampled once per e-fold of 1 - s
    anchor_t = np.zeros(P)
    anchor_l = np.log(np.maximum(np.abs(z).max(axis=-1, initial=0.0), 1e-300))
    slopes = np.zeros((P, 2))

    while True:
        idx = np.flatnonzero((status == _RUNNING) & ~reached)
        if idx.size == 0:
            break
        zi, si = z[idx], s[idx]
        lg = logmode[idx]
        remaining = 1.0 - si
        last = ~lg & (h[idx] >= remaining)
        hi = np.where(last, remaining, h[idx])
        snew = np.where(last, 1.0, si + hi)
        snew = np.where(lg, 1.0 - remaining * np.exp(-dt[idx]), snew)

        zp = np.empty_like(zi)
        ok = np.zeros(idx.size, dtype=bool)
        if np.any(~lg):
            zp[~lg], ok[~lg] = _rk4(hom, zi[~lg], si[~lg], hi[~lg])
        if np.any(lg):
            zp[lg], ok[lg] = _rk4_log(hom, zi[lg], si[lg], dt[idx][lg])
        zp[~ok] = zi[~ok]

        func = lambda zz, rows: hom.H(zz, snew[rows])  # noqa: E731
        jac = lambda zz, rows: hom.Hz(zz, snew[rows])  # noqa: E731
        zc, _, conv, _, _ = newton_batch(
            func, jac, zp, opts.corrector_tol, opts.max_corrector_iters, relative=True, check_residual=False
        )
        accept = ok & conv & np.all(np.isfinite(zc), axis=-1)
        steps[idx] += 1

        acc = idx[accept]
        z[acc] = zc[accept]
        s[acc] = snew[accept]
        streak[acc] += 1
        grow = acc[streak[acc] >= 2]
        glin, glog = grow[~logmode[grow]], grow[logmode[grow]]
        h[glin] = np.minimum(2.0 * h[glin], opts.max_step)
        dt[glog] = np.minimum(2.0 * dt[glog], opts.log_max_step)
        streak[grow] = 0
        reached[acc[s[acc] == 1.0]] = True
        reached[acc[logmode[acc] & (1.0 - s[acc] <= opts.tail_end)]] = True
        norms = np.abs(z[acc]).max(axis=-1)
        _update_growth(acc[s[acc] < 1.0], s, norms[s[acc] < 1.0], anchor_t, anchor_l, slopes)

        rej = idx[~accept]
        streak[rej] = 0
        failures[rej] += 1
        # a failed jump to s = 1 near the end switches the path to log stepping
        switch = rej[last[~accept] & (1.0 - s[rej] < opts.tail_start)]
        logmode[switch] = True
        rlin = rej[~logmode[rej]]
        h[rlin] *= 0.5
        status[rlin[h[rlin] < opts.min_step]] = MIN_STEP
        rlog = rej[logmode[rej] & ~np.isin(rej, switch)]
        dt[rlog] *= 0.5
        status[rlog[dt[rlog] < opts.log_min_step]] = MIN_STEP

        big = acc[norms > opts.divergence_threshold]
        status[big] = DIVERGED
        reached[big] = False

        over = idx[(steps[idx] >= opts.max_steps) & (status[idx] == _RUNNING) & ~reached[idx]]
        status[over] = STEP_LIMIT

        stuck = idx[(status[idx] == MIN_STEP) | (status[idx] == STEP_LIMIT)]
        near = stuck[1.0 - s[stuck] < opts.infinity_window]
        if near.size:
            landed = _endgame(hom, z, near, opts)
            status[landed] = _RUNNING
            rescued[landed] = True
            reached[landed] = True
            stuck = stuck[~np.isin(stuck, landed)]
        growing = (1.0 - s[stuck] < opts.infinity_window) & np.all(slopes[stuck] > opts.infinity_exponent, axis=-1)
        status[stuck[growing]] = DIVERGED

    # tails that end while |z| is still growing head to infinity unless Newton lands them
    tail = np.flatnonzero(reached & (status == _RUNNING) & (s < 1.0))
    tail = tail[np.all(slopes[tail] > opts.infinity_exponent, axis=-1)]
    if tail.size:
        landed = _endgame(hom, z, tail, opts)
        rescued[landed] = True
        status[tail[~np.isin(tail, landed)]] = DIVERGED

    residual = np.full(P, np.inf)
    fin = np.flatnonzero(reached & (status == _RUNNING))
    if fin.size:
        one = np.ones(fin.size)
        func = lambda zz, rows: hom.H(zz, one[rows])  # noqa: E731
        jac = lambda zz, rows: hom.Hz(zz, one[rows])  # noqa: E731
        zr, res, conv, _, _ = newton_batch(
            func, jac, z[fin], opts.endpoint_tol, opts.endpoint_iters, relative=True
        )
        # Newton can stall at the roundoff floor for large |z|; a small
        # scaled residual (backward error) is still a valid endpoint
        stalled = ~conv & np.all(np.isfinite(zr), axis=-1)
        if np.any(stalled):
            rows = np.flatnonzero(stalled)
            res[rows] = np.abs(hom.H(zr[rows], one[rows])).max(axis=-1)
            conv[rows] = scaled_residual(hom.H(zr[rows], one[rows]), zr[rows]) <= opts.endpoint_tol
        good = conv
        z[fin[good]] = zr[good]
        residual[fin[good]] = res[good]
        status[fin[good]] = SUCCESS
        status[fin[~good]] = SINGULAR

    return [
        TrackResult(
            status=str(status[i]),
            endpoint=z[i].copy(),
            steps=int(steps[i]),
            failures=int(failures[i]),
            residual=float(residual[i]),
            s=float(s[i]),
            rescued=bool(rescued[i]),
        )
        for i in range(P)
    ]


def track(hom, z_start, opts: TrackOptions | None = None) -> TrackResult:
    return track_many(hom, np.asarray(z_start, dtype=complex)[None, :], opts)[0]


def track_parallel(hom, starts, opts: TrackOptions | None = None, workers: int = 1, chunk: int = 256):
    """:func:`track_many` split across a thread pool; output order matches ``starts``."""
    starts = np.asarray(starts, dtype=complex)
    if workers <= 1 or starts.shape[0] <= chunk:
        return track_many(hom, starts, opts)
    pieces = [starts[i : i + chunk] for i in range(0, starts.shape[0], chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda p: track_many(hom, p, opts), pieces))
    return [r for part in parts for r in part]

"""Sign symmetries of the zero-injection power flow equations.

Negating every ``y_k`` maps solutions to solutions on any network. On a
bipartite network with parts ``S`` and ``T`` (reference node in ``T``) two
further sign maps are available, and together with the identity they form a
Klein four-group:

* negate ``x`` on ``S`` and ``y`` on ``T``;
* negate ``x`` and ``y`` on ``S``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from monoflow.network import PowerNetwork, Solution

S_SIDE = "S"
T_SIDE = "T"

CANON_TOL = 1e-9
ORBIT_TOL = 1e-6


@dataclass(frozen=True)
class Bipartition:
    present: bool
    side_of: tuple[str, ...] = ()  # one label per node 0..n-1; node 0 is always T

    @property
    def s_nodes(self) -> list[int]:
        return [k for k, side in enumerate(self.side_of) if side == S_SIDE]


def detect_bipartition(net: PowerNetwork) -> Bipartition:
    """Two-colour the network by BFS from the reference node."""
    color = [None] * net.n
    color[0] = T_SIDE
    adj = net.adjacency()
    queue = deque([0])
    while queue:
        v = queue.popleft()
        other = S_SIDE if color[v] == T_SIDE else T_SIDE
        for w in adj[v]:
            if color[w] is None:
                color[w] = other
                queue.append(w)
            elif color[w] == color[v]:
                return Bipartition(present=False)
    return Bipartition(present=True, side_of=tuple(color))


@dataclass(frozen=True)
class SignMap:
    """Coordinatewise sign change ``(x, y) -> (sx * x, sy * y)``."""

    sx: tuple[int, ...]
    sy: tuple[int, ...]
    name: str = ""

    @property
    def signs(self) -> np.ndarray:
        return np.array(self.sx + self.sy, dtype=float)

    def __matmul__(self, other: "SignMap") -> "SignMap":
        return SignMap(
            tuple(a * b for a, b in zip(self.sx, other.sx)),
            tuple(a * b for a, b in zip(self.sy, other.sy)),
        )

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.signs

    def same_action(self, other: "SignMap") -> bool:
        return self.sx == other.sx and self.sy == other.sy


@dataclass(frozen=True)
class SymmetryGroup:
    elements: tuple[SignMap, ...]

    @property
    def order(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def sign_matrix(self) -> np.ndarray:
        """``(order, 2(n-1))`` array of signs, one row per element."""
        return np.array([g.signs for g in self.elements])

    def orbit(self, z: np.ndarray) -> np.ndarray:
        """All images of ``z`` (with repeats if ``z`` has a nontrivial stabilizer)."""
        return np.asarray(z)[..., None, :] * self.sign_matrix


def build_group(bip: Bipartition, n: int | None = None) -> SymmetryGroup:
    if n is None:
        if not bip.present:
            raise ValueError("node count required for a non-bipartite network")
        n = len(bip.side_of)
    h = n - 1
    ones = (1,) * h
    identity = SignMap(ones, ones, "identity")
    yneg = SignMap(ones, (-1,) * h, "negate-y")
    if not bip.present:
        return SymmetryGroup((identity, yneg))
    on_s = tuple(-1 if side == S_SIDE else 1 for side in bip.side_of[1:])
    on_t = tuple(-1 if side == T_SIDE else 1 for side in bip.side_of[1:])
    xs_yt = SignMap(on_s, on_t, "negate-x-on-S-y-on-T")
    xs_ys = SignMap(on_s, on_s, "negate-x-on-S-y-on-S")
    return SymmetryGroup((identity, yneg, xs_yt, xs_ys))


def symmetry_group(net: PowerNetwork) -> SymmetryGroup:
    return build_group(detect_bipartition(net), net.n)


def apply(g: SignMap, sol: Solution | np.ndarray):
    if isinstance(sol, Solution):
        h = len(sol.x)
        if len(g.sx) != h:
            raise ValueError("sign map and solution have different lengths")
        return Solution(
            x=sol.x * np.array(g.sx),
            y=sol.y * np.array(g.sy),
            residual=sol.residual,
            is_trivial=sol.is_trivial,
            is_real=sol.is_real,
            orbit_size=sol.orbit_size,
        )
    return g(sol)


def lex_less(a: np.ndarray, b: np.ndarray, tol: float = CANON_TOL) -> bool:
    """Lexicographic order on (real, imag) pairs, ignoring differences below ``tol * max(1, |a|_inf)``."""
    tol = tol * max(1.0, float(np.abs(a).max(initial=0.0)))
    for u, v in zip(a, b):
        if abs(u.real - v.real) > tol:
            return u.real < v.real
        if abs(u.imag - v.imag) > tol:
            return u.imag < v.imag
    return False


def close(a: np.ndarray, b: np.ndarray, tol: float = ORBIT_TOL) -> bool:
    """``|a - b|_inf <= tol * max(1, |a|_inf)``: absolute near the unit scale, relative beyond."""
    return bool(np.abs(a - b).max(initial=0.0) <= tol * max(1.0, float(np.abs(a).max(initial=0.0))))


def orbit_size(images: np.ndarray, tol: float = ORBIT_TOL) -> int:
    distinct: list[np.ndarray] = []
    for w in images:
        if not any(close(w, d, tol) for d in distinct):
            distinct.append(w)
    return len(distinct)


def canonicalize_vector(z: np.ndarray, grp: SymmetryGroup) -> tuple[np.ndarray, int]:
    images = grp.orbit(z)
    best = images[0]
    for w in images[1:]:
        if lex_less(w, best):
            best = w
    return best.copy(), orbit_size(images)


def canonicalize(sol: Solution | np.ndarray, grp: SymmetryGroup):
    """Return ``(representative, orbit_size)``.

    The representative is the lexicographically smallest orbit member and has
    the same type as ``sol``.
    """
    if isinstance(sol, Solution):
        rep, size = canonicalize_vector(sol.z, grp)
        out = Solution.from_vector(rep, residual=sol.residual, orbit_size=size)
        return out, size
    return canonicalize_vector(np.asarray(sol), grp)

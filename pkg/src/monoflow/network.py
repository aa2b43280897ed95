"""Network data model, file parsing and the closed-form trivial solutions.

A network has ``n`` nodes indexed ``0..n-1``. Node 0 is the reference node
with fixed phasor ``x_0 = 1, y_0 = 0``; the unknowns are ``x_k, y_k`` for
``k = 1..n-1``. Lines carry a real susceptance and no conductance, and every
node has zero active power injection.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

log = logging.getLogger(__name__)

#: Refuse to materialize more than 2**TRIVIAL_CAP trivial solutions.
TRIVIAL_CAP = 30


class NetworkError(ValueError):
    """Raised for malformed or invalid network descriptions."""


@dataclass(frozen=True)
class PowerNetwork:
    """Undirected susceptance-weighted graph with node 0 as reference.

    Construct through :meth:`from_edges` (or the parsers) to get validation.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    name: str = ""

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[tuple[int, int, float]],
        name: str = "",
        require_biconnected: bool = False,
    ) -> "PowerNetwork":
        edges = tuple((int(k), int(m), float(b)) for k, m, b in edges)
        net = cls(n=int(n), edges=edges, name=name)
        net.validate(require_biconnected=require_biconnected)
        return net

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_vars(self) -> int:
        return 2 * (self.n - 1)

    @property
    def susceptances(self) -> np.ndarray:
        return np.array([b for _, _, b in self.edges], dtype=float)

    @property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.array([e[0] for e in self.edges], dtype=int)
        m = np.array([e[1] for e in self.edges], dtype=int)
        return k, m

    @property
    def is_tree(self) -> bool:
        return self.num_edges == self.n - 1

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for k, m, _ in self.edges:
            adj[k].append(m)
            adj[m].append(k)
        return adj

    def with_susceptances(self, b: Iterable[float]) -> "PowerNetwork":
        b = [float(v) for v in b]
        if len(b) != self.num_edges:
            raise NetworkError(f"expected {self.num_edges} susceptances, got {len(b)}")
        edges = tuple((k, m, v) for (k, m, _), v in zip(self.edges, b))
        return PowerNetwork.from_edges(self.n, edges, name=self.name)

    def validate(self, require_biconnected: bool = False) -> None:
        if self.n < 2:
            raise NetworkError(f"need at least 2 nodes, got n={self.n}")
        seen: set[tuple[int, int]] = set()
        for k, m, b in self.edges:
            if not (0 <= k < self.n and 0 <= m < self.n):
                raise NetworkError(f"edge ({k}, {m}) references a node outside 0..{self.n - 1}")
            if k == m:
                raise NetworkError(f"self-loop at node {k}")
            key = (min(k, m), max(k, m))
            if key in seen:
                raise NetworkError(f"duplicate edge ({k}, {m})")
            seen.add(key)
            if not math.isfinite(b):
                raise NetworkError(f"non-finite susceptance on edge ({k}, {m})")
            if b == 0.0:
                raise NetworkError(f"zero susceptance on edge ({k}, {m})")
        if not self.is_connected():
            raise NetworkError("network is disconnected")
        if not self.is_biconnected():
            if require_biconnected:
                raise NetworkError("network is not biconnected")
            log.info("network %s is not biconnected; equations decouple", self.name or "")

    def is_connected(self, removed: int | None = None) -> bool:
        adj = self.adjacency()
        nodes = [v for v in range(self.n) if v != removed]
        if not nodes:
            return True
        start = nodes[0]
        seen = {start}
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w != removed and w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == len(nodes)

    def is_biconnected(self) -> bool:
        if self.n <= 2:
            return self.is_connected()
        return all(self.is_connected(removed=v) for v in range(self.n))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[k, m, b] for k, m, b in self.edges]}

    def to_text(self) -> str:
        lines = []
        if self.name:
            lines.append(f"# {self.name}")
        lines.append(f"n {self.n}")
        lines.extend(f"{k} {m} {b!r}" for k, m, b in self.edges)
        return "\n".join(lines) + "\n"


def parse_network(text: str, name: str = "") -> PowerNetwork:
    """Parse the edge-list text format.

    The first non-comment line is ``n <count>``; each following line is
    ``<k> <m> <b_km>``. ``#`` starts a comment.
    """
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 2 or parts[0] != "n":
                raise NetworkError(f"line {lineno}: expected 'n <node-count>', got {raw!r}")
            try:
                n = int(parts[1])
            except ValueError:
                raise NetworkError(f"line {lineno}: bad node count {parts[1]!r}") from None
            continue
        if len(parts) != 3:
            raise NetworkError(f"line {lineno}: expected '<k> <m> <b>', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise NetworkError(f"line {lineno}: malformed edge {raw!r}") from None
    if n is None:
        raise NetworkError("missing 'n <node-count>' header")
    return PowerNetwork.from_edges(n, edges, name=name)


def parse_network_json(text: str, name: str = "") -> PowerNetwork:
    try:
        doc = json.loads(text)
        n = int(doc["n"])
        edges = [(int(k), int(m), float(b)) for k, m, b in doc["edges"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise NetworkError(f"malformed JSON network: {exc}") from None
    return PowerNetwork.from_edges(n, edges, name=name)


def load_network(path: str | Path) -> PowerNetwork:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return parse_network_json(text, name=path.stem)
    return parse_network(text, name=path.stem)


# ---------------------------------------------------------------------------
# graph families

def complete_graph(n: int, b=1.0) -> PowerNetwork:
    pairs = list(itertools.combinations(range(n), 2))
    return _family(n, pairs, b, f"K{n}")


def cycle_graph(n: int, b=1.0) -> PowerNetwork:
    if n < 3:
        raise NetworkError("a cycle needs at least 3 nodes")
    pairs = [(k, (k + 1) % n) for k in range(n)]
    return _family(n, pairs, b, f"C{n}")


def path_graph(n: int, b=1.0) -> PowerNetwork:
    pairs = [(k, k + 1) for k in range(n - 1)]
    return _family(n, pairs, b, f"P{n}")


def star_graph(n: int, b=1.0) -> PowerNetwork:
    """Star on ``n`` nodes with node 0 as the hub."""
    pairs = [(0, k) for k in range(1, n)]
    return _family(n, pairs, b, f"S{n}")


FAMILIES = {
    "complete": complete_graph,
    "cycle": cycle_graph,
    "path": path_graph,
    "star": star_graph,
}


#: magnitude range of the ``gen --b uniform`` file format mode
WIDE_RANGE = (0.1, 2.0)


def random_susceptances(num_edges: int, rng: np.random.Generator, low=0.5, high=2.0) -> np.ndarray:
    """Uniform on ``[-high, -low] U [low, high]``.

    The default ``low = 0.5`` keeps ratios of susceptances below 4. With
    ratios near 20 (``low = 0.1``) products of them around a cycle push some
    solutions past ``|z| ~ 1e4``, where double precision no longer separates
    neighbouring solutions reliably.
    """
    mag = rng.uniform(low, high, size=num_edges)
    sign = rng.choice([-1.0, 1.0], size=num_edges)
    return sign * mag


def _family(n, pairs, b, name) -> PowerNetwork:
    if n < 2:
        raise NetworkError(f"need at least 2 nodes, got n={n}")
    if np.isscalar(b):
        b = [float(b)] * len(pairs)
    elif isinstance(b, np.random.Generator):
        b = random_susceptances(len(pairs), b)
    b = list(b)
    if len(b) != len(pairs):
        raise NetworkError(f"{name}: expected {len(pairs)} susceptances, got {len(b)}")
    return PowerNetwork.from_edges(n, [(k, m, v) for (k, m), v in zip(pairs, b)], name=name)


# ---------------------------------------------------------------------------
# the polynomial system

@dataclass(frozen=True)
class PowerFlowSystem:
    """Square system of ``2(n-1)`` quadratics in ``(x_1..x_{n-1}, y_1..y_{n-1})``.

    Rows ``0..n-2`` are ``x_k^2 + y_k^2 - 1``; rows ``n-1..2n-3`` are the
    balance equations ``sum_m b_km (x_k y_m - x_m y_k)``. Injections are zero.
    """

    network: PowerNetwork
    injections: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.injections is None:
            object.__setattr__(self, "injections", np.zeros(self.network.n - 1))
        if np.any(self.injections != 0):
            raise NetworkError("only zero injections are supported")

    @property
    def n(self) -> int:
        return self.network.n

    @property
    def num_vars(self) -> int:
        return self.network.num_vars

    @property
    def num_equations(self) -> int:
        return self.network.num_vars

    @property
    def b(self) -> np.ndarray:
        return self.network.susceptances

    def susceptance_matrix(self, b=None) -> np.ndarray:
        """Symmetric ``n x n`` matrix with ``b_km`` at both ``(k, m)`` and ``(m, k)``."""
        b = self.b if b is None else np.asarray(b)
        return _susceptance_matrix(self.network, b)

    def evaluate(self, z, b=None) -> np.ndarray:
        from monoflow.numsys import evaluate

        return evaluate(self, self.b if b is None else b, z)

    def jacobian(self, z, b=None) -> np.ndarray:
        from monoflow.numsys import jacobian

        return jacobian(self, self.b if b is None else b, z)


def _susceptance_matrix(net: PowerNetwork, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    if b.shape[-1] != net.num_edges:
        raise ValueError(f"susceptance vector has length {b.shape[-1]}, expected {net.num_edges}")
    k, m = net.endpoints
    out = np.zeros(b.shape[:-1] + (net.n, net.n), dtype=np.result_type(b, float))
    out[..., k, m] = b
    out[..., m, k] = b
    return out


def build_system(net: PowerNetwork) -> PowerFlowSystem:
    return PowerFlowSystem(net)


# ---------------------------------------------------------------------------
# solutions

@dataclass
class Solution:
    x: np.ndarray
    y: np.ndarray
    residual: float = 0.0
    is_trivial: bool = False
    is_real: bool = False
    orbit_size: int = 1

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_vector(
        cls,
        z: np.ndarray,
        residual: float = 0.0,
        trivial_tol: float = 1e-6,
        real_tol: float = 1e-8,
        orbit_size: int = 1,
    ) -> "Solution":
        z = np.asarray(z, dtype=complex)
        h = z.size // 2
        return cls(
            x=z[:h].copy(),
            y=z[h:].copy(),
            residual=float(residual),
            is_trivial=bool(trivial_distance(z) <= trivial_tol),
            is_real=bool(np.max(np.abs(z.imag), initial=0.0) < real_tol),
            orbit_size=orbit_size,
        )

    def to_dict(self) -> dict:
        return {
            "x": [[float(v.real), float(v.imag)] for v in self.x],
            "y": [[float(v.real), float(v.imag)] for v in self.y],
            "residual": float(self.residual),
            "trivial": self.is_trivial,
            "real": self.is_real,
            "orbit_size": int(self.orbit_size),
        }


def trivial_distance(z: np.ndarray) -> float:
    """Infinity-norm distance from ``z`` to the nearest trivial solution."""
    z = np.asarray(z)
    h = z.shape[-1] // 2
    x, y = z[..., :h], z[..., h:]
    nearest = np.where(x.real >= 0, 1.0, -1.0)
    d = np.maximum(np.abs(x - nearest).max(axis=-1, initial=0.0), np.abs(y).max(axis=-1, initial=0.0))
    return d if d.ndim else float(d)


def count_trivial_solutions(net: PowerNetwork) -> int:
    return 2 ** (net.n - 1)


def iter_trivial_solutions(net: PowerNetwork) -> Iterator[Solution]:
    """Sign patterns in binary counting order, node 1 least significant; bit set means ``x_k = -1``."""
    h = net.n - 1
    for code in range(2**h):
        x = np.array([-1.0 if (code >> i) & 1 else 1.0 for i in range(h)], dtype=complex)
        yield Solution(x=x, y=np.zeros(h, dtype=complex), residual=0.0, is_trivial=True, is_real=True)


def enumerate_trivial_solutions(net: PowerNetwork, cap: int = TRIVIAL_CAP) -> list[Solution]:
    if net.n - 1 > cap:
        raise NetworkError(
            f"refusing to materialize 2^{net.n - 1} trivial solutions (cap 2^{cap}); "
            "use count_trivial_solutions"
        )
    return list(iter_trivial_solutions(net))


def trivial_solution_array(net: PowerNetwork, cap: int = TRIVIAL_CAP) -> np.ndarray:
    """Trivial solutions stacked as rows, same order as :func:`enumerate_trivial_solutions`."""
    if net.n - 1 > cap:
        raise NetworkError(f"refusing to materialize 2^{net.n - 1} trivial solutions")
    h = net.n - 1
    codes = np.arange(2**h)[:, None]
    bits = (codes >> np.arange(h)[None, :]) & 1
    x = np.where(bits == 1, -1.0, 1.0).astype(complex)
    return np.concatenate([x, np.zeros_like(x)], axis=1)

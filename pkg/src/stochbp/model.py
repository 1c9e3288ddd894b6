"""Pairwise Markov random fields: topology, potential tables, generators.

Node and state indices are 0-based.  The text instance format uses the same
0-based convention; the state the Potts generator pins to 1 is state 0.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MRFError(ValueError):
    """Raised for malformed topologies, potentials or instance files."""


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Undirected simple graph with a fixed directed-edge numbering.

    Undirected edge ``k = (a, b)`` with ``a < b`` owns directed edges
    ``2k`` (a -> b) and ``2k + 1`` (b -> a).
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Sequence[int]]) -> "GraphTopology":
        if num_nodes < 1:
            raise MRFError(f"num_nodes must be positive, got {num_nodes}")
        canon: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for raw in edges:
            u, v = int(raw[0]), int(raw[1])
            if u == v:
                raise MRFError(f"self-loop at node {u}")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise MRFError(f"edge ({u}, {v}) references a node outside 0..{num_nodes - 1}")
            e = (min(u, v), max(u, v))
            if e in seen:
                raise MRFError(f"duplicate edge {e}")
            seen.add(e)
            canon.append(e)
        adj: list[list[int]] = [[] for _ in range(num_nodes)]
        for a, b in canon:
            adj[a].append(b)
            adj[b].append(a)
        return cls(num_nodes, tuple(canon), tuple(tuple(n) for n in adj))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_directed(self) -> int:
        return 2 * len(self.edges)

    @cached_property
    def src(self) -> np.ndarray:
        out = np.empty(self.num_directed, dtype=np.intp)
        for k, (a, b) in enumerate(self.edges):
            out[2 * k], out[2 * k + 1] = a, b
        return out

    @cached_property
    def dst(self) -> np.ndarray:
        out = np.empty(self.num_directed, dtype=np.intp)
        for k, (a, b) in enumerate(self.edges):
            out[2 * k], out[2 * k + 1] = b, a
        return out

    @cached_property
    def directed_edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(u), int(v)): i for i, (u, v) in enumerate(zip(self.src, self.dst))}

    def edge_id(self, u: int, v: int) -> int:
        try:
            return self.directed_edge_index[(u, v)]
        except KeyError:
            raise MRFError(f"({u} -> {v}) is not a directed edge of the graph") from None

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=np.intp)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.num_nodes else 0

    @cached_property
    def incoming(self) -> np.ndarray:
        """Padded table of the messages (w -> u), w != v, feeding edge (u -> v).

        Row ``e`` lists directed-edge ids; unused slots hold ``num_directed``,
        which callers map to an all-ones row.
        """
        width = max(self.max_degree - 1, 0)
        table = np.full((self.num_directed, width), self.num_directed, dtype=np.intp)
        idx = self.directed_edge_index
        for e, (u, v) in enumerate(zip(self.src, self.dst)):
            ins = [idx[(w, int(u))] for w in self.adjacency[u] if w != v]
            table[e, : len(ins)] = ins
        return table

    @cached_property
    def into_node(self) -> np.ndarray:
        """Padded table of all directed edges (u -> v) ending at each node v."""
        width = self.max_degree
        table = np.full((self.num_nodes, width), self.num_directed, dtype=np.intp)
        idx = self.directed_edge_index
        for v in range(self.num_nodes):
            ins = [idx[(u, v)] for u in self.adjacency[v]]
            table[v, : len(ins)] = ins
        return table

    def is_connected(self) -> bool:
        return all(d >= 0 for d in _bfs(self, 0))

    def is_tree(self) -> bool:
        return self.num_edges == self.num_nodes - 1 and self.is_connected()


def _bfs(topology: GraphTopology, start: int) -> list[int]:
    dist = [-1] * topology.num_nodes
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in topology.adjacency[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def build_topology(kind: str, *args, **kwargs) -> GraphTopology:
    """Build a topology by name.

    ``chain(n)``, ``grid(rows, cols)``, ``star(leaves)``,
    ``tree(n, seed=...)`` (uniform random labelled tree via a Pruefer code) and
    ``custom(n, edges)``.
    """
    if kind == "chain":
        (n,) = args or (kwargs["n"],)
        _positive(n=n)
        return GraphTopology.from_edges(n, [(i, i + 1) for i in range(n - 1)])
    if kind == "grid":
        rows, cols = args or (kwargs["rows"], kwargs["cols"])
        _positive(rows=rows, cols=cols)
        edges = []
        for r in range(rows):
            for c in range(cols):
                u = r * cols + c
                if c + 1 < cols:
                    edges.append((u, u + 1))
                if r + 1 < rows:
                    edges.append((u, u + cols))
        return GraphTopology.from_edges(rows * cols, edges)
    if kind == "star":
        (leaves,) = args or (kwargs["leaves"],)
        _positive(leaves=leaves)
        return GraphTopology.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])
    if kind == "tree":
        n = args[0] if args else kwargs["n"]
        seed = kwargs.get("seed", args[1] if len(args) > 1 else 0)
        _positive(n=n)
        return GraphTopology.from_edges(n, _random_tree_edges(n, np.random.default_rng(seed)))
    if kind == "custom":
        n, edges = args or (kwargs["n"], kwargs["edges"])
        return GraphTopology.from_edges(n, edges)
    raise MRFError(f"unknown topology kind {kind!r}")


def _positive(**sizes: int) -> None:
    for name, value in sizes.items():
        if int(value) < 1:
            raise MRFError(f"{name} must be positive, got {value}")


def _random_tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    code = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=int)
    for x in code:
        degree[x] += 1
    edges = []
    for x in code:
        leaf = int(np.flatnonzero(degree == 1)[0])
        edges.append((leaf, int(x)))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = np.flatnonzero(degree == 1)
    edges.append((int(u), int(v)))
    return edges


def graph_diameter(topology: GraphTopology) -> int:
    """Longest shortest-path length over all node pairs (BFS from every node)."""
    best = 0
    for s in range(topology.num_nodes):
        dist = _bfs(topology, s)
        if min(dist) < 0:
            raise MRFError("graph is disconnected; diameter undefined")
        best = max(best, max(dist))
    return best


@dataclass(frozen=True)
class PottsParams:
    eta: float
    lam: float = 0.1
    sigma: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise MRFError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.lam >= self.sigma > 0.0:
            raise MRFError(f"need lam >= sigma > 0, got lam={self.lam}, sigma={self.sigma}")
        if not self.lam + self.sigma < 1.0:
            raise MRFError(f"need lam + sigma < 1, got {self.lam + self.sigma}")


@dataclass(frozen=True, eq=False)
class PairwiseMRF:
    """Topology plus strictly positive node and edge potential tables.

    Edge tables may be shared: undirected edge ``k`` uses
    ``edge_potentials[edge_table[k]]``, indexed ``[state of a, state of b]``
    for the stored orientation ``(a, b)``.  The reverse direction reads the
    transpose.
    """

    topology: GraphTopology
    d: int
    node_potentials: np.ndarray
    edge_potentials: np.ndarray
    edge_table: np.ndarray

    @classmethod
    def from_tables(cls, topology, node_potentials, edge_potentials) -> "PairwiseMRF":
        """Build from one ``d x d`` table per edge, or a single shared table."""
        node = np.array(node_potentials, dtype=float)
        edge = np.array(edge_potentials, dtype=float)
        if edge.ndim == 2:
            table = np.zeros(topology.num_edges, dtype=np.intp)
            edge = edge[None]
        else:
            table = np.arange(topology.num_edges, dtype=np.intp)
        d = node.shape[1] if node.ndim == 2 else 0
        return cls(topology, d, node, edge, table)

    def edge_matrix(self, k: int) -> np.ndarray:
        return self.edge_potentials[self.edge_table[k]]

    def directed_matrix(self, e: int) -> np.ndarray:
        """Psi_{u->v}(i, j) with i the state of the source u."""
        m = self.edge_matrix(e // 2)
        return m if e % 2 == 0 else m.T

    @cached_property
    def directed_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """(stack of 2K oriented tables, table id per directed edge)."""
        stack = np.empty((2 * len(self.edge_potentials), self.d, self.d))
        stack[0::2] = self.edge_potentials
        stack[1::2] = np.transpose(self.edge_potentials, (0, 2, 1))
        e = np.arange(self.topology.num_directed)
        return stack, 2 * self.edge_table[e // 2] + (e % 2)


def validate_mrf(mrf: PairwiseMRF) -> PairwiseMRF:
    """Check every model invariant and return ``mrf`` unchanged."""
    top = mrf.topology
    d = mrf.d
    if d < 1:
        raise MRFError(f"state dimension must be positive, got {d}")
    node = mrf.node_potentials
    if node.shape != (top.num_nodes, d):
        raise MRFError(f"node potentials have shape {node.shape}, expected {(top.num_nodes, d)}")
    edge = mrf.edge_potentials
    if edge.ndim != 3 or edge.shape[1:] != (d, d):
        raise MRFError(f"edge potential tables have shape {edge.shape[1:]}, expected {(d, d)}")
    if mrf.edge_table.shape != (top.num_edges,):
        raise MRFError("edge_table must map every edge to a table")
    if top.num_edges and (mrf.edge_table.min() < 0 or mrf.edge_table.max() >= len(edge)):
        raise MRFError("edge_table refers to a missing table")
    bad = np.argwhere(~(node > 0) | ~np.isfinite(node))
    if len(bad):
        u, i = bad[0]
        raise MRFError(f"node {u}: potential at state {i} is {node[u, i]!r}; must be > 0")
    for k in range(top.num_edges):
        m = mrf.edge_matrix(k)
        bad = np.argwhere(~(m > 0) | ~np.isfinite(m))
        if len(bad):
            i, j = bad[0]
            raise MRFError(f"edge {top.edges[k]}: potential at ({i}, {j}) is {m[i, j]!r}; must be > 0")
    if not top.is_connected():
        raise MRFError("graph is disconnected")
    return mrf


def potts_edge_matrix(d: int, eta: float) -> np.ndarray:
    m = np.full((d, d), float(eta))
    np.fill_diagonal(m, 1.0)
    return m


def potts_mrf(topology: GraphTopology, d: int, eta: float, node_potentials=None) -> PairwiseMRF:
    """Potts edges with the given (default uniform) node potentials."""
    if node_potentials is None:
        node_potentials = np.ones((topology.num_nodes, d))
    return PairwiseMRF.from_tables(topology, node_potentials, potts_edge_matrix(d, eta))


def generate_potts_mrf(topology: GraphTopology, d: int, potts: PottsParams, seed: int) -> PairwiseMRF:
    """Potts instance with random node potentials.

    psi_u(0) = 1 and psi_u(i) = lam + sigma * Z, Z ~ U(-1, 1), for i >= 1,
    drawn node-major, state-minor.
    """
    if d < 2:
        raise MRFError(f"Potts generator needs d >= 2, got {d}")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(topology.num_nodes, d - 1))
    node = np.ones((topology.num_nodes, d))
    node[:, 1:] = potts.lam + potts.sigma * z
    return validate_mrf(potts_mrf(topology, d, potts.eta, node))


def random_mrf(topology: GraphTopology, d: int, seed: int, low: float = 0.1, high: float = 1.0) -> PairwiseMRF:
    """Independent U(low, high) entries for every node and edge table."""
    rng = np.random.default_rng(seed)
    node = rng.uniform(low, high, size=(topology.num_nodes, d))
    edge = rng.uniform(low, high, size=(topology.num_edges, d, d))
    return validate_mrf(PairwiseMRF(topology, d, node, edge, np.arange(topology.num_edges)))


# ---------------------------------------------------------------------------
# text instance format


_HEADER = "mrfv1"


def write_instance(mrf: PairwiseMRF, path) -> None:
    """Write ``mrfv1 <n> <d> <|E|>``, n node rows, then per edge ``u v`` and d rows."""
    top = mrf.topology
    lines = [f"{_HEADER} {top.num_nodes} {mrf.d} {top.num_edges}"]
    for row in mrf.node_potentials:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    for k, (a, b) in enumerate(top.edges):
        lines.append(f"{a} {b}")
        for row in mrf.edge_matrix(k):
            lines.append(" ".join(f"{x:.17g}" for x in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write instance to {path}: {exc}") from exc


def read_instance(path) -> PairwiseMRF:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != _HEADER:
        raise MRFError(f"{path}: missing '{_HEADER}' header")
    try:
        n, d, m = (int(t) for t in tokens[1:4])
        pos = 4
        node = np.array(tokens[pos : pos + n * d], dtype=float).reshape(n, d)
        pos += n * d
        edges, tables = [], []
        for _ in range(m):
            a, b = int(tokens[pos]), int(tokens[pos + 1])
            pos += 2
            tab = np.array(tokens[pos : pos + d * d], dtype=float).reshape(d, d)
            pos += d * d
            if a > b:
                a, b, tab = b, a, tab.T
            edges.append((a, b))
            tables.append(tab)
    except (ValueError, IndexError) as exc:
        raise MRFError(f"{path}: malformed instance body ({exc})") from exc
    if pos != len(tokens):
        raise MRFError(f"{path}: {len(tokens) - pos} trailing tokens")
    top = GraphTopology.from_edges(n, edges)
    edge = np.array(tables).reshape(m, d, d)
    return validate_mrf(PairwiseMRF(top, d, node, edge, np.arange(m, dtype=np.intp)))

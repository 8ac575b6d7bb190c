"""Communication graphs: generators, role labelling, connectivity checks.

All graphs are undirected, unweighted, without self-loops. Clients are the
integers 0..n-1; a subset may be labelled malicious. Time-varying
connectivity is modelled by per-round masks that temporarily remove
clients, never by changing edges.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .rng import substream


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected graph over clients 0..n-1 with malicious/benign labels."""

    n: int
    adjacency: np.ndarray  # (n, n) bool, symmetric, zero diagonal
    malicious: frozenset = field(default_factory=frozenset)

    def validate(self):
        a = self.adjacency
        if a.shape != (self.n, self.n) or a.dtype != np.bool_:
            raise ValueError("adjacency must be an (n, n) boolean matrix")
        if a.diagonal().any():
            raise ValueError("self-loops are not allowed")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if not all(0 <= i < self.n for i in self.malicious):
            raise ValueError("malicious ids must lie in [0, n)")

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbor ids of client i, ascending; i itself is never included."""
        return np.flatnonzero(self.adjacency[i])

    def degree(self, i: int) -> int:
        return int(self.adjacency[i].sum())

    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    @property
    def benign(self) -> list:
        return [i for i in range(self.n) if i not in self.malicious]

    def with_malicious(self, ids) -> "Topology":
        topo = replace(self, malicious=frozenset(int(i) for i in ids))
        topo.validate()
        return topo


@dataclass(frozen=True)
class ConnectivityMask:
    """Clients connected to the protocol during one round."""

    round: int
    active: frozenset

    def to_array(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        for i in self.active:
            out[i] = True
        return out


def _empty_adjacency(n: int) -> np.ndarray:
    return np.zeros((n, n), dtype=bool)


def _finish(n: int, adjacency: np.ndarray) -> Topology:
    topo = Topology(n=n, adjacency=adjacency)
    topo.validate()
    return topo


def gen_regular(n: int, v: int, seed: int) -> Topology:
    """Random simple v-regular graph on n nodes.

    Pairs stubs of the configuration model, but only ever picks pairs that
    keep the graph simple; a stuck attempt restarts. Raises if n*v is odd
    or v >= n, or after exhausting the retry budget.
    """
    if v >= n:
        raise ValueError(f"regular graph needs v < n, got v={v}, n={n}")
    if (n * v) % 2 != 0:
        raise ValueError(f"regular graph needs n*v even, got n={n}, v={v}")
    if v == 0:
        return _finish(n, _empty_adjacency(n))
    rng = np.random.default_rng(seed)
    for _ in range(200):
        adjacency = _regular_attempt(n, v, rng)
        if adjacency is not None:
            return _finish(n, adjacency)
    raise ValueError(f"could not build a simple {v}-regular graph on {n} nodes")


def _regular_attempt(n, v, rng):
    adjacency = _empty_adjacency(n)
    stubs = np.repeat(np.arange(n), v)
    while stubs.size:
        rng.shuffle(stubs)
        leftover = []
        progressed = False
        for k in range(0, stubs.size - 1, 2):
            a, b = int(stubs[k]), int(stubs[k + 1])
            if a != b and not adjacency[a, b]:
                adjacency[a, b] = adjacency[b, a] = True
                progressed = True
            else:
                leftover.extend((a, b))
        if stubs.size % 2:
            leftover.append(int(stubs[-1]))
        if not progressed and not _suitable_pair_exists(leftover, adjacency):
            return None
        stubs = np.array(leftover, dtype=np.int64)
    return adjacency


def _suitable_pair_exists(stubs, adjacency):
    for x in range(len(stubs)):
        for y in range(x + 1, len(stubs)):
            a, b = stubs[x], stubs[y]
            if a != b and not adjacency[a, b]:
                return True
    return False


def gen_complete(n: int) -> Topology:
    """Complete graph: every pair of clients adjacent."""
    if n < 2:
        raise ValueError(f"need at least 2 clients, got {n}")
    adjacency = ~np.eye(n, dtype=bool)
    return _finish(n, adjacency)


def gen_ring(n: int) -> Topology:
    """Single cycle: each client has exactly two neighbors."""
    if n < 2:
        raise ValueError(f"need at least 2 clients, got {n}")
    adjacency = _empty_adjacency(n)
    for i in range(n):
        j = (i + 1) % n
        adjacency[i, j] = adjacency[j, i] = True
    return _finish(n, adjacency)


def gen_erdos_renyi(n: int, p_edge: float, seed: int) -> Topology:
    """G(n, p): each pair adjacent independently with probability p_edge."""
    if n < 2:
        raise ValueError(f"need at least 2 clients, got {n}")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError(f"p_edge must be in [0, 1], got {p_edge}")
    rng = np.random.default_rng(seed)
    adjacency = _empty_adjacency(n)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                adjacency[i, j] = adjacency[j, i] = True
    return _finish(n, adjacency)


def gen_small_world(n: int, k: int, p_rewire: float, seed: int) -> Topology:
    """Watts-Strogatz: ring lattice with k nearest neighbors, then rewiring."""
    if n < 2:
        raise ValueError(f"need at least 2 clients, got {n}")
    if k % 2 != 0 or not 0 < k < n:
        raise ValueError(f"small-world k must be even and in (0, n), got k={k}")
    if not 0.0 <= p_rewire <= 1.0:
        raise ValueError(f"p_rewire must be in [0, 1], got {p_rewire}")
    rng = np.random.default_rng(seed)
    adjacency = _empty_adjacency(n)
    for i in range(n):
        for off in range(1, k // 2 + 1):
            j = (i + off) % n
            adjacency[i, j] = adjacency[j, i] = True
    for i in range(n):
        for off in range(1, k // 2 + 1):
            j = (i + off) % n
            if rng.random() < p_rewire and adjacency[i, j]:
                candidates = np.flatnonzero(~adjacency[i])
                candidates = candidates[candidates != i]
                if candidates.size == 0:
                    continue
                new_j = int(rng.choice(candidates))
                adjacency[i, j] = adjacency[j, i] = False
                adjacency[i, new_j] = adjacency[new_j, i] = True
    return _finish(n, adjacency)


def femb(topo: Topology) -> float:
    """Fraction of edges joining a malicious client to a benign one."""
    total = topo.num_edges()
    if total == 0:
        raise ValueError("FEMB is undefined on a graph with no edges")
    cross = 0
    for i in range(topo.n):
        for j in range(i + 1, topo.n):
            if topo.adjacency[i, j]:
                if (i in topo.malicious) != (j in topo.malicious):
                    cross += 1
    return cross / total


def benign_subgraph_connected(topo: Topology) -> bool:
    """True iff the graph induced on benign clients is connected."""
    benign = topo.benign
    if not benign:
        raise ValueError("need at least one benign client")
    benign_set = set(benign)
    seen = {benign[0]}
    frontier = [benign[0]]
    while frontier:
        i = frontier.pop()
        for j in topo.neighbors(i):
            j = int(j)
            if j in benign_set and j not in seen:
                seen.add(j)
                frontier.append(j)
    return len(seen) == len(benign)


def sample_mask(topo: Topology, drop_prob: float, round: int, seed: int) -> ConnectivityMask:
    """Per-round connectivity: each client drops independently with drop_prob."""
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError(f"drop_prob must be in [0, 1], got {drop_prob}")
    rng = substream(seed, "mask", round)
    draws = rng.random(topo.n)
    active = frozenset(int(i) for i in np.flatnonzero(draws >= drop_prob))
    return ConnectivityMask(round=round, active=active)


def to_text(topo: Topology) -> str:
    """Adjacency-list serialization: `id: n,n,...` lines plus `malicious:`."""
    lines = []
    for i in range(topo.n):
        nbrs = ",".join(str(int(j)) for j in topo.neighbors(i))
        lines.append(f"{i}: {nbrs}")
    lines.append("malicious: " + ",".join(str(i) for i in sorted(topo.malicious)))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Topology:
    """Parse the `to_text` format back into a Topology."""
    neighbor_lists = {}
    malicious = frozenset()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(":")
        head = head.strip()
        items = [s.strip() for s in rest.split(",") if s.strip()]
        if head == "malicious":
            malicious = frozenset(int(s) for s in items)
        else:
            neighbor_lists[int(head)] = [int(s) for s in items]
    if not neighbor_lists:
        raise ValueError("no adjacency lines found")
    n = max(neighbor_lists) + 1
    adjacency = _empty_adjacency(n)
    for i, nbrs in neighbor_lists.items():
        for j in nbrs:
            adjacency[i, j] = adjacency[j, i] = True
    topo = Topology(n=n, adjacency=adjacency, malicious=malicious)
    topo.validate()
    return topo

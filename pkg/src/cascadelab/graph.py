"""Undirected simple graphs: generators, edge-list I/O and degree statistics."""

from __future__ import annotations

import io
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

_SUM_TOL = 1e-12
_MAX_REPAIR_ATTEMPTS = 200


class GraphConstructionError(ValueError):
    """A generator could not realise the requested graph."""


class EdgeListError(ValueError):
    """Malformed edge-list input."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EdgeListWarning(UserWarning):
    pass


class UndefinedDistributionError(ValueError):
    """Raised when a degree statistic is undefined for the given graph."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph in CSR form.

    ``labels`` maps the dense ids ``0..N-1`` back to the ids found in an
    ingested edge list; generated graphs leave it as ``None``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray | Iterable[tuple[int, int]],
                   labels: np.ndarray | None = None) -> "Graph":
        """Build from an edge array that is already simple (no loops, no repeats)."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphConstructionError("edge endpoint out of range")
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        g = cls(indptr, dst.astype(np.int64), labels)
        if np.any(src == dst) or np.any((np.diff(src) == 0) & (np.diff(dst) == 0)):
            raise GraphConstructionError("edge list is not simple")
        return g

    @property
    def node_count(self) -> int:
        return len(self.indptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.diff(self.indptr)
        d.setflags(write=False)
        return d

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @cached_property
    def adjacency(self) -> list[list[int]]:
        """Per-node sorted neighbour lists as plain Python lists."""
        ind = self.indices.tolist()
        ptr = self.indptr.tolist()
        return [ind[ptr[v]:ptr[v + 1]] for v in range(self.node_count)]

    @cached_property
    def degree_index(self) -> dict[int, np.ndarray]:
        deg = self.degrees
        return {int(k): np.flatnonzero(deg == k) for k in np.unique(deg)}

    def edges(self) -> np.ndarray:
        """Edges as an ``(M, 2)`` array with ``u < v``, sorted ascending."""
        src = np.repeat(np.arange(self.node_count), self.degrees)
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])


@dataclass(frozen=True)
class DegreeDistribution:
    probabilities: Mapping[int, float]

    def __post_init__(self):
        probs = {int(k): float(p) for k, p in self.probabilities.items() if p != 0}
        if any(k < 0 for k in probs):
            raise ValueError("degrees must be non-negative")
        if any(p < 0 or not math.isfinite(p) for p in probs.values()):
            raise ValueError("probabilities must be finite and non-negative")
        total = math.fsum(probs.values())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probabilities", dict(sorted(probs.items())))

    @classmethod
    def from_weights(cls, weights: Mapping[int, float]) -> "DegreeDistribution":
        total = math.fsum(weights.values())
        return cls({k: w / total for k, w in weights.items()})

    @classmethod
    def poisson(cls, z: float, kmax: int | None = None) -> "DegreeDistribution":
        """Poisson(z) truncated at ``kmax`` and renormalised.

        Default truncation is ``max(30, ceil(z + 10 sqrt(z)))``.
        """
        if kmax is None:
            kmax = poisson_kmax(z)
        k = np.arange(kmax + 1)
        logp = k * math.log(z) - z - np.array([math.lgamma(i + 1) for i in k])
        w = np.exp(logp)
        return cls.from_weights(dict(zip(k.tolist(), w.tolist())))

    @property
    def degrees(self) -> np.ndarray:
        return np.fromiter(self.probabilities.keys(), dtype=np.int64)

    @property
    def pk(self) -> np.ndarray:
        return np.fromiter(self.probabilities.values(), dtype=float)

    @property
    def kmax(self) -> int:
        return max(self.probabilities)

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in self.probabilities.items())

    def __getitem__(self, k: int) -> float:
        return self.probabilities.get(k, 0.0)


def poisson_kmax(z: float) -> int:
    return max(30, math.ceil(z + 10 * math.sqrt(z)))


@dataclass(frozen=True, eq=False)
class JointDegreeDistribution:
    """Symmetric edge-endpoint degree distribution ``P(k, k')``.

    ``matrix[i, j]`` is the probability for ``degrees[i], degrees[j]``.
    """

    degrees: np.ndarray
    matrix: np.ndarray
    _marginal: DegreeDistribution = field(init=False, repr=False)

    def __post_init__(self):
        deg = np.asarray(self.degrees, dtype=np.int64)
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (len(deg), len(deg)):
            raise ValueError("matrix shape does not match degree list")
        if np.any(np.diff(deg) <= 0) or (len(deg) and deg[0] < 1):
            raise ValueError("degrees must be positive and strictly increasing")
        if np.any(mat < 0) or not np.allclose(mat, mat.T, rtol=0, atol=1e-15):
            raise ValueError("joint distribution must be symmetric and non-negative")
        if abs(mat.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"joint distribution sums to {mat.sum()!r}, not 1")
        deg.setflags(write=False)
        mat.setflags(write=False)
        object.__setattr__(self, "degrees", deg)
        object.__setattr__(self, "matrix", mat)
        # row sums are k P_k / z, so P_k is proportional to row / k
        rows = mat.sum(axis=1)
        object.__setattr__(self, "_marginal",
                           DegreeDistribution.from_weights(dict(zip(deg.tolist(), (rows / deg).tolist()))))

    @classmethod
    def from_weights(cls, degrees: Iterable[int], weights) -> "JointDegreeDistribution":
        w = np.asarray(weights, dtype=float)
        w = (w + w.T) / 2
        return cls(np.asarray(list(degrees)), w / w.sum())

    @classmethod
    def factorized(cls, dist: DegreeDistribution) -> "JointDegreeDistribution":
        """``P(k,k') = k P_k k' P_k' / z^2`` (no degree correlations)."""
        deg, pk = dist.degrees, dist.pk
        keep = deg > 0
        deg, pk = deg[keep], pk[keep]
        v = deg * pk / dist.mean
        return cls(deg, np.outer(v, v))

    def marginal(self) -> DegreeDistribution:
        return self._marginal

    def __getitem__(self, pair: tuple[int, int]) -> float:
        k, kp = pair
        idx = {int(d): i for i, d in enumerate(self.degrees)}
        if k not in idx or kp not in idx:
            return 0.0
        return float(self.matrix[idx[k], idx[kp]])


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def _class_counts(probs: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` items to classes."""
    quota = probs * n
    counts = np.floor(quota + 1e-9).astype(np.int64)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _edge_keys(e: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    return lo * n + hi


def _repair(edges: np.ndarray, groups: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Remove self-loops and multi-edges by degree-preserving swaps.

    Each edge ``(a, b)`` is swapped with a random edge ``(c, d)`` of the same
    group into ``(a, d), (c, b)``; groups are oriented so the swap preserves the
    endpoint degree classes.
    """
    edges = edges.copy()
    keys = _edge_keys(edges, n)
    counts = Counter(keys.tolist())
    by_group = {g: np.flatnonzero(groups == g) for g in np.unique(groups)}

    def bad(i: int) -> bool:
        return edges[i, 0] == edges[i, 1] or counts[int(keys[i])] > 1

    defects = [i for i in range(len(edges)) if bad(i)]
    for i in defects:
        pool = by_group[groups[i]]
        for _ in range(_MAX_REPAIR_ATTEMPTS):
            if not bad(i):
                break
            j = int(pool[rng.integers(len(pool))])
            if j == i:
                continue
            a, b = edges[i]
            c, d = edges[j]
            if a == d or c == b:
                continue
            k1, k2 = min(a, d) * n + max(a, d), min(c, b) * n + max(c, b)
            if k1 == k2 or counts[k1] or counts[k2]:
                continue
            for idx in (i, j):
                counts[int(keys[idx])] -= 1
            edges[i] = (a, d)
            edges[j] = (c, b)
            keys[i], keys[j] = k1, k2
            counts[k1] += 1
            counts[k2] += 1
        else:
            if bad(i):
                raise GraphConstructionError("could not remove multi-edges; degree sequence too dense")
    return edges


def _check_simple_feasible(degs: np.ndarray, n: int):
    if len(degs) and int(degs.max()) >= n:
        raise GraphConstructionError(f"degree {int(degs.max())} cannot be realised on {n} nodes")


def generate_config_model(dist: DegreeDistribution, n: int, rng_seed: int) -> Graph:
    """Configuration-model graph with degree distribution ``dist``.

    Class sizes are apportioned exactly (largest remainder); if the degree sum
    is odd one node's degree is redrawn from ``dist``. Stubs are matched
    uniformly and defects removed by degree-preserving swaps.
    """
    if n < 2:
        raise GraphConstructionError("need at least two nodes")
    rng = np.random.default_rng(rng_seed)
    deg_vals, pk = dist.degrees, dist.pk
    _check_simple_feasible(deg_vals[pk > 0], n)
    counts = _class_counts(pk, n)
    degs = np.repeat(deg_vals, counts)
    rng.shuffle(degs)
    if degs.sum() % 2:
        odd_vals = deg_vals[(deg_vals % 2) != (degs[0] % 2)]
        if len(odd_vals) == 0:
            raise GraphConstructionError("degree sum is odd and no degree of opposite parity exists")
        v = int(rng.integers(n))
        while True:
            new = rng.choice(deg_vals, p=pk)
            if (new - degs[v]) % 2:
                degs[v] = new
                break
    stubs = np.repeat(np.arange(n), degs)
    rng.shuffle(stubs)
    edges = stubs.reshape(-1, 2)
    edges = _repair(edges, np.zeros(len(edges), dtype=np.int64), n, rng)
    return Graph.from_edges(n, edges)


def generate_er(z: float, n: int, rng_seed: int) -> Graph:
    """Erdős-Rényi G(n, p) with ``p = z / (n - 1)``."""
    if n < 2 or not 0 < z < n - 1:
        raise GraphConstructionError("need n >= 2 and 0 < z < n - 1")
    rng = np.random.default_rng(rng_seed)
    pairs = n * (n - 1) // 2
    m = int(rng.binomial(pairs, z / (n - 1)))
    idx = rng.choice(pairs, size=m, replace=False)
    idx.sort()
    # row i holds pairs (i, j>i); its first index is i*n - i*(i+1)/2
    i = (n - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    start = i * n - i * (i + 1) // 2
    j = idx - start + i + 1
    return Graph.from_edges(n, np.column_stack([i, j]))


def pair_counts(joint: JointDegreeDistribution, node_counts: np.ndarray) -> np.ndarray:
    """Integer edge counts per degree-class pair consistent with the stub totals."""
    deg = joint.degrees
    stubs = deg * node_counts
    total = stubs.sum()
    if total % 2:
        raise GraphConstructionError("odd total stub count")
    m = total // 2
    c = len(deg)
    target = 2 * m * joint.matrix  # off-diagonal expected counts (each unordered pair once)
    e = np.rint(target).astype(np.int64)
    np.fill_diagonal(e, 0)
    for _ in range(c * c + 1):
        rem = stubs - e.sum(axis=1)
        odd = np.flatnonzero(rem % 2)
        if len(odd) == 0:
            break
        a, b = int(odd[0]), int(odd[1])
        step = 1 if target[a, b] >= e[a, b] else -1
        if e[a, b] + step < 0:
            step = 1
        e[a, b] += step
        e[b, a] += step
    else:
        raise GraphConstructionError("could not balance stub parities")
    diag = (stubs - e.sum(axis=1)) // 2
    if np.any(diag < 0) or np.any((stubs - e.sum(axis=1)) % 2):
        raise GraphConstructionError("infeasible pairing counts for this joint distribution")
    e[np.diag_indices(c)] = diag
    return e


def generate_correlated(joint: JointDegreeDistribution, n: int, rng_seed: int) -> Graph:
    """Random graph realising a joint degree-degree distribution.

    Node counts per class follow the marginal ``k P_k / z`` (one node changes
    class if the stub total would be odd); edge counts per
    class pair are the rounded targets ``2 M P(k, k')`` adjusted for stub
    parity. Stubs are wired uniformly within each class pair and defects
    removed by class-preserving swaps.
    """
    rng = np.random.default_rng(rng_seed)
    deg = joint.degrees
    node_counts = _class_counts(joint.marginal().pk, n)
    _check_simple_feasible(deg[node_counts > 0], n)
    if int(np.dot(deg, node_counts)) % 2:
        # move one node out of the largest class into the nearest class of opposite parity
        src = int(np.argmax(node_counts))
        other = np.flatnonzero((deg % 2) != (deg[src] % 2))
        if len(other) == 0:
            raise GraphConstructionError("odd total stub count and no degree of opposite parity exists")
        dst = int(other[np.argmin(np.abs(deg[other] - deg[src]))])
        node_counts[src] -= 1
        node_counts[dst] += 1
    e = pair_counts(joint, node_counts)
    ids = np.arange(n)
    rng.shuffle(ids)
    bounds = np.concatenate([[0], np.cumsum(node_counts)])
    stub_pool = []
    for c, k in enumerate(deg):
        s = np.repeat(ids[bounds[c]:bounds[c + 1]], k)
        rng.shuffle(s)
        stub_pool.append(s)
    cursor = [0] * len(deg)

    def take(c, count):
        out = stub_pool[c][cursor[c]:cursor[c] + count]
        cursor[c] += count
        return out

    edges, groups = [], []
    g = 0
    for a in range(len(deg)):
        for b in range(a, len(deg)):
            cnt = int(e[a, b])
            if cnt == 0:
                g += 1
                continue
            if a == b:
                pair = take(a, 2 * cnt).reshape(-1, 2)
            else:
                pair = np.column_stack([take(a, cnt), take(b, cnt)])
            edges.append(pair)
            groups.append(np.full(cnt, g))
            g += 1
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    groups = np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64)
    edges = _repair(edges, groups, n, rng)
    return Graph.from_edges(n, edges)


# --------------------------------------------------------------------------
# edge-list I/O
# --------------------------------------------------------------------------


def load_edge_list(source: BinaryIO | bytes | str) -> Graph:
    """Parse a whitespace-separated ``u v`` edge list.

    Lines starting with ``#`` and blank lines are skipped; a single id on a
    line declares an isolated node. Ids are remapped densely in ascending
    order of the original ids. Self-loops and repeated edges are dropped with
    an :class:`EdgeListWarning`.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        with open(source, "rb") as fh:
            return load_edge_list(fh)
    nodes: set[int] = set()
    raw: list[tuple[int, int]] = []
    for line_no, line in enumerate(source, 1):
        text = line.split(b"#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) > 2:
            raise EdgeListError(line_no, f"expected 'u v', got {line.strip()!r}")
        try:
            ids = [int(p) for p in parts]
        except ValueError:
            raise EdgeListError(line_no, f"non-integer node id in {line.strip()!r}") from None
        if any(i < 0 for i in ids):
            raise EdgeListError(line_no, "node ids must be non-negative")
        nodes.update(ids)
        if len(ids) == 2:
            raw.append((ids[0], ids[1]))
    labels = np.array(sorted(nodes), dtype=np.int64)
    remap = {int(lab): i for i, lab in enumerate(labels)}
    seen: set[tuple[int, int]] = set()
    loops = dups = 0
    edges = []
    for u, v in raw:
        if u == v:
            loops += 1
            continue
        a, b = remap[u], remap[v]
        key = (a, b) if a < b else (b, a)
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        edges.append(key)
    if loops or dups:
        warnings.warn(f"dropped {loops} self-loops and {dups} duplicate edges",
                      EdgeListWarning, stacklevel=2)
    return Graph.from_edges(len(labels), np.array(edges, dtype=np.int64).reshape(-1, 2), labels)


def save_edge_list(g: Graph, sink: BinaryIO) -> None:
    """Write the canonical form: one ``u v`` per line, ``u < v``, ascending."""
    e = g.edges()
    if g.labels is not None:
        e = g.labels[e]
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        order = np.lexsort((hi, lo))
        e = np.column_stack([lo[order], hi[order]])
    sink.write("".join(f"{u} {v}\n" for u, v in e.tolist()).encode("ascii"))


# --------------------------------------------------------------------------
# degree statistics
# --------------------------------------------------------------------------


def degree_distribution(g: Graph) -> DegreeDistribution:
    values, counts = np.unique(g.degrees, return_counts=True)
    n = g.node_count
    return DegreeDistribution({int(k): c / n for k, c in zip(values, counts)})


def _endpoint_degrees(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    src = np.repeat(np.arange(g.node_count), g.degrees)
    return g.degrees[src], g.degrees[g.indices]


def joint_degree_distribution(g: Graph) -> JointDegreeDistribution:
    """Fraction of ordered edge endpoints with degrees ``(k, k')``."""
    if g.edge_count == 0:
        raise UndefinedDistributionError("joint degree distribution of an edgeless graph")
    a, b = _endpoint_degrees(g)
    deg = np.unique(a)
    pos = np.searchsorted(deg, a), np.searchsorted(deg, b)
    mat = np.zeros((len(deg), len(deg)))
    np.add.at(mat, pos, 1.0)
    return JointDegreeDistribution(deg, mat / len(a))


def assortativity(g: Graph) -> float | None:
    """Pearson correlation of endpoint degrees; ``None`` when degenerate."""
    if g.edge_count < 2:
        return None
    a, b = _endpoint_degrees(g)
    a = a.astype(float)
    b = b.astype(float)
    da = a - a.mean()
    var = float(np.dot(da, da))
    if var == 0:
        return None
    return float(np.dot(da, b - b.mean()) / var)

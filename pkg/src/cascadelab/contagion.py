"""Multi-stage threshold contagion: response functions and Monte Carlo runs.

Nodes move monotonically through stages S0 < S1 < S2. A node with ``m1``
S1-or-higher neighbours, ``m2`` of them S2, feels peer pressure
``(m1 + beta * m2) / k`` (or ``m1 + beta * m2`` in the count-based variant)
and becomes S_i-active when that pressure reaches its S_i threshold.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .graph import Graph

# activation at equality: pressure >= R - TIE_EPS
TIE_EPS = 1e-12


class Stage(IntEnum):
    S0 = 0
    S1 = 1
    S2 = 2


class IsolatedNodeError(ValueError):
    """Peer pressure is undefined for a degree-0 node."""


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Threshold:
    """A threshold distribution across nodes; ``std == 0`` means uniform."""

    mean: float
    std: float = 0.0

    def __post_init__(self):
        if self.std < 0 or math.isnan(self.mean):
            raise ValueError("invalid threshold distribution")
        if self.std > 0 and not math.isfinite(self.mean):
            raise ValueError("distributed thresholds need a finite mean")

    @property
    def uniform(self) -> bool:
        return self.std == 0

    def cdf(self, x):
        """Fraction of nodes activated by pressure ``x``."""
        x = np.asarray(x, dtype=float)
        if self.uniform:
            return (x >= self.mean - TIE_EPS).astype(float)
        with np.errstate(over="ignore"):
            return ndtr((x - self.mean) / self.std)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.uniform:
            return np.full(n, self.mean)
        return rng.normal(self.mean, self.std, size=n)


@dataclass(frozen=True)
class ResponseSpec:
    """Response functions F1, F2 of the threshold model.

    Per-node thresholds are quenched; the effective S2 threshold of a node is
    ``max(r1, r2)`` so that S2 activation always implies S1 activation. For
    independent thresholds this makes ``F2 = C1 * C2``, which equals ``C2``
    whenever the S1 threshold is already met.
    """

    beta: float
    r1: Threshold
    r2: Threshold
    count_based: bool = False

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be finite and non-negative")
        if self.r2.mean < self.r1.mean:
            raise ConfigError(f"R2 ({self.r2.mean}) must be >= R1 ({self.r1.mean})")

    @classmethod
    def fraction_uniform(cls, r1: float, r2: float, beta: float) -> "ResponseSpec":
        return cls(beta, Threshold(r1), Threshold(r2))

    @classmethod
    def count_uniform(cls, r1: float, r2: float, beta: float) -> "ResponseSpec":
        return cls(beta, Threshold(r1), Threshold(r2), count_based=True)

    @classmethod
    def distributed(cls, r1: Threshold, r2: Threshold, beta: float,
                    count_based: bool = False) -> "ResponseSpec":
        return cls(beta, r1, r2, count_based)

    @property
    def deterministic(self) -> bool:
        return self.r1.uniform and self.r2.uniform

    def pressure(self, m1, m2, k):
        if self.count_based:
            return m1 + self.beta * m2
        return (m1 + self.beta * m2) / k

    def response(self, i: int, m1: int, m2: int, k: int) -> float:
        """Probability ``F_i(m1, m2, k)`` that a degree-``k`` node becomes S_i-active."""
        if i not in (1, 2):
            raise ValueError(f"stage index must be 1 or 2, got {i}")
        if not 0 <= m2 <= m1 <= k:
            raise ValueError("need 0 <= m2 <= m1 <= k")
        if k == 0:
            return 0.0
        return float(self.table(i, k, k + 1)[m1, m2])

    def table(self, i: int, k: int, size: int) -> np.ndarray:
        """``F_i(m1, m2, k)`` on the grid ``0 <= m1, m2 < size``.

        Entries outside ``m2 <= m1 <= k`` are filled by the same formula and
        must be masked by the caller. Degree 0 gives all zeros.
        """
        if k == 0:
            return np.zeros((size, size))
        m = np.arange(size, dtype=float)
        p = self.pressure(m[:, None], m[None, :], k)
        c1 = self.r1.cdf(p)
        if i == 1:
            return c1
        return c1 * self.r2.cdf(p)

    def sample_thresholds(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        r1 = self.r1.sample(rng, n)
        r2 = np.maximum(r1, self.r2.sample(rng, n))
        return r1, r2


def peer_pressure(m1: int, m2: int, k: int, beta: float) -> float:
    if k == 0:
        raise IsolatedNodeError("isolated node: can only be activated by seeding")
    return (m1 + beta * m2) / k


def response(spec: ResponseSpec, i: int, m1: int, m2: int, k: int) -> float:
    return spec.response(i, m1, m2, k)


class UpdateMode(str, Enum):
    ASYNC = "async"
    SYNC = "sync"


@dataclass(frozen=True)
class SimConfig:
    phi1: float
    phi2: float = 0.0
    update_mode: UpdateMode = UpdateMode.ASYNC
    t_max: float = 50.0
    realizations: int = 1
    rng_seed: int = 0
    fixed_seeds: bool = False
    n_grid: int = 200

    def __post_init__(self):
        object.__setattr__(self, "update_mode", UpdateMode(self.update_mode))
        if not 0 <= self.phi2 <= self.phi1 <= 1:
            raise ConfigError("need 0 <= phi2 <= phi1 <= 1")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.realizations < 1 or self.n_grid < 2:
            raise ConfigError("need realizations >= 1 and n_grid >= 2")

    def seed_counts(self, n: int) -> tuple[int, int]:
        # round() is half-to-even
        c1, c2 = round(self.phi1 * n), round(self.phi2 * n)
        if c2 > c1:
            raise ConfigError("more S2 seeds than S1 seeds after rounding")
        return c1, c2


@dataclass
class SimState:
    """Mutable per-run state with cached active-neighbour counts."""

    stages: list[int]
    m1: list[int]
    m2: list[int]
    r1: list[float]
    r2: list[float]
    t: float = 0.0

    @classmethod
    def from_stages(cls, g: Graph, stages: Sequence[int], r1: Sequence[float],
                    r2: Sequence[float]) -> "SimState":
        st = np.asarray(stages, dtype=np.int64)
        src = np.repeat(np.arange(g.node_count), g.degrees)
        m1 = np.bincount(src, weights=(st[g.indices] >= 1), minlength=g.node_count)
        m2 = np.bincount(src, weights=(st[g.indices] == 2), minlength=g.node_count)
        return cls(st.tolist(), m1.astype(np.int64).tolist(), m2.astype(np.int64).tolist(),
                   [float(x) for x in r1], [float(x) for x in r2])


@dataclass(frozen=True)
class StageChange:
    node: int
    old: Stage
    new: Stage


def seed(g: Graph, cfg: SimConfig, rng: np.random.Generator,
         thresholds: tuple[np.ndarray, np.ndarray] | None = None) -> SimState:
    """Initial state with exactly ``round(phi N)`` seeds per stage; S2 seeds are a subset of S1 seeds."""
    n = g.node_count
    c1, c2 = cfg.seed_counts(n)
    chosen = rng.choice(n, size=c1, replace=False)
    stages = np.zeros(n, dtype=np.int64)
    stages[chosen] = 1
    stages[chosen[rng.permutation(c1)[:c2]]] = 2
    if thresholds is None:
        thresholds = (np.zeros(n), np.zeros(n))
    return SimState.from_stages(g, stages, *thresholds)


def _target(stage: int, m1: int, m2: int, k: int, denom: float, beta: float,
            r1: float, r2: float) -> int:
    if stage == 2 or k == 0:
        return stage
    p = (m1 + beta * m2) / denom
    if p >= r2 - TIE_EPS:
        return 2
    if stage == 0 and p >= r1 - TIE_EPS:
        return 1
    return stage


def _apply(state: SimState, adj: list[list[int]], v: int, new: int) -> None:
    old = state.stages[v]
    state.stages[v] = new
    m1, m2 = state.m1, state.m2
    if old == 0:
        for u in adj[v]:
            m1[u] += 1
    if new == 2:
        for u in adj[v]:
            m2[u] += 1


def update_node(state: SimState, g: Graph, spec: ResponseSpec, v: int) -> StageChange | None:
    """Update one node from its cached neighbour counts; returns the change, if any."""
    k = int(g.degrees[v])
    denom = 1.0 if spec.count_based else float(k)
    old = state.stages[v]
    new = _target(old, state.m1[v], state.m2[v], k, denom, spec.beta, state.r1[v], state.r2[v])
    if new == old:
        return None
    _apply(state, g.adjacency, v, new)
    return StageChange(v, Stage(old), Stage(new))


def final_state_oracle(g: Graph, spec: ResponseSpec, seeds1: Iterable[int], seeds2: Iterable[int],
                       thresholds: tuple[Sequence[float], Sequence[float]] | None = None) -> list[int]:
    """Fixpoint of repeated synchronous sweeps with counts recomputed from scratch."""
    n = g.node_count
    stages = [0] * n
    for v in seeds1:
        stages[v] = 1
    for v in seeds2:
        stages[v] = 2
    if thresholds is None:
        if not spec.deterministic:
            raise ValueError("per-node thresholds are required for distributed responses")
        r1 = [spec.r1.mean] * n
        r2 = [max(spec.r1.mean, spec.r2.mean)] * n
    else:
        r1, r2 = thresholds
    adj = g.adjacency
    for _ in range(2 * n + 1):
        new = list(stages)
        for v in range(n):
            k = len(adj[v])
            if k == 0 or stages[v] == 2:
                continue
            m1 = sum(1 for u in adj[v] if stages[u] >= 1)
            m2 = sum(1 for u in adj[v] if stages[u] == 2)
            p = (m1 + spec.beta * m2) / (1.0 if spec.count_based else k)
            if p >= r2[v] - TIE_EPS:
                new[v] = 2
            elif stages[v] == 0 and p >= r1[v] - TIE_EPS:
                new[v] = 1
        if new == stages:
            return stages
        stages = new
    raise SimulationError("oracle did not reach a fixpoint")  # unreachable for monotone rules


# --------------------------------------------------------------------------
# time series
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Per-degree-class activation densities on a time grid, plus the final state.

    ``rho1_k``/``rho2_k`` have shape ``(len(t), len(degrees))``; ``weights``
    are the class fractions ``P_k`` used for the aggregate series.
    """

    t: np.ndarray
    degrees: np.ndarray
    weights: np.ndarray
    rho1_k: np.ndarray
    rho2_k: np.ndarray
    final_rho1_k: np.ndarray
    final_rho2_k: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def rho1(self) -> np.ndarray:
        return self.rho1_k @ self.weights

    @property
    def rho2(self) -> np.ndarray:
        return self.rho2_k @ self.weights

    @property
    def final_rho1(self) -> float:
        return float(self.final_rho1_k @ self.weights)

    @property
    def final_rho2(self) -> float:
        return float(self.final_rho2_k @ self.weights)

    @property
    def difference_k(self) -> np.ndarray:
        """Fraction of each class that is S1- but not S2-active."""
        return self.rho1_k - self.rho2_k

    def class_index(self, k: int) -> int:
        hits = np.flatnonzero(self.degrees == k)
        if len(hits) == 0:
            raise KeyError(f"no degree class {k}")
        return int(hits[0])


# --------------------------------------------------------------------------
# event-driven runner
# --------------------------------------------------------------------------


class _Frontier:
    """Set of nodes whose next update would change their stage, with O(1) sampling."""

    __slots__ = ("items", "pos")

    def __init__(self, n: int):
        self.items: list[int] = []
        self.pos = [-1] * n

    def add(self, v: int):
        if self.pos[v] < 0:
            self.pos[v] = len(self.items)
            self.items.append(v)

    def discard(self, v: int):
        i = self.pos[v]
        if i >= 0:
            last = self.items.pop()
            if last != v:
                self.items[i] = last
                self.pos[last] = i
            self.pos[v] = -1


def run_realization(g: Graph, spec: ResponseSpec, state: SimState, mode: UpdateMode,
                    t_grid: np.ndarray, rng: random.Random) -> tuple[np.ndarray, np.ndarray, float]:
    """Run one realization from ``state`` to its fixpoint (mutates ``state``).

    Returns per-class S1 and S2 counts on ``t_grid`` (shape ``(T, 2, C)``),
    the final per-class counts (shape ``(2, C)``) and the time at which the
    last change happened.

    Asynchronous mode is the discrete process that updates one uniformly
    chosen node every ``1/N``. Updates of nodes that cannot change are skipped
    in bulk: the wait until the next frontier node is picked is geometric.
    """
    n = g.node_count
    adj = g.adjacency
    deg = g.degrees.tolist()
    classes = np.unique(g.degrees)
    cls_of = np.searchsorted(classes, g.degrees).tolist()
    n_cls = len(classes)
    beta = spec.beta
    denom = [1.0] * n if spec.count_based else [float(k) for k in deg]
    stages, m1, m2, r1, r2 = state.stages, state.m1, state.m2, state.r1, state.r2

    c1 = [0] * n_cls
    c2 = [0] * n_cls
    for v in range(n):
        if stages[v] >= 1:
            c1[cls_of[v]] += 1
        if stages[v] == 2:
            c2[cls_of[v]] += 1

    frontier = _Frontier(n)
    for v in range(n):
        if _target(stages[v], m1[v], m2[v], deg[v], denom[v], beta, r1[v], r2[v]) != stages[v]:
            frontier.add(v)

    grid = t_grid.tolist()
    rows: list[list[int]] = []
    n_rows = len(grid)
    g_i = 0
    # async clock as an integer step count (time = steps / n); sync clock counts sweeps
    steps = 0
    scale = n if mode is UpdateMode.ASYNC else 1
    last_change = 0.0

    def record_until(now_steps):
        nonlocal g_i
        while g_i < n_rows and grid[g_i] * scale < now_steps - 1e-9:
            rows.append(c1 + c2)
            g_i += 1

    def touch(v):
        if _target(stages[v], m1[v], m2[v], deg[v], denom[v], beta, r1[v], r2[v]) != stages[v]:
            frontier.add(v)
        else:
            frontier.discard(v)

    def change(v, new):
        old = stages[v]
        cv = cls_of[v]
        if old == 0:
            c1[cv] += 1
        if new == 2:
            c2[cv] += 1
        _apply(state, adj, v, new)
        frontier.discard(v)
        for u in adj[v]:
            touch(u)

    items = frontier.items
    if mode is UpdateMode.ASYNC:
        rand = rng.random
        while items:
            p = len(items) / n
            if p >= 1.0:
                wait = 1
            else:
                wait = int(math.log(1.0 - rand()) / math.log1p(-p)) + 1
            steps += wait
            record_until(steps)
            v = items[int(rand() * len(items))]
            new = _target(stages[v], m1[v], m2[v], deg[v], denom[v], beta, r1[v], r2[v])
            change(v, new)
        last_change = steps / n
    else:
        while items:
            steps += 1
            record_until(steps)
            batch = [(v, _target(stages[v], m1[v], m2[v], deg[v], denom[v], beta, r1[v], r2[v]))
                     for v in items]
            for v, new in batch:
                if new != stages[v]:
                    old = stages[v]
                    cv = cls_of[v]
                    if old == 0:
                        c1[cv] += 1
                    if new == 2:
                        c2[cv] += 1
                    _apply(state, adj, v, new)
            touched = {u for v, _ in batch for u in adj[v]}
            touched.update(v for v, _ in batch)
            for u in touched:
                touch(u)
        last_change = float(steps)
    state.t = last_change
    while g_i < n_rows:
        rows.append(c1 + c2)
        g_i += 1
    counts = np.array(rows, dtype=float).reshape(n_rows, 2, n_cls)
    final = np.array([c1, c2], dtype=float)
    return counts, final, last_change


def _realization_rngs(master: int, index: int) -> tuple[np.random.Generator, random.Random]:
    ss = np.random.SeedSequence([master, index])
    np_ss, py_ss = ss.spawn(2)
    return np.random.default_rng(np_ss), random.Random(int(py_ss.generate_state(1)[0]))


def _one(args) -> tuple[np.ndarray, np.ndarray, float]:
    g, spec, cfg, index, fixed = args
    rng, order_rng = _realization_rngs(cfg.rng_seed, index)
    thresholds = spec.sample_thresholds(rng, g.node_count)
    seed_rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 2**31])) if fixed else rng
    state = seed(g, cfg, seed_rng, thresholds)
    t_grid = np.linspace(0.0, cfg.t_max, cfg.n_grid)
    return run_realization(g, spec, state, cfg.update_mode, t_grid, order_rng)


def run(g: Graph, spec: ResponseSpec, cfg: SimConfig, workers: int = 1) -> TimeSeries:
    """Ensemble-mean time series over ``cfg.realizations`` independent runs.

    Each realization draws fresh quenched thresholds and a fresh update order
    from its own stream ``SeedSequence([rng_seed, index])``. Seed nodes are
    redrawn per realization unless ``cfg.fixed_seeds``.
    """
    jobs = [(g, spec, cfg, i, cfg.fixed_seeds) for i in range(cfg.realizations)]
    if workers > 1 and cfg.realizations > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    classes, sizes = np.unique(g.degrees, return_counts=True)
    counts = sum(r[0] for r in results) / cfg.realizations
    final = sum(r[1] for r in results) / cfg.realizations
    if not (np.all(np.isfinite(counts)) and np.all(np.isfinite(final))):
        raise SimulationError("non-finite densities")
    return TimeSeries(
        t=np.linspace(0.0, cfg.t_max, cfg.n_grid),
        degrees=classes,
        weights=sizes / g.node_count,
        rho1_k=counts[:, 0, :] / sizes,
        rho2_k=counts[:, 1, :] / sizes,
        final_rho1_k=final[0] / sizes,
        final_rho2_k=final[1] / sizes,
        meta={"fixpoint_time_mean": float(np.mean([r[2] for r in results])),
              "realizations": cfg.realizations},
    )

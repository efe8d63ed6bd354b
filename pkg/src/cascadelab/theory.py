"""Tree approximation for per-degree-class activation densities.

The neighbours of a not-yet-active node are treated as independent. A
degree-``k`` node sees each neighbour S2-active with probability ``qbar2_k``,
S1-but-not-S2 with ``qbar1_k - qbar2_k`` and inactive otherwise, so its
active-neighbour counts ``(m1, m2)`` are trinomial. Everything below is an
expectation of a response table under that law, for ``k`` trials (the node
itself) or ``k - 1`` trials (a child in the tree, whose parent is excluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .contagion import ResponseSpec, TimeSeries
from .graph import DegreeDistribution, JointDegreeDistribution

CONVERGENCE_TOL = 1e-10
MAX_ITERATIONS = 100_000
BOUNDS_TOL = 1e-9


class ConvergenceError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


def binomial_pmf(m: int, k: int, q: float) -> float:
    if not 0 <= m <= k:
        return 0.0
    return math.comb(k, m) * q**m * (1.0 - q) ** (k - m)


def _comb_table(size: int) -> np.ndarray:
    c = np.zeros((size, size))
    for n in range(size):
        for m in range(n + 1):
            c[n, m] = math.comb(n, m)
    return c


def _binom_rows(comb: np.ndarray, n: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``B(m; n_c, q_c)`` for each class ``c`` and ``m < size`` (zero for ``m > n_c``)."""
    size = comb.shape[0]
    m = np.arange(size)
    expo = n[:, None] - m[None, :]
    valid = expo >= 0
    q = q[:, None]
    with np.errstate(invalid="ignore"):
        out = comb[n][:, :size] * q**m * (1.0 - q) ** np.where(valid, expo, 0)
    return np.where(valid, out, 0.0)


def _ratio(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    # q2 <= q1, so q1 == 0 forces q2 == 0 and only the m1 = 0 term survives
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(q1 > 0, q2 / np.where(q1 > 0, q1, 1.0), 0.0)
    return np.clip(r, 0.0, 1.0)


class TreeKernel:
    """Trinomial expectations of response tables for a fixed set of degree classes.

    ``tables[name]`` has shape ``(C, S, S)`` holding ``F(m1, m2, k_c)`` for
    ``m1, m2 < S``; S leaves room for the shifts used by derivatives.
    """

    def __init__(self, degrees: np.ndarray, response: ResponseSpec):
        self.degrees = np.asarray(degrees, dtype=np.int64)
        kmax = int(self.degrees.max()) if len(self.degrees) else 0
        self.size = kmax + 3
        self.comb = _comb_table(self.size)
        s = self.size
        f1 = np.stack([response.table(1, int(k), s) for k in self.degrees])
        f2 = np.stack([response.table(2, int(k), s) for k in self.degrees])
        self.tables = {"F1": f1, "F2": f2}
        self.n_self = self.degrees
        self.n_child = np.maximum(self.degrees - 1, 0)

    def _binom_pair(self, n: np.ndarray, q1: np.ndarray, q2: np.ndarray):
        b1 = _binom_rows(self.comb, n, q1)
        r = _ratio(q1, q2)
        size = self.size
        m = np.arange(size)
        expo = m[:, None] - m[None, :]
        valid = expo >= 0
        rr = r[:, None, None]
        with np.errstate(invalid="ignore"):
            b2 = self.comb[None, :, :] * rr ** m[None, None, :] * (1.0 - rr) ** np.where(valid, expo, 0)[None]
        b2 = np.where(valid[None], b2, 0.0)
        return b1, b2

    def expect(self, n: np.ndarray, q1: np.ndarray, q2: np.ndarray, table: np.ndarray,
               shift1: int = 0, shift2: int = 0) -> np.ndarray:
        """``E[F(m1 + shift1, m2 + shift2)]`` with ``(m1, m2)`` trinomial over ``n`` trials."""
        b1, b2 = self._binom_pair(n, q1, q2)
        return self._contract(b1, b2, table, shift1, shift2)

    def _contract(self, b1, b2, table, shift1=0, shift2=0):
        size = self.size - 2
        t = table[:, shift1:shift1 + size, shift2:shift2 + size]
        inner = np.einsum("cij,cij->ci", b2[:, :size, :size], t)
        return np.einsum("ci,ci->c", b1[:, :size], inner)

    def grad(self, n: np.ndarray, q1: np.ndarray, q2: np.ndarray, table: np.ndarray,
             shift1: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Partial derivatives of ``E_n[F(m1 + shift1, m2)]`` in ``q1`` and ``q2``.

        Uses ``d/dq1 E_n[F] = n E_{n-1}[F(m1+1, m2) - F(m1, m2)]`` and
        ``d/dq2 E_n[F] = n E_{n-1}[F(m1+1, m2+1) - F(m1+1, m2)]``.
        """
        nm1 = np.maximum(n - 1, 0)
        b1, b2 = self._binom_pair(nm1, q1, q2)
        e00 = self._contract(b1, b2, table, shift1, 0)
        e10 = self._contract(b1, b2, table, shift1 + 1, 0)
        e11 = self._contract(b1, b2, table, shift1 + 1, 1)
        w = np.where(n > 0, n, 0)
        return w * (e10 - e00), w * (e11 - e10)


@dataclass(frozen=True, eq=False)
class ModelInputs:
    """Degree classes, mixing, response and seed fractions for the tree approximation.

    ``joint`` is indexed like ``degrees``; ``None`` means uncorrelated
    (configuration-model) mixing. Only classes with ``P_k > 0`` are stored.
    """

    degrees: np.ndarray
    pk: np.ndarray
    response: ResponseSpec
    phi1: float
    phi2: float = 0.0
    joint: np.ndarray | None = None
    kernel: TreeKernel = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.phi2 <= self.phi1 <= 1:
            raise ValueError("need 0 <= phi2 <= phi1 <= 1")
        degrees = np.asarray(self.degrees, dtype=np.int64)
        pk = np.asarray(self.pk, dtype=float)
        keep = pk > 0
        object.__setattr__(self, "degrees", degrees[keep])
        object.__setattr__(self, "pk", pk[keep])
        if self.joint is not None:
            object.__setattr__(self, "joint", np.asarray(self.joint, dtype=float)[np.ix_(keep, keep)])
        object.__setattr__(self, "kernel", TreeKernel(self.degrees, self.response))

    @classmethod
    def from_distribution(cls, dist: DegreeDistribution, response: ResponseSpec,
                          phi1: float, phi2: float = 0.0) -> "ModelInputs":
        return cls(dist.degrees, dist.pk, response, phi1, phi2)

    @classmethod
    def from_joint(cls, joint: JointDegreeDistribution, response: ResponseSpec,
                   phi1: float, phi2: float = 0.0) -> "ModelInputs":
        dist = joint.marginal()
        return cls(dist.degrees, dist.pk, response, phi1, phi2, joint=joint.matrix)

    @cached_property
    def z(self) -> float:
        return float(np.dot(self.degrees, self.pk))

    @cached_property
    def edge_weights(self) -> np.ndarray:
        """``k P_k / z``: the degree law of a node reached along an edge."""
        return self.degrees * self.pk / self.z

    def mixing(self) -> np.ndarray:
        """Row-stochastic matrix ``P(k, k') / sum_k' P(k, k')`` (zero rows for isolated classes)."""
        joint = self.joint if self.joint is not None else np.outer(self.edge_weights, self.edge_weights)
        rows = joint.sum(axis=1)
        out = np.zeros_like(joint)
        nz = rows > 0
        out[nz] = joint[nz] / rows[nz, None]
        if np.any(~nz & (self.degrees > 0)):
            raise ValueError("a degree class present in the network has no edges in the joint distribution")
        return out


@dataclass(frozen=True)
class TheoryState:
    q1: np.ndarray
    q2: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    step: int = 0


def qbar(joint: JointDegreeDistribution, q: np.ndarray, k: int) -> float:
    """Probability that a random neighbour of a degree-``k`` node is active.

    ``q`` is indexed like ``joint.degrees``.
    """
    hits = np.flatnonzero(joint.degrees == k)
    if len(hits) == 0:
        raise KeyError(f"degree {k} not present in the joint distribution")
    row = joint.matrix[hits[0]]
    total = row.sum()
    if total <= 0:
        raise ValueError(f"degree {k} has no edges")
    return float(np.dot(row, q) / total)


def update_rho(inputs: ModelInputs, q1bar: np.ndarray, q2bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class densities given the neighbour activation probabilities."""
    kern = inputs.kernel
    n = kern.n_self
    b1, b2 = kern._binom_pair(n, np.asarray(q1bar, float), np.asarray(q2bar, float))
    e1 = kern._contract(b1, b2, kern.tables["F1"])
    e2 = kern._contract(b1, b2, kern.tables["F2"])
    return (inputs.phi1 + (1 - inputs.phi1) * e1,
            inputs.phi2 + (1 - inputs.phi2) * e2)


def _child_terms(inputs: ModelInputs, q1bar: np.ndarray, q2bar: np.ndarray):
    """Activation probabilities of a child whose parent is not yet active."""
    kern = inputs.kernel
    b1, b2 = kern._binom_pair(kern.n_child, q1bar, q2bar)
    e1 = kern._contract(b1, b2, kern.tables["F1"])
    e2 = kern._contract(b1, b2, kern.tables["F2"])
    e2s = kern._contract(b1, b2, kern.tables["F2"], shift1=1)
    g1 = inputs.phi1 + (1 - inputs.phi1) * e1
    g2 = inputs.phi2 + (1 - inputs.phi2) * ((1 - q1bar) * e2 + q1bar * e2s)
    return g1, g2


def update_q(inputs: ModelInputs, state: TheoryState) -> tuple[np.ndarray, np.ndarray]:
    """One synchronous step of the per-class auxiliary probabilities."""
    mix = inputs.mixing()
    return _child_terms(inputs, mix @ state.q1, mix @ state.q2)


def _rho_from_q(inputs: ModelInputs, mix: np.ndarray, q1: np.ndarray, q2: np.ndarray):
    return update_rho(inputs, mix @ q1, mix @ q2)


def initial_state(inputs: ModelInputs) -> TheoryState:
    c = len(inputs.degrees)
    return TheoryState(np.full(c, inputs.phi1), np.full(c, inputs.phi2),
                       np.full(c, inputs.phi1), np.full(c, inputs.phi2), 0)


@dataclass(frozen=True, eq=False)
class SyncResult:
    """Trajectory of the discrete map; ``states[-1]`` is the fixpoint when converged."""

    inputs: ModelInputs
    states: list[TheoryState]
    converged: bool

    @property
    def fixpoint(self) -> TheoryState:
        return self.states[-1]

    @property
    def steps(self) -> int:
        return self.states[-1].step

    def to_timeseries(self) -> TimeSeries:
        """Densities at integer steps (one synchronous update per unit time)."""
        t = np.array([s.step for s in self.states], dtype=float)
        r1 = np.array([s.rho1 for s in self.states])
        r2 = np.array([s.rho2 for s in self.states])
        return TimeSeries(t, self.inputs.degrees, self.inputs.pk, r1, r2, r1[-1], r2[-1],
                          meta={"converged": self.converged, "method": "sync"})


def iterate_sync(inputs: ModelInputs, n_max: int = MAX_ITERATIONS, tol: float = CONVERGENCE_TOL,
                 keep_trajectory: bool = True) -> SyncResult:
    """Iterate the map from ``Q(0) = phi`` until the sup-norm step is below ``tol``."""
    mix = inputs.mixing()
    st = initial_state(inputs)
    states = [st]
    converged = False
    for n in range(1, n_max + 1):
        q1, q2 = _child_terms(inputs, mix @ st.q1, mix @ st.q2)
        rho1, rho2 = _rho_from_q(inputs, mix, st.q1, st.q2)
        delta = max(np.max(np.abs(q1 - st.q1), initial=0.0), np.max(np.abs(q2 - st.q2), initial=0.0))
        st = TheoryState(q1, q2, rho1, rho2, n)
        if keep_trajectory:
            states.append(st)
        else:
            states[-1:] = [st]
        if delta < tol:
            converged = True
            break
    # densities consistent with the final Q
    rho1, rho2 = _rho_from_q(inputs, mix, st.q1, st.q2)
    states[-1] = TheoryState(st.q1, st.q2, rho1, rho2, st.step)
    return SyncResult(inputs, states, converged)


def _ode_rhs(inputs: ModelInputs, mix: np.ndarray, y: np.ndarray) -> np.ndarray:
    c = len(inputs.degrees)
    q1, q2, r1, r2 = y[:c], y[c:2 * c], y[2 * c:3 * c], y[3 * c:]
    g1, g2 = _child_terms(inputs, mix @ q1, mix @ q2)
    h1, h2 = _rho_from_q(inputs, mix, q1, q2)
    return np.concatenate([g1 - q1, g2 - q2, h1 - r1, h2 - r2])


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_ode(inputs: ModelInputs, t_max: float, dt: float = 0.01, n_grid: int = 200,
                  t_grid: np.ndarray | None = None, settle_tol: float = CONVERGENCE_TOL,
                  settle_t_max: float = 1e4) -> TimeSeries:
    """Classical RK4 integration of the continuous-time (asynchronous) limit.

    The solution is sampled exactly on ``t_grid`` (default ``linspace(0,
    t_max, n_grid)``) by fitting an integer number of substeps of size at
    most ``dt`` between grid points. Integration then continues past
    ``t_max`` until ``|dy/dt|`` falls below ``settle_tol``; that state is
    reported as the final one.
    """
    if dt > 0.05:
        raise ValueError("dt must be <= 0.05")
    if t_grid is None:
        t_grid = np.linspace(0.0, t_max, n_grid)
    mix = inputs.mixing()
    c = len(inputs.degrees)
    y = np.concatenate([np.full(c, inputs.phi1), np.full(c, inputs.phi2),
                        np.full(c, inputs.phi1), np.full(c, inputs.phi2)])

    def f(v):
        return _ode_rhs(inputs, mix, v)

    def check(v, t):
        if np.any(v < -BOUNDS_TOL) or np.any(v > 1 + BOUNDS_TOL) or not np.all(np.isfinite(v)):
            raise IntegrationError(f"state left [0, 1] at t={t:.4g}; reduce dt")

    out = np.empty((len(t_grid), 4 * c))
    t = 0.0
    for i, tg in enumerate(t_grid):
        span = tg - t
        if span > 0:
            steps = max(1, math.ceil(span / dt - 1e-9))
            h = span / steps
            for _ in range(steps):
                y = _rk4(f, y, h)
            check(y, tg)
            t = tg
        out[i] = y
    settled = False
    while t < settle_t_max:
        for _ in range(100):
            y = _rk4(f, y, dt)
        t += 100 * dt
        check(y, t)
        if np.max(np.abs(f(y))) < settle_tol:
            settled = True
            break
    return TimeSeries(np.asarray(t_grid, float), inputs.degrees, inputs.pk,
                      out[:, 2 * c:3 * c], out[:, 3 * c:], y[2 * c:3 * c], y[3 * c:],
                      meta={"converged": settled, "method": "ode", "settle_time": t,
                            "q1": y[:c], "q2": y[c:2 * c]})


def config_model_step(inputs: ModelInputs, qbar1: float, qbar2: float):
    """Scalar recurrence for uncorrelated networks.

    Returns per-class densities and the next ``(qbar1, qbar2)``.
    """
    if inputs.joint is not None:
        raise ValueError("config_model_step requires uncorrelated inputs")
    c = len(inputs.degrees)
    q1 = np.full(c, float(qbar1))
    q2 = np.full(c, float(qbar2))
    rho1, rho2 = update_rho(inputs, q1, q2)
    g1, g2 = _child_terms(inputs, q1, q2)
    w = inputs.edge_weights
    return rho1, rho2, float(np.dot(w, g1)), float(np.dot(w, g2))


def aggregate(rho_k: np.ndarray, dist: DegreeDistribution | np.ndarray) -> float:
    pk = dist.pk if isinstance(dist, DegreeDistribution) else np.asarray(dist)
    rho_k = np.asarray(rho_k, float)
    if rho_k.shape[-1] != len(pk):
        raise ValueError("dimension mismatch between densities and degree distribution")
    return float(rho_k @ pk)


def gap(theory: TimeSeries, simulation: TimeSeries) -> np.ndarray:
    """Theory minus simulation per class at matched grid times."""
    if not np.allclose(theory.t, simulation.t):
        raise ValueError("time grids differ")
    out = np.full((len(theory.t), len(theory.degrees), 2), np.nan)
    for j, k in enumerate(theory.degrees):
        hits = np.flatnonzero(simulation.degrees == k)
        if len(hits):
            i = hits[0]
            out[:, j, 0] = theory.rho1_k[:, j] - simulation.rho1_k[:, i]
            out[:, j, 1] = theory.rho2_k[:, j] - simulation.rho2_k[:, i]
    return out

"""Cascade condition, equilibria and saddle-node continuation for the reduced map.

On uncorrelated networks the neighbour activation probabilities are degree
independent and the dynamics collapse to a map ``q -> g(q)`` on ``[0, 1]^2``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .contagion import ConfigError, ResponseSpec, Threshold
from .graph import DegreeDistribution, poisson_kmax
from .theory import MAX_ITERATIONS, ModelInputs, TreeKernel, _binom_rows

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-10
BOUNDARY_TOL = 1e-8
CASCADE_LEVEL = 0.5


class ReducedMap:
    """The two-dimensional map ``g`` with analytic Jacobian.

    Response tables do not depend on ``q``, so ``g`` is a polynomial in
    ``(q1, q2)`` and its derivatives are exact sums over shifted tables.
    """

    def __init__(self, dist: DegreeDistribution, response: ResponseSpec, phi1: float, phi2: float = 0.0):
        if not 0 <= phi2 <= phi1 <= 1:
            raise ConfigError("need 0 <= phi2 <= phi1 <= 1")
        deg, pk = dist.degrees, dist.pk
        self.dist = dist
        self.response = response
        self.phi1 = phi1
        self.phi2 = phi2
        self.z = dist.mean
        self.kernel = TreeKernel(deg, response)
        self.pk = pk
        self.edge_w = deg * pk / self.z
        k = self.kernel
        self._s = k.size - 2
        self._f1 = k.tables["F1"]
        self._f2 = k.tables["F2"]

    # trinomial weights; qbar is degree independent so the m2 factor is shared
    def _weights(self, n: np.ndarray, q1: float, q2: float):
        kern = self.kernel
        b1 = _binom_rows(kern.comb, n, np.full(len(n), q1))
        _, b2 = kern._binom_pair(n[:1], np.array([q1]), np.array([q2]))
        return b1[:, :self._s], b2[0, :self._s, :self._s]

    def _e(self, b1, b2, table, s1=0, s2=0):
        s = self._s
        t = table[:, s1:s1 + s, s2:s2 + s]
        inner = np.einsum("ij,cij->ci", b2, t)
        return np.einsum("ci,ci->c", b1, inner)

    def __call__(self, q) -> np.ndarray:
        q1, q2 = float(q[0]), float(q[1])
        b1, b2 = self._weights(self.kernel.n_child, q1, q2)
        e1 = self._e(b1, b2, self._f1)
        e2 = self._e(b1, b2, self._f2)
        e2s = self._e(b1, b2, self._f2, 1)
        w = self.edge_w
        g1 = self.phi1 + (1 - self.phi1) * np.dot(w, e1)
        g2 = self.phi2 + (1 - self.phi2) * np.dot(w, (1 - q1) * e2 + q1 * e2s)
        return np.array([g1, g2])

    def jacobian(self, q) -> np.ndarray:
        """``J[i, j] = d g_i / d q_j``."""
        q1, q2 = float(q[0]), float(q[1])
        n = self.kernel.n_child
        b1, b2 = self._weights(n, q1, q2)
        e2 = self._e(b1, b2, self._f2)
        e2s = self._e(b1, b2, self._f2, 1)
        c1, c2 = self._weights(np.maximum(n - 1, 0), q1, q2)
        nn = n.astype(float)

        def grad(table, s1):
            e00 = self._e(c1, c2, table, s1, 0)
            e10 = self._e(c1, c2, table, s1 + 1, 0)
            e11 = self._e(c1, c2, table, s1 + 1, 1)
            return nn * (e10 - e00), nn * (e11 - e10)

        d1f1, d2f1 = grad(self._f1, 0)
        d1f2, d2f2 = grad(self._f2, 0)
        d1f2s, d2f2s = grad(self._f2, 1)
        w = self.edge_w
        a, b = 1 - self.phi1, 1 - self.phi2
        return np.array([
            [a * np.dot(w, d1f1), a * np.dot(w, d2f1)],
            [b * np.dot(w, e2s - e2 + (1 - q1) * d1f2 + q1 * d1f2s),
             b * np.dot(w, (1 - q1) * d2f2 + q1 * d2f2s)],
        ])

    def rho(self, q) -> tuple[float, float]:
        """Aggregate densities ``(rho1, rho2)`` when neighbours are active with probabilities ``q``."""
        q1, q2 = float(q[0]), float(q[1])
        b1, b2 = self._weights(self.kernel.n_self, q1, q2)
        e1 = self._e(b1, b2, self._f1)
        e2 = self._e(b1, b2, self._f2)
        r1 = self.phi1 + (1 - self.phi1) * np.dot(self.pk, e1)
        r2 = self.phi2 + (1 - self.phi2) * np.dot(self.pk, e2)
        return float(r1), float(r2)


class Partials(NamedTuple):
    d1g1: float
    d2g1: float
    d1g2: float
    d2g2: float


def partials_at_zero(dist: DegreeDistribution, spec: ResponseSpec, phi1: float, phi2: float = 0.0) -> Partials:
    """Closed-form derivatives of the reduced map at the origin."""
    z = dist.mean
    s = [0.0, 0.0, 0.0, 0.0]
    for k, p in dist.probabilities.items():
        if k == 0:
            continue
        f = spec.response
        w = k * (k - 1) * p / z
        s[0] += w * (f(1, 1, 0, k) - f(1, 0, 0, k))
        s[1] += w * (f(1, 1, 1, k) - f(1, 1, 0, k))
        s[2] += k * k * p / z * (f(2, 1, 0, k) - f(2, 0, 0, k))
        s[3] += w * (f(2, 1, 1, k) - f(2, 1, 0, k))
    return Partials((1 - phi1) * s[0], (1 - phi1) * s[1], (1 - phi2) * s[2], (1 - phi2) * s[3])


def _det_form(j11: float, j12: float, j21: float, j22: float) -> float:
    return j12 * j21 - (j11 - 1.0) * (j22 - 1.0)


class CascadeCondition(NamedTuple):
    cascades: bool
    value: float


def cascade_condition(dist: DegreeDistribution, spec: ResponseSpec, phi1: float, phi2: float = 0.0) -> CascadeCondition:
    """Global cascades are predicted when ``D2g1 D1g2 - (D1g1 - 1)(D2g2 - 1) > 0`` at the origin."""
    p = partials_at_zero(dist, spec, phi1, phi2)
    value = _det_form(p.d1g1, p.d2g1, p.d1g2, p.d2g2)
    return CascadeCondition(value > 0, value)


def origin_jacobian(inputs: ModelInputs) -> np.ndarray:
    """Jacobian of the full per-class map at ``Q = 0``, shape ``(2C, 2C)``.

    Blocks are ordered ``(q1, q2)``; each is ``diag(dg/dqbar) @ mixing``.
    """
    kern = inputs.kernel
    n = kern.n_child
    zero = np.zeros(len(n))
    f1, f2 = kern.tables["F1"], kern.tables["F2"]
    d1f1, d2f1 = kern.grad(n, zero, zero, f1)
    d1f2, d2f2 = kern.grad(n, zero, zero, f2)
    jump = kern.expect(n, zero, zero, f2, 1) - kern.expect(n, zero, zero, f2)
    a, b = 1 - inputs.phi1, 1 - inputs.phi2
    mix = inputs.mixing()
    return np.block([
        [(a * d1f1)[:, None] * mix, (a * d2f1)[:, None] * mix],
        [(b * (jump + d1f2))[:, None] * mix, (b * d2f2)[:, None] * mix],
    ])


def jacobian_condition(inputs: ModelInputs) -> CascadeCondition:
    """Cascade test for correlated mixing: leading eigenvalue of the origin Jacobian above 1.

    The value is that eigenvalue minus 1.
    """
    lead = float(np.max(np.linalg.eigvals(origin_jacobian(inputs)).real))
    return CascadeCondition(lead > 1.0, lead - 1.0)


@dataclass(frozen=True, eq=False)
class Equilibrium:
    q: np.ndarray
    jacobian: np.ndarray
    residual: float
    iterations: int
    converged: bool

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.jacobian)

    @property
    def discriminant(self) -> float:
        j = self.jacobian
        return float(np.trace(j) ** 2 - 4 * np.linalg.det(j))

    @property
    def stable(self) -> bool:
        return bool(np.max(self.eigenvalues.real) - 1.0 < 0)


def _newton(m: ReducedMap, q: np.ndarray, iters: int = 30) -> np.ndarray | None:
    x = q.copy()
    for _ in range(iters):
        f = m(x) - x
        if np.max(np.abs(f)) < 1e-14:
            return x
        jac = m.jacobian(x) - np.eye(2)
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            return None
        x = x - dx
        if not np.all(np.isfinite(x)):
            return None
    return x


def find_equilibrium(m: ReducedMap, q0=None, max_iter: int = MAX_ITERATIONS,
                     tol: float = EQUILIBRIUM_TOL) -> Equilibrium:
    """Equilibrium reached by fixed-point iteration from ``q0`` (default: the seed point).

    From the seed point the iteration increases monotonically. Once the
    residual is small, Newton polishing is tried and accepted only if it stays
    within ``1e-3`` of, and not below, the current iterate.
    """
    q = np.array([m.phi1, m.phi2] if q0 is None else q0, dtype=float)
    next_try = 0
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        gq = m(q)
        res = float(np.max(np.abs(gq - q)))
        if res < tol:
            break
        if res < 1e-5 and it >= next_try:
            x = _newton(m, gq)
            next_try = it + 50
            if x is not None and np.all(x >= gq - 1e-9) and np.max(np.abs(x - gq)) < 1e-3 \
                    and np.all(x <= 1 + 1e-12):
                x = np.clip(x, 0.0, 1.0)
                r = float(np.max(np.abs(m(x) - x)))
                if r < tol:
                    q, res = x, r
                    break
        q = gq
    converged = res < tol
    return Equilibrium(q, m.jacobian(q), res, it, converged)


def saddle_node_residual(m: ReducedMap, q) -> tuple[float, float, float]:
    """Equilibrium residuals ``g(q) - q`` and the zero-eigenvalue condition at ``q``."""
    q = np.asarray(q, float)
    f = m(q) - q
    j = m.jacobian(q)
    return float(f[0]), float(f[1]), _det_form(j[0, 0], j[0, 1], j[1, 0], j[1, 1])


# --------------------------------------------------------------------------
# parameter families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelPoint:
    """A point of parameter space for the reduced map on an uncorrelated network.

    The network is Poisson with mean ``z`` when ``degrees`` is ``None``,
    otherwise the explicit distribution ``degrees``/``pk``.
    """

    beta: float
    r1: float
    r2: float
    phi1: float
    phi2: float = 0.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    count_based: bool = False
    z: float | None = None
    kmax: int | None = None
    degrees: tuple[int, ...] | None = None
    pk: tuple[float, ...] | None = None

    PARAMS = ("beta", "r1", "r2", "phi1", "phi2", "sigma1", "sigma2", "z")

    def with_params(self, **kw) -> "ModelPoint":
        bad = set(kw) - set(self.PARAMS)
        if bad:
            raise ValueError(f"unknown parameters {sorted(bad)}")
        return dataclasses.replace(self, **kw)

    def distribution(self) -> DegreeDistribution:
        if self.degrees is not None:
            return DegreeDistribution(dict(zip(self.degrees, self.pk)))
        if self.z is None or self.z <= 0:
            raise ConfigError("mean degree z must be positive")
        return DegreeDistribution.poisson(self.z, self.kmax)

    def response(self) -> ResponseSpec:
        return ResponseSpec(self.beta, Threshold(self.r1, self.sigma1), Threshold(self.r2, self.sigma2),
                            self.count_based)

    def reduced_map(self) -> ReducedMap:
        return ReducedMap(self.distribution(), self.response(), self.phi1, self.phi2)

    def condition(self) -> CascadeCondition:
        return cascade_condition(self.distribution(), self.response(), self.phi1, self.phi2)


# --------------------------------------------------------------------------
# continuation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryPoint:
    p1: float
    p2: float
    q1: float
    q2: float
    residuals: tuple[float, float, float]
    segment: int = 0


@dataclass(eq=False)
class BoundaryCurve:
    p1_name: str
    p2_name: str
    points: list[BoundaryPoint] = field(default_factory=list)
    end_of_branch: bool = False

    def max_residual(self) -> float:
        return max((max(abs(r) for r in p.residuals) for p in self.points), default=0.0)


def _family_map(base: ModelPoint, p1_name: str, p2_name: str, p1: float, p2: float) -> ReducedMap:
    return base.with_params(**{p1_name: float(p1), p2_name: float(p2)}).reduced_map()


def _extended(base: ModelPoint, p1_name: str, p2_name: str, p2: float, x: np.ndarray) -> np.ndarray:
    m = _family_map(base, p1_name, p2_name, x[2], p2)
    return np.array(saddle_node_residual(m, x[:2]))


def _extended_jacobian(base, p1_name, p2_name, p2, x) -> np.ndarray:
    # q columns of the equilibrium rows are analytic; the rest is central differences
    m = _family_map(base, p1_name, p2_name, x[2], p2)
    jac = np.empty((3, 3))
    jac[:2, :2] = m.jacobian(x[:2]) - np.eye(2)
    for j in range(2):
        h = 1e-7
        e = np.zeros(2)
        e[j] = h
        jac[2, j] = (saddle_node_residual(m, x[:2] + e)[2] - saddle_node_residual(m, x[:2] - e)[2]) / (2 * h)
    h = 1e-7 * max(1.0, abs(x[2]))
    e = np.array([0.0, 0.0, h])
    jac[:, 2] = (_extended(base, p1_name, p2_name, p2, x + e)
                 - _extended(base, p1_name, p2_name, p2, x - e)) / (2 * h)
    return jac


def solve_saddle_node(base: ModelPoint, p1_name: str, p2_name: str, p2: float, x0,
                      tol: float = 1e-11, max_iter: int = 40) -> np.ndarray | None:
    """Newton solve of ``g(q) = q`` plus zero eigenvalue in unknowns ``(q1, q2, p1)``.

    Returns ``None`` when Newton fails or leaves the admissible domain.
    """
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        try:
            f = _extended(base, p1_name, p2_name, p2, x)
            if np.max(np.abs(f)) < tol:
                return x
            dx = np.linalg.solve(_extended_jacobian(base, p1_name, p2_name, p2, x), f)
        except (ConfigError, ValueError, np.linalg.LinAlgError):
            return None
        x = x - dx
        if not (np.all(np.isfinite(x)) and np.all(x[:2] >= -1e-9) and np.all(x[:2] <= 1 + 1e-9)):
            return None
    return None


def locate_saddle_node(base: ModelPoint, p1_name: str, p2_name: str, p2: float,
                       p1_range: tuple[float, float], n_scan: int = 60, jump: float = 0.05,
                       last: bool = True):
    """Find a fold along ``p1`` at fixed ``p2`` from jumps of the seeded equilibrium.

    Jumps are tried from the largest ``p1`` down (or from the smallest when
    ``last`` is false). Returns ``(q1, q2, p1)`` or ``None``.
    """
    grid = np.linspace(*p1_range, n_scan)

    def q_at(p1):
        # branch classification only; iteration slows down close to the fold
        return find_equilibrium(_family_map(base, p1_name, p2_name, p1, p2), max_iter=5_000).q

    qs = [q_at(p) for p in grid]
    order = range(n_scan - 2, -1, -1) if last else range(n_scan - 1)
    for i in order:
        a, b = qs[i], qs[i + 1]
        if abs(a[0] - b[0]) < jump:
            continue
        lo, hi, qlo, qhi = grid[i], grid[i + 1], a, b
        while hi - lo > 1e-5 * max(1.0, abs(lo)):
            mid = 0.5 * (lo + hi)
            qm = q_at(mid)
            if abs(qm[0] - qlo[0]) < abs(qm[0] - qhi[0]):
                lo, qlo = mid, qm
            else:
                hi, qhi = mid, qm
        # seeded iteration jumps where the lower branch folds
        start = (qlo[0], qlo[1], lo) if qlo[0] <= qhi[0] else (qhi[0], qhi[1], hi)
        x = solve_saddle_node(base, p1_name, p2_name, p2, start)
        if x is not None and p1_range[0] <= x[2] <= p1_range[1]:
            return x
    return None


def _point(base, p1_name, p2_name, p2, x, segment) -> BoundaryPoint:
    m = base.with_params(**{p1_name: float(x[2]), p2_name: p2}).reduced_map()
    return BoundaryPoint(float(x[2]), float(p2), float(x[0]), float(x[1]),
                         saddle_node_residual(m, x[:2]), segment)


def continue_saddle_node(base: ModelPoint, p1_name: str, p2_name: str,
                         p2_range: tuple[float, float], p1_range: tuple[float, float],
                         start=None, step: float = 0.01, min_step: float = 1e-5,
                         max_step: float = 0.05, max_points: int = 2000) -> BoundaryCurve:
    """Trace a saddle-node curve in ``(p1, p2)`` by stepping ``p2``.

    Secant predictor and Newton corrector in ``(q1, q2, p1)``; the step is
    halved on corrector failure. Below ``min_step`` the fold is relocated from
    scratch a little further on (response tables can jump in ``p2``); the
    points after a relocation get a new ``segment`` id. If relocation fails too
    the curve ends with ``end_of_branch`` set.
    """
    curve = BoundaryCurve(p1_name, p2_name)
    p2 = p2_range[0]
    if start is None:
        start = locate_saddle_node(base, p1_name, p2_name, p2, p1_range)
        while start is None and p2 < p2_range[1]:
            p2 = min(p2 + step, p2_range[1])
            start = locate_saddle_node(base, p1_name, p2_name, p2, p1_range)
            if p2 >= p2_range[1]:
                break
        if start is None:
            curve.end_of_branch = True
            return curve
    x = np.asarray(start, float)
    segment = 0
    curve.points.append(_point(base, p1_name, p2_name, p2, x, segment))
    prev = None
    h = step
    while p2 < p2_range[1] and len(curve.points) < max_points:
        h = min(h, p2_range[1] - p2)
        p2_new = p2 + h
        if prev is not None:
            dp = curve.points[-1].p2 - curve.points[-2].p2 if len(curve.points) > 1 and \
                curve.points[-2].segment == segment else 0.0
            pred = x + (x - prev) * (h / dp) if dp > 0 else x
        else:
            pred = x
        sol = solve_saddle_node(base, p1_name, p2_name, p2_new, pred)
        if sol is not None and np.max(np.abs(sol[:2] - x[:2])) > 0.2:
            sol = None  # jumped to another branch
        if sol is not None and p1_range[0] <= sol[2] <= p1_range[1]:
            prev, x, p2 = x, sol, p2_new
            curve.points.append(_point(base, p1_name, p2_name, p2, x, segment))
            h = min(h * 1.5, max_step)
            continue
        h /= 2
        if h >= min_step:
            continue
        p2_jump = p2 + step
        found = None
        while found is None and p2_jump <= p2_range[1]:
            found = locate_saddle_node(base, p1_name, p2_name, p2_jump, p1_range)
            if found is None:
                p2_jump += step
        if found is None:
            curve.end_of_branch = True
            break
        segment += 1
        x, p2, prev, h = found, p2_jump, None, step
        curve.points.append(_point(base, p1_name, p2_name, p2, x, segment))
    return curve


# --------------------------------------------------------------------------
# diagrams
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Diagram:
    """Final densities over a grid; ``rho1[i, j]`` is at ``(p1[i], p2[j])``. NaN marks excluded or failed points."""

    p1_name: str
    p2_name: str
    p1: np.ndarray
    p2: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    condition: np.ndarray
    forbidden: np.ndarray
    failed: np.ndarray


def _grid_point(args):
    base, p1_name, p2_name, a, b = args
    try:
        pt = base.with_params(**{p1_name: a, p2_name: b})
        m = pt.reduced_map()
    except ConfigError:
        return math.nan, math.nan, math.nan, True, False
    cond = pt.condition().value
    eq = find_equilibrium(m)
    if not eq.converged:
        return math.nan, math.nan, cond, False, True
    r1, r2 = m.rho(eq.q)
    return r1, r2, cond, False, False


def sweep_diagram(base: ModelPoint, p1_name: str, p1_values, p2_name: str, p2_values,
                  workers: int = 1) -> Diagram:
    """Theory fixpoints and cascade-condition values over a parameter grid."""
    p1v = np.asarray(p1_values, float)
    p2v = np.asarray(p2_values, float)
    jobs = [(base, p1_name, p2_name, float(a), float(b)) for a in p1v for b in p2v]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(_grid_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        res = [_grid_point(j) for j in jobs]
    arr = np.array([r[:3] for r in res], dtype=float).reshape(len(p1v), len(p2v), 3)
    flags = np.array([r[3:] for r in res], dtype=bool).reshape(len(p1v), len(p2v), 2)
    for r in res:
        if r[4]:
            logger.warning("non-converged grid point")
            break
    return Diagram(p1_name, p2_name, p1v, p2v, arr[..., 0], arr[..., 1], arr[..., 2],
                   flags[..., 0], flags[..., 1])


def condition_boundary(base: ModelPoint, p1_name: str, p1_range: tuple[float, float],
                       p2_name: str, p2_values, n_scan: int = 200) -> list[tuple[float, float]]:
    """Points ``(p1, p2)`` where the cascade-condition value changes sign along ``p1``.

    Each sign change on a scan of ``n_scan`` points is refined by bisection.
    """
    out = []
    grid = np.linspace(*p1_range, n_scan)

    def value(a, b):
        try:
            return base.with_params(**{p1_name: float(a), p2_name: float(b)}).condition().value
        except ConfigError:
            return math.nan

    for b in p2_values:
        vals = [value(a, b) for a in grid]
        for i in range(n_scan - 1):
            va, vb = vals[i], vals[i + 1]
            if not (np.isfinite(va) and np.isfinite(vb)) or (va > 0) == (vb > 0):
                continue
            lo, hi, vlo = grid[i], grid[i + 1], va
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                vm = value(mid, b)
                if (vm > 0) == (vlo > 0):
                    lo, vlo = mid, vm
                else:
                    hi = mid
                if hi - lo < 1e-12:
                    break
            out.append((0.5 * (lo + hi), float(b)))
    return out

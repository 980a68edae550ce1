"""Causal variational principle on the two-sphere.

Points F = tau x.sigma + 1 with x on S^2 have eigenvalues 1 +- tau.  The
Lagrangian of two such points depends only on c = <x, y>:

    L(c) = max(0, D(c)),   D(c) = 2 tau^2 (1 + c) (2 - tau^2 (1 - c)).

The action of a weighted counting measure is S = sum_ij w_i w_j L(c_ij),
diagonal included.  ``minimize`` searches over point positions and weights
jointly (simulated annealing, then projected-gradient polish); ``sweep``
tabulates minima over grids of tau and of the number of points m.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize as _scipy_minimize

from . import _linalg
from .errors import DomainError, InvalidOptions
from .operator_core import CausalFermionPoint, validate_point

__all__ = [
    "SphereConfiguration", "RandomStart", "MinimizeOptions", "MinimizationResult",
    "ClusteredSupport", "SweepRow", "d_function", "d_derivative",
    "sphere_lagrangian", "theta_max", "embed", "sphere_config", "sphere_action",
    "sphere_constraint", "lagrangian_matrix", "platonic", "support_clusters",
    "minimize", "sweep", "PAULI",
]

PAULI = (np.array([[0, 1], [1, 0]], dtype=complex),
         np.array([[0, -1j], [1j, 0]], dtype=complex),
         np.array([[1, 0], [0, -1]], dtype=complex))

_C_SLACK = 1e-12


def _check_tau(tau):
    if not np.isfinite(tau) or tau < 1.0:
        raise DomainError("tau must be >= 1, got %r" % (tau,))


def d_function(c, tau):
    """D(c) = 2 tau^2 (1+c)(2 - tau^2 (1-c)); array-friendly."""
    c = np.asarray(c, dtype=float)
    if np.any(np.abs(c) > 1.0 + _C_SLACK) or np.any(np.isnan(c)):
        raise DomainError("cosine outside [-1, 1]")
    c = np.clip(c, -1.0, 1.0)
    t2 = tau * tau
    out = 2.0 * t2 * (1.0 + c) * (2.0 - t2 * (1.0 - c))
    return float(out) if out.ndim == 0 else out


def d_derivative(c, tau):
    t2 = tau * tau
    return 4.0 * t2 * (1.0 + t2 * np.asarray(c, dtype=float))


def theta_max(tau):
    """Opening angle beyond which pairs are spacelike; None at tau = 1."""
    _check_tau(tau)
    if tau == 1.0:
        return None
    return float(np.arccos(1.0 - 2.0 / (tau * tau)))


def sphere_lagrangian(x, y, tau):
    c = float(np.dot(x, y))
    return max(0.0, d_function(float(np.clip(c, -1.0, 1.0)), tau))


def embed(x, tau):
    """The 2x2 point tau x.sigma + 1 (spin dimension one)."""
    x = np.asarray(x, dtype=float)
    m = tau * (x[0] * PAULI[0] + x[1] * PAULI[1] + x[2] * PAULI[2]) + np.eye(2)
    if abs(x @ x - 1.0) > 1e-12:
        return validate_point(m, 1)
    # eigenpairs in closed form: 1 +- tau on the Bloch vectors of +-x
    if x[2] >= 0:
        up = np.array([1.0 + x[2], x[0] + 1j * x[1]])
        down = np.array([-x[0] + 1j * x[1], 1.0 + x[2]])
    else:
        up = np.array([x[0] - 1j * x[1], 1.0 - x[2]])
        down = np.array([1.0 - x[2], -x[0] - 1j * x[1]])
    vecs = np.stack([down / np.linalg.norm(down), up / np.linalg.norm(up)], axis=1)
    lam = np.array([1.0 - tau, 1.0 + tau])
    keep = np.abs(lam) > _linalg.RANK_RTOL * (1.0 + tau)
    m.setflags(write=False)
    return CausalFermionPoint(m, 1, lam[keep], vecs[:, keep])


@dataclass(frozen=True, eq=False)
class SphereConfiguration:
    tau: float
    points: np.ndarray
    weights: np.ndarray

    @property
    def m(self):
        return self.points.shape[0]


def sphere_config(tau, points, weights=None, normalize=True):
    """Validated configuration; points and weights are renormalized if asked."""
    _check_tau(tau)
    pts = np.array(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise InvalidOptions("a configuration needs at least one point")
    w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if weights is None else \
        np.array(weights, dtype=float).reshape(-1)
    if w.size != pts.shape[0]:
        raise InvalidOptions("%d weights for %d points" % (w.size, pts.shape[0]))
    norms = np.linalg.norm(pts, axis=1)
    if normalize:
        if np.any(norms == 0) or np.any(w < 0) or w.sum() <= 0:
            raise InvalidOptions("zero vector or invalid weights")
        pts = pts / norms[:, None]
        w = w / w.sum()
    elif np.any(np.abs(norms - 1) > 1e-12) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise InvalidOptions("points must be unit vectors and weights on the simplex")
    pts.setflags(write=False)
    w.setflags(write=False)
    return SphereConfiguration(float(tau), pts, w)


def lagrangian_matrix(points, tau):
    c = np.clip(points @ points.T, -1.0, 1.0)
    return np.maximum(0.0, d_function(c, tau))


def sphere_action(config):
    w = config.weights
    return float(w @ lagrangian_matrix(config.points, config.tau) @ w)


def _pair_weight_sq(c, tau):
    # (|lambda_+| + |lambda_-|)^2 of the 2x2 closed chain
    t2 = tau * tau
    radicand = 2 * t2 * (1 + c) - t2 * t2 * (1 - c * c)
    return np.where(radicand >= 0, (2 * np.abs(1 + t2 * c)) ** 2, (2 * (t2 - 1)) ** 2)


def sphere_constraint(config):
    """T = sum_ij w_i w_j |x_i x_j|^2 (reported, not enforced)."""
    c = np.clip(config.points @ config.points.T, -1.0, 1.0)
    w = config.weights
    return float(w @ _pair_weight_sq(c, config.tau) @ w)


def platonic(solid, tau):
    """Equal-weight measure on the vertices of a Platonic solid."""
    phi = (1 + 5 ** 0.5) / 2
    if solid in ("tetra", "tetrahedron"):
        v = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    elif solid in ("octa", "octahedron"):
        v = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    elif solid == "cube":
        v = [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]
    elif solid in ("icosa", "icosahedron"):
        v = []
        for a in (1, -1):
            for b in (phi, -phi):
                v += [(0, a, b), (a, b, 0), (b, 0, a)]
    elif solid in ("dodeca", "dodecahedron"):
        v = [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]
        for a in (1, -1):
            for b in (1, -1):
                v += [(0, a / phi, b * phi), (a / phi, b * phi, 0), (b * phi, 0, a / phi)]
    else:
        raise InvalidOptions("unknown solid %r" % (solid,))
    return sphere_config(tau, np.array(v, dtype=float))


@dataclass(frozen=True)
class ClusteredSupport:
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.points.shape[0]


def support_clusters(config, merge_tolerance=1e-3, weight_floor=1e-8):
    """Greedy geodesic merge of the points carrying weight.

    Points are visited by decreasing weight; each joins the first existing
    cluster whose seed lies within ``merge_tolerance`` radians.  Weights
    below ``weight_floor`` are dropped first; the rest are renormalized.
    """
    w = np.asarray(config.weights, dtype=float)
    pts = np.asarray(config.points, dtype=float)
    keep = w > weight_floor
    if not np.any(keep):
        keep = w == w.max()
    order = np.flatnonzero(keep)[np.argsort(-w[keep], kind="stable")]
    seeds, members = [], []
    for i in order:
        for k, s in enumerate(seeds):
            if np.arccos(np.clip(np.dot(pts[s], pts[i]), -1, 1)) <= merge_tolerance:
                members[k].append(i)
                break
        else:
            seeds.append(i)
            members.append([i])
    cw = np.array([w[m].sum() for m in members])
    cp = np.array([(w[m][:, None] * pts[m]).sum(axis=0) for m in members])
    cp /= np.linalg.norm(cp, axis=1)[:, None]
    cw = cw / cw.sum()
    return ClusteredSupport(cp, cw)


@dataclass(frozen=True)
class RandomStart:
    tau: float
    m: int


@dataclass(frozen=True)
class MinimizeOptions:
    master_seed: int = 0
    restarts: int = 8
    initial_temperature: float = 0.05
    cooling_factor: float = 0.93
    temperature_levels: int = 90
    steps_per_level: int = 30
    polish_iterations: int = 3000
    refine_max_support: int = 24
    merge_tolerance: float = 1e-3
    convergence_tolerance: float = 1e-13
    workers: int = None

    def validate(self):
        ints = ("restarts", "temperature_levels", "steps_per_level", "polish_iterations",
                "refine_max_support")
        for name in ints:
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise InvalidOptions("%s must be a positive integer" % name)
        for name in ("initial_temperature", "merge_tolerance", "convergence_tolerance"):
            if not getattr(self, name) > 0:
                raise InvalidOptions("%s must be positive" % name)
        if not 0.0 < self.cooling_factor < 1.0:
            raise InvalidOptions("cooling_factor must lie in (0, 1)")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise InvalidOptions("master_seed must be a non-negative integer")
        if self.workers is not None and self.workers < 1:
            raise InvalidOptions("workers must be positive")


@dataclass(frozen=True)
class MinimizationResult:
    best: SphereConfiguration
    action: float
    support: ClusteredSupport
    history: np.ndarray
    restart_actions: np.ndarray
    best_restart: int
    constraint_T: float = field(default=None)


def _tangent_gauss(x, sigma, rng):
    g = rng.normal(size=3) * sigma
    g -= np.dot(g, x) * x
    y = x + g
    return y / np.linalg.norm(y)


def _anneal(pts, w, tau, opts, rng):
    """Metropolis over single-point and single-weight moves.

    Returns the best configuration seen and the best-so-far action per
    temperature level.  The proposal widths shrink with the temperature.
    """
    m = w.size
    lag = lagrangian_matrix(pts, tau)
    energy = float(w @ lag @ w)
    scale = 8.0 * tau * tau
    best = (energy, pts.copy(), w.copy())
    history = []
    temp = opts.initial_temperature
    if m == 1:
        return best, [energy]
    for _ in range(opts.temperature_levels):
        frac = temp / opts.initial_temperature
        sig_x = 0.6 * frac ** 0.5 + 1e-3
        sig_w = 0.5 / m * frac ** 0.5 + 1e-6
        for _ in range(opts.steps_per_level * m):
            i = int(rng.integers(m))
            if rng.random() < 0.5:
                xi = _tangent_gauss(pts[i], sig_x, rng)
                row = np.maximum(0.0, d_function(np.clip(pts @ xi, -1, 1), tau))
                row[i] = lag[i, i]
                delta = 2.0 * w[i] * float(w @ (row - lag[i]))
                if delta <= 0 or rng.random() < np.exp(-delta / (temp * scale)):
                    pts[i] = xi
                    lag[i, :] = row
                    lag[:, i] = row
                    energy += delta
            else:
                j = int(rng.integers(m - 1))
                j += j >= i
                step = np.zeros(m)
                d = rng.normal() * sig_w
                step[i], step[j] = d, -d
                wn = _linalg.project_simplex(w + step)
                en = float(wn @ lag @ wn)
                delta = en - energy
                if delta <= 0 or rng.random() < np.exp(-delta / (temp * scale)):
                    w, energy = wn, en
            if energy < best[0] - 1e-15:
                best = (energy, pts.copy(), w.copy())
        # resynchronize against drift of the incremental update
        energy = float(w @ lag @ w)
        history.append(best[0])
        temp *= opts.cooling_factor
    return best, history


def _gradients(pts, w, tau):
    c = np.clip(pts @ pts.T, -1.0, 1.0)
    dv = d_function(c, tau)
    lag = np.maximum(0.0, dv)
    active = dv > 0
    np.fill_diagonal(active, False)
    # subgradient 0 where D <= 0
    coef = np.where(active, d_derivative(c, tau), 0.0) * np.outer(w, w)
    gx = 2.0 * coef @ pts
    gx -= np.sum(gx * pts, axis=1)[:, None] * pts
    gw = 2.0 * lag @ w
    return float(w @ lag @ w), gx, gw


def _polish(pts, w, tau, opts):
    """Projected gradient with backtracking on points and weights jointly."""
    energy, gx, gw = _gradients(pts, w, tau)
    history = [energy]
    step = 1.0 / (8.0 * tau * tau)
    for _ in range(opts.polish_iterations):
        improved = False
        for _ in range(40):
            np_ = pts - step * gx
            np_ /= np.linalg.norm(np_, axis=1)[:, None]
            nw = _linalg.project_simplex(w - step * gw)
            en = float(nw @ lagrangian_matrix(np_, tau) @ nw)
            if en < energy:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = energy - en
        pts, w = np_, nw
        energy, gx, gw = _gradients(pts, w, tau)
        history.append(energy)
        step *= 1.5
        if gain <= opts.convergence_tolerance * max(energy, 1.0):
            break
    return pts, w, history


def _refine_support(pts, w, tau, opts):
    """Exact local solve on the clustered support.

    The kink of max(0, D) at the light-cone angle stalls gradient methods,
    so the clustered problem is restated smoothly with one epigraph
    variable per pair (t_ij >= 0, t_ij >= D(c_ij)) and solved by SLSQP.
    Returns the refined m-point configuration, or the input if the
    refinement does not lower the action.
    """
    cfg = SphereConfiguration(tau, pts, w)
    sup = support_clusters(cfg, opts.merge_tolerance)
    k = sup.size
    base = float(w @ lagrangian_matrix(pts, tau) @ w)
    if k < 2 or k > opts.refine_max_support:
        return pts, w
    t2 = tau * tau
    iu, ju = np.triu_indices(k, 1)
    npair = iu.size
    rows = np.arange(npair)

    def split(z):
        return z[:3 * k].reshape(k, 3), z[3 * k:4 * k], z[4 * k:]

    def fun(z):
        _, ww, tt = split(z)
        return 8 * t2 * ww @ ww + 2 * np.sum(ww[iu] * ww[ju] * tt)

    def grad(z):
        _, ww, tt = split(z)
        gw = 16 * t2 * ww
        np.add.at(gw, iu, 2 * ww[ju] * tt)
        np.add.at(gw, ju, 2 * ww[iu] * tt)
        return np.concatenate([np.zeros(3 * k), gw, 2 * ww[iu] * ww[ju]])

    def ineq(z):
        xx, _, tt = split(z)
        c = np.sum(xx[iu] * xx[ju], axis=1)
        return tt - 2 * t2 * (1 + c) * (2 - t2 * (1 - c))

    def ineq_jac(z):
        xx, _, _ = split(z)
        dd = d_derivative(np.sum(xx[iu] * xx[ju], axis=1), tau)
        jac = np.zeros((npair, z.size))
        for a in range(3):
            jac[rows, 3 * iu + a] = -dd * xx[ju, a]
            jac[rows, 3 * ju + a] = -dd * xx[iu, a]
        jac[rows, 4 * k + rows] = 1.0
        return jac

    def eq(z):
        xx, ww, _ = split(z)
        return np.append(np.sum(xx * xx, axis=1) - 1, ww.sum() - 1)

    def eq_jac(z):
        xx, _, _ = split(z)
        jac = np.zeros((k + 1, z.size))
        for i in range(k):
            jac[i, 3 * i:3 * i + 3] = 2 * xx[i]
        jac[k, 3 * k:4 * k] = 1.0
        return jac

    c0 = np.clip(sup.points @ sup.points.T, -1, 1)
    z0 = np.concatenate([sup.points.ravel(), sup.weights,
                         np.maximum(0.0, d_function(c0, tau))[iu, ju]])
    res = _scipy_minimize(
        fun, z0, jac=grad, method="SLSQP",
        bounds=[(None, None)] * (3 * k) + [(0, 1)] * k + [(0, None)] * npair,
        constraints=[{"type": "ineq", "fun": ineq, "jac": ineq_jac},
                     {"type": "eq", "fun": eq, "jac": eq_jac}],
        options={"maxiter": 1000, "ftol": 1e-15})
    xx, ww, _ = split(res.x)
    if not np.all(np.isfinite(res.x)):
        return pts, w
    xx = xx / np.linalg.norm(xx, axis=1)[:, None]
    ww = np.maximum(ww, 0.0)
    ww = ww / ww.sum()
    # the unused m - k slots keep zero weight at their old positions
    new_pts = np.array(pts, dtype=float)
    new_w = np.zeros(w.size)
    order = np.argsort(-w, kind="stable")
    new_pts[order[:k]] = xx
    new_w[order[:k]] = ww
    if float(new_w @ lagrangian_matrix(new_pts, tau) @ new_w) < base:
        return new_pts, new_w
    return pts, w


def _canonical_key(pts, w):
    order = np.lexsort(np.round(pts, 9).T[::-1])
    return tuple(np.round(np.concatenate([pts[order].ravel(), w[order]]), 9))


def _replica(args):
    index, seed_seq, tau, m, start_pts, start_w, opts = args
    rng = np.random.default_rng(seed_seq)
    if start_pts is None:
        pts = rng.normal(size=(m, 3))
        pts /= np.linalg.norm(pts, axis=1)[:, None]
        w = np.full(m, 1.0 / m)
    else:
        pts, w = np.array(start_pts, dtype=float), np.array(start_w, dtype=float)
    (e0, bp, bw), hist = _anneal(pts, w, tau, opts, rng)
    if m > 1:
        bp, bw, phist = _polish(bp, bw, tau, opts)
        bp, bw = _refine_support(bp, bw, tau, opts)
        bp, bw, more = _polish(bp, bw, tau, opts)
        phist += more
    else:
        phist = []
    final = float(bw @ lagrangian_matrix(bp, tau) @ bw)
    history = np.minimum.accumulate(np.array(list(hist) + list(phist) + [final]))
    return index, final, bp, bw, history


def _worker_count(opts, restarts):
    if opts.workers is not None:
        cap = opts.workers
    else:
        env = os.environ.get("CFS_LAB_THREADS")
        try:
            cap = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise InvalidOptions("CFS_LAB_THREADS must be an integer") from None
        if cap < 1:
            raise InvalidOptions("CFS_LAB_THREADS must be positive")
    return max(1, min(cap, restarts))


def minimize(initial, options=None):
    """Global search for a minimizing weighted counting measure.

    ``initial`` is a SphereConfiguration (every replica starts there) or a
    RandomStart (uniform random points, equal weights).  Replica seeds are
    spawned from ``master_seed`` by index, so the outcome does not depend on
    how replicas are scheduled.
    """
    opts = options or MinimizeOptions()
    opts.validate()
    if isinstance(initial, SphereConfiguration):
        tau, m = initial.tau, initial.m
        start_pts, start_w = initial.points, initial.weights
    elif isinstance(initial, RandomStart):
        tau, m = float(initial.tau), initial.m
        start_pts = start_w = None
        if int(m) != m or m < 1:
            raise InvalidOptions("m must be a positive integer")
        _check_tau_opts(tau)
    else:
        raise InvalidOptions("initial must be a SphereConfiguration or RandomStart")
    seeds = np.random.SeedSequence(opts.master_seed).spawn(opts.restarts)
    jobs = [(k, seeds[k], tau, int(m), start_pts, start_w, opts) for k in range(opts.restarts)]
    workers = _worker_count(opts, opts.restarts)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replica, jobs))
    else:
        results = [_replica(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    best = min(results, key=lambda r: (r[1], _canonical_key(r[2], r[3])))
    index, value, bp, bw, history = best
    if start_pts is not None:
        start_val = sphere_action(initial)
        if start_val < value:
            index, value, bp, bw = -1, start_val, np.array(start_pts), np.array(start_w)
            history = np.append(history, value)
    bw = np.maximum(bw, 0.0)
    bw = bw / bw.sum()
    bp = bp / np.linalg.norm(bp, axis=1)[:, None]
    config = sphere_config(tau, bp, bw, normalize=False)
    value = sphere_action(config)
    history = np.maximum(np.minimum.accumulate(history), value)
    if history[-1] != value:
        history = np.append(history, value)
    return MinimizationResult(
        best=config, action=value,
        support=support_clusters(config, opts.merge_tolerance),
        history=history,
        restart_actions=np.array([r[1] for r in results]),
        best_restart=index, constraint_T=sphere_constraint(config))


def _check_tau_opts(tau):
    if not np.isfinite(tau) or tau < 1.0:
        raise InvalidOptions("tau must be >= 1, got %r" % (tau,))


@dataclass(frozen=True)
class SweepRow:
    tau: float
    m: int
    seed: int
    min_action: float
    support_size: int
    constraint_T: float


def sweep(tau_grid, m_grid, options=None):
    """Minimal action and support size on every (tau, m) grid point."""
    opts = options or MinimizeOptions()
    opts.validate()
    rows = []
    for tau in sorted(float(t) for t in tau_grid):
        _check_tau_opts(tau)
        for m in sorted(int(k) for k in m_grid):
            res = minimize(RandomStart(tau, m), opts)
            rows.append(SweepRow(tau, m, opts.master_seed, res.action,
                                 res.support.size, res.constraint_T))
    return rows

"""Finite-dimensional causal fermion systems.

A point is a Hermitian operator on C^f of finite rank with at most ``n``
positive and at most ``n`` negative eigenvalues.  A system is a weighted
counting measure on such points.  This module classifies point pairs by the
spectrum of their product, evaluates the Lagrangian, action and constraint,
builds spin spaces and kernels, and converts between the particle picture
(a list of operators) and the space-time picture (a Krein space with a
fermionic operator and space-time projectors).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _linalg
from .errors import (DegenerateRange, DimensionMismatch, NotGramUnitary,
                     NotHermitian, SignatureViolation, UsageError,
                     ZeroSpinSpace)

__all__ = [
    "CausalFermionPoint", "DiscreteUniversalMeasure", "ClosedChainSpectrum",
    "CausalClass", "SpinSpaceBasis", "KernelMatrix", "KernelSystem",
    "DiscreteSpacetimeRep", "ActionReport", "ProjectorReport",
    "validate_point", "make_measure", "product_spectrum", "classify",
    "lagrangian", "action", "spin_space", "kernel", "closed_chain",
    "kernel_system", "gauge_transform", "action_from_kernels",
    "check_projector_constraint", "particle_to_spacetime",
    "spacetime_to_particle", "spacetime_invariants",
]

log = logging.getLogger(__name__)

HERMITIAN_RTOL = 1e-12
CLASSIFY_RTOL = 1e-8
# product eigenvalues below this fraction of |x| |y| are exact zeros
SPECTRUM_SNAP = 1e-12


class CausalClass(str, Enum):
    TIMELIKE = "Timelike"
    SPACELIKE = "Spacelike"
    LIGHTLIKE = "Lightlike"


@dataclass(frozen=True, eq=False)
class CausalFermionPoint:
    entries: np.ndarray
    spin_dim: int
    # nonzero eigenpairs, cached at validation
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def particle_dim(self):
        return self.entries.shape[0]

    @property
    def rank(self):
        return self.eigenvalues.size

    @property
    def norm(self):
        return float(np.max(np.abs(self.eigenvalues))) if self.rank else 0.0


def validate_point(matrix, spin_dim):
    """Check Hermiticity and the signature bound; cache the eigenpairs."""
    if int(spin_dim) != spin_dim or spin_dim < 1:
        raise UsageError("spin_dim must be a positive integer")
    try:
        a = _linalg.as_complex_square(matrix)
    except ValueError as exc:
        raise DimensionMismatch(str(exc)) from None
    defect, scale = _linalg.hermitian_defect(a)
    if defect > HERMITIAN_RTOL * scale:
        raise NotHermitian("max |X - X^+| = %.3e exceeds %.1e * %.3e"
                           % (defect, HERMITIAN_RTOL, scale))
    a = _linalg.herm(a)
    w, v = np.linalg.eigh(a)
    cut = _linalg.RANK_RTOL * (np.max(np.abs(w)) if w.size else 0.0)
    keep = np.abs(w) > cut
    w, v = w[keep], v[:, keep]
    npos, nneg = int(np.sum(w > 0)), int(np.sum(w < 0))
    if npos > spin_dim or nneg > spin_dim:
        raise SignatureViolation("%d positive / %d negative eigenvalues, spin dimension %d"
                                 % (npos, nneg, spin_dim))
    a.setflags(write=False)
    return CausalFermionPoint(a, int(spin_dim), w, v)


@dataclass(frozen=True, eq=False)
class DiscreteUniversalMeasure:
    points: tuple
    weights: np.ndarray
    normalized: bool = False

    @property
    def spin_dim(self):
        return self.points[0].spin_dim if self.points else None

    @property
    def particle_dim(self):
        return self.points[0].particle_dim if self.points else None

    def __len__(self):
        return len(self.points)


def make_measure(points, weights=None, normalized=False, spin_dim=None):
    """Build a measure from points (validated or raw matrices) and weights."""
    pts = []
    for p in points:
        if not isinstance(p, CausalFermionPoint):
            if spin_dim is None:
                raise UsageError("spin_dim required for raw matrices")
            p = validate_point(p, spin_dim)
        pts.append(p)
    if weights is None:
        weights = np.full(len(pts), 1.0 / len(pts) if normalized and pts else 1.0)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != len(pts):
        raise DimensionMismatch("%d weights for %d points" % (w.size, len(pts)))
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise UsageError("weights must be finite and non-negative")
    if normalized and pts and abs(w.sum() - 1.0) > 1e-12:
        raise UsageError("normalized measure with total weight %.17g" % w.sum())
    if pts:
        f, n = pts[0].particle_dim, pts[0].spin_dim
        if any(p.particle_dim != f or p.spin_dim != n for p in pts):
            raise DimensionMismatch("points differ in particle or spin dimension")
    w.setflags(write=False)
    return DiscreteUniversalMeasure(tuple(pts), w, bool(normalized))


@dataclass(frozen=True)
class ClosedChainSpectrum:
    eigenvalues: np.ndarray

    @property
    def spectral_weight(self):
        return float(np.sum(np.abs(self.eigenvalues)))

    def __len__(self):
        return self.eigenvalues.size


def _check_pair(x, y):
    if x.particle_dim != y.particle_dim or x.spin_dim != y.spin_dim:
        raise DimensionMismatch("points live in different spaces")


def _canonical_spectrum(ev, length, scale):
    ev = np.asarray(ev, dtype=complex)
    snap = SPECTRUM_SNAP * scale
    ev = np.where(np.abs(ev) <= snap, 0.0, ev)
    ev.real[np.abs(ev.real) <= snap] = 0.0
    ev.imag[np.abs(ev.imag) <= snap] = 0.0
    if ev.size > length:
        # drop the smallest in modulus; they are numerical zeros
        ev = ev[np.argsort(-np.abs(ev), kind="stable")[:length]]
    out = np.zeros(length, dtype=complex)
    out[:ev.size] = ev
    order = np.lexsort((out.imag, out.real))
    return out[order]


def _spectrum_from_small(m, spin_dim, scale):
    ev = np.linalg.eigvals(m) if m.size else np.zeros(0, dtype=complex)
    return ClosedChainSpectrum(_canonical_spectrum(ev, 2 * spin_dim, scale))


def product_spectrum(x, y):
    """The 2n non-trivial eigenvalues of xy, padded with zeros.

    With x = V_x L_x V_x^+, the nonzero spectrum of xy equals that of the
    rank(x)-square matrix L_x (V_x^+ V_y) L_y (V_y^+ V_x).
    """
    _check_pair(x, y)
    c = x.eigenvectors.conj().T @ y.eigenvectors
    m = (x.eigenvalues[:, None] * c) @ (y.eigenvalues[:, None] * c.conj().T)
    return _spectrum_from_small(m, x.spin_dim, x.norm * y.norm)


def classify(spec, tol_rel=CLASSIFY_RTOL):
    if tol_rel <= 0:
        raise UsageError("tol_rel must be positive")
    ev = np.asarray(getattr(spec, "eigenvalues", spec), dtype=complex)
    norm = float(np.max(np.abs(ev))) if ev.size else 0.0
    if norm == 0.0:
        return CausalClass.TIMELIKE
    real = np.abs(ev.imag) <= tol_rel * norm
    if np.all(real):
        return CausalClass.TIMELIKE
    if not np.any(real):
        mod = np.abs(ev)
        if mod.max() - mod.min() <= tol_rel * norm:
            return CausalClass.SPACELIKE
    return CausalClass.LIGHTLIKE


def _lagrangian_from_spectrum(spec, spin_dim):
    """Return (L, T-integrand, clamped flag)."""
    mod = np.abs(spec.eigenvalues)
    weight = float(np.sum(mod))
    if classify(spec) is CausalClass.SPACELIKE:
        return 0.0, weight ** 2, False
    value = float(np.sum(mod ** 2) - weight ** 2 / (2 * spin_dim))
    if value < 0.0:
        if value < -1e-10 * max(weight ** 2, 1e-300):
            log.warning("negative Lagrangian %.3e clamped to zero", value)
            return 0.0, weight ** 2, True
        value = 0.0
    return value, weight ** 2, False


def lagrangian(x, y):
    """|(xy)^2| - |xy|^2 / (2n), clamped at zero."""
    return _lagrangian_from_spectrum(product_spectrum(x, y), x.spin_dim)[0]


@dataclass(frozen=True)
class ActionReport:
    action_S: float
    constraint_T: float
    lagrangian_matrix: np.ndarray
    clamped_pairs: int = 0


def _assemble_action(weights, pair_values):
    m = weights.size
    lag = np.zeros((m, m))
    tee = np.zeros((m, m))
    clamped = 0
    for (i, j), (lv, tv, cl) in pair_values.items():
        lag[i, j] = lag[j, i] = lv
        tee[i, j] = tee[j, i] = tv
        clamped += cl * (1 if i == j else 2)
    s = float(weights @ lag @ weights) if m else 0.0
    t = float(weights @ tee @ weights) if m else 0.0
    return ActionReport(s, t, lag, clamped)


def action(measure):
    """S and T as double sums over ordered pairs, diagonal included."""
    pts = measure.points
    vals = {}
    for i in range(len(pts)):
        for j in range(i, len(pts)):
            vals[i, j] = _lagrangian_from_spectrum(product_spectrum(pts[i], pts[j]),
                                                   pts[i].spin_dim)
    return _assemble_action(np.asarray(measure.weights, dtype=float), vals)


@dataclass(frozen=True, eq=False)
class SpinSpaceBasis:
    base_point: CausalFermionPoint
    basis: np.ndarray
    gram: np.ndarray
    signature: tuple

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def local_operator(self):
        """x restricted to S_x in this basis (equals -gram)."""
        return -self.gram


def spin_space(x):
    """Orthonormal eigenbasis of image(x); the spin gram is then -diag(eig)."""
    gram = -np.diag(x.eigenvalues).astype(complex)
    return SpinSpaceBasis(x, x.eigenvectors, gram,
                          (int(np.sum(x.eigenvalues < 0)), int(np.sum(x.eigenvalues > 0))))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    source: SpinSpaceBasis
    target: SpinSpaceBasis
    entries: np.ndarray

    def adjoint(self):
        """The spin adjoint S_x -> S_y; equals kernel(y, x)."""
        return _linalg.gram_adjoint(self.entries, self.target.gram, self.source.gram)


def kernel(x, y, sx=None, sy=None):
    """P(x,y) = pi_x y restricted to S_y, in the spin-space eigenbases."""
    _check_pair(x, y)
    sx = spin_space(x) if sx is None else sx
    sy = spin_space(y) if sy is None else sy
    ent = (sx.basis.conj().T @ sy.basis) * y.eigenvalues[None, :]
    return KernelMatrix(sy, sx, ent)


def closed_chain(x, y):
    """A_xy = P(x,y) P(y,x) on S_x."""
    sx, sy = spin_space(x), spin_space(y)
    return kernel(x, y, sx, sy).entries @ kernel(y, x, sy, sx).entries


@dataclass(frozen=True, eq=False)
class KernelSystem:
    """Kernels between all pairs in local spin bases, plus grams and weights.

    This is the data that survives a local gauge transformation; everything
    physical (spectra, L, S, T) is computable from it.
    """
    grams: tuple
    kernels: dict
    weights: np.ndarray
    spin_dim: int

    def __len__(self):
        return len(self.grams)

    def chain(self, i, j):
        return self.kernels[i, j] @ self.kernels[j, i]

    def spectrum(self, i, j):
        a = self.chain(i, j)
        scale = float(np.linalg.norm(self.kernels[i, j], 2) * np.linalg.norm(self.kernels[j, i], 2))
        return _spectrum_from_small(a, self.spin_dim, scale)


def kernel_system(measure):
    pts = measure.points
    spaces = [spin_space(p) for p in pts]
    kern = {}
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            kern[i, j] = kernel(p, q, spaces[i], spaces[j]).entries
    return KernelSystem(tuple(s.gram for s in spaces), kern,
                        np.asarray(measure.weights, dtype=float), measure.spin_dim)


def gauge_transform(system, unitaries, tol=1e-10):
    """Apply P(x,y) -> U(x) P(x,y) U(y)^{-1} with U(x) in U(p,q) of S_x."""
    ks = kernel_system(system) if isinstance(system, DiscreteUniversalMeasure) else system
    if len(unitaries) != len(ks):
        raise DimensionMismatch("%d unitaries for %d points" % (len(unitaries), len(ks)))
    us = []
    for k, (u, g) in enumerate(zip(unitaries, ks.grams)):
        u = np.asarray(u, dtype=complex)
        if u.shape != g.shape:
            raise DimensionMismatch("unitary %d has shape %s, spin space %s"
                                    % (k, u.shape, g.shape))
        if g.size and _linalg.gram_unitarity_defect(u, g) > tol:
            raise NotGramUnitary("transformation %d does not preserve the spin gram" % k)
        us.append(u)
    inv = [np.linalg.inv(u) if u.size else u for u in us]
    kern = {(i, j): us[i] @ p @ inv[j] for (i, j), p in ks.kernels.items()}
    return KernelSystem(ks.grams, kern, ks.weights, ks.spin_dim)


def action_from_kernels(ks):
    """ActionReport computed from closed chains P(x,y)P(y,x) alone."""
    vals = {}
    for i in range(len(ks)):
        for j in range(i, len(ks)):
            vals[i, j] = _lagrangian_from_spectrum(ks.spectrum(i, j), ks.spin_dim)
    return _assemble_action(ks.weights, vals)


@dataclass(frozen=True, eq=False)
class DiscreteSpacetimeRep:
    krein_gram: np.ndarray
    projectors: tuple
    fermionic_operator: np.ndarray
    weights: np.ndarray = None

    @property
    def krein_dim(self):
        return self.krein_gram.shape[0]

    def point_weights(self):
        if self.weights is None:
            return np.ones(len(self.projectors))
        return np.asarray(self.weights, dtype=float)


def spacetime_invariants(rep):
    """Residuals of the projector algebra, symmetry (A) and positivity (B)."""
    g, p = rep.krein_gram, rep.fermionic_operator
    eye = np.eye(rep.krein_dim)
    proj_res = float(np.max(np.abs(sum(rep.projectors) - eye))) if rep.projectors else 1.0
    for a, ea in enumerate(rep.projectors):
        for b, eb in enumerate(rep.projectors):
            target = ea if a == b else 0.0
            proj_res = max(proj_res, float(np.max(np.abs(ea @ eb - target))))
    gp = g @ p
    scale = max(float(np.max(np.abs(gp))), 1e-300)
    sym = float(np.max(np.abs(gp - gp.conj().T))) / scale
    pos = float(np.min(np.linalg.eigvalsh(_linalg.herm(-gp)))) if gp.size else 0.0
    return {"projector_residual": proj_res, "symmetry_residual": sym,
            "positivity_min_eigenvalue": pos}


def particle_to_spacetime(measure):
    """Krein space = direct sum of spin spaces, weighted by the measure."""
    pts = measure.points
    spaces = [spin_space(p) for p in pts]
    for k, s in enumerate(spaces):
        if s.dim == 0:
            raise ZeroSpinSpace("point %d has a trivial spin space" % k)
    w = np.asarray(measure.weights, dtype=float)
    dims = [s.dim for s in spaces]
    off = np.concatenate([[0], np.cumsum(dims)])
    total = int(off[-1])
    gram = np.zeros((total, total), dtype=complex)
    pmat = np.zeros((total, total), dtype=complex)
    projs = []
    for i, si in enumerate(spaces):
        sl_i = slice(off[i], off[i + 1])
        gram[sl_i, sl_i] = w[i] * si.gram
        e = np.zeros((total, total))
        e[sl_i, sl_i] = np.eye(dims[i])
        projs.append(e)
        for j, sj in enumerate(spaces):
            pmat[sl_i, off[j]:off[j + 1]] = kernel(pts[i], pts[j], si, spaces[j]).entries * w[j]
    return DiscreteSpacetimeRep(gram, tuple(projs), pmat, w.copy())


def _canonical_phase(vecs, rtol=1e-12):
    out = vecs.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        nz = np.flatnonzero(np.abs(col) > rtol * np.max(np.abs(col)))
        if nz.size:
            c = col[nz[0]]
            out[:, k] = col * (abs(c) / c)
    return out


def spacetime_to_particle(rep, tol=1e-10):
    """Local correlation operators F(x) on the particle space range(P).

    The scalar product on range(P) is <P phi | P phi'> = <<phi | -P phi'>>.
    Orthonormalizing by the eigen-decomposition of -G P (descending
    eigenvalues, first nonzero component real positive) gives the basis
    e_k; then F(x)_kl = -<e_k | e_l>_x with the spin product at x recovered
    from the Krein product by dividing by the weight of x.
    """
    g, p = rep.krein_gram, rep.fermionic_operator
    h = _linalg.herm(-g @ p)
    mu, w = np.linalg.eigh(h)
    top = float(np.max(np.abs(mu))) if mu.size else 0.0
    keep = mu > tol * max(top, 1e-300) if top > 0 else np.zeros(mu.shape, bool)
    if not np.any(keep):
        raise DegenerateRange("fermionic operator has trivial range")
    order = np.argsort(-mu[keep], kind="stable")
    mu, w = mu[keep][order], _canonical_phase(w[:, keep][:, order])
    basis = (p @ w) / np.sqrt(mu)[None, :]
    ops = []
    for e, rho in zip(rep.projectors, rep.point_weights()):
        f = -(basis.conj().T @ g @ e @ basis) / rho
        ops.append(_linalg.herm(f))
    return ops


@dataclass(frozen=True)
class ProjectorReport:
    residual: float
    satisfied: bool
    projection_residual: float = None
    range_dim: int = None
    range_max_eigenvalue: float = None
    negative_definite: bool = None


def check_projector_constraint(measure, tol=1e-10, proj_tol=1e-8):
    """Residual of sum rho_i x_i = 1 and, if met, the projection property."""
    f = measure.particle_dim
    total = sum(w * p.entries for p, w in zip(measure.points, measure.weights))
    residual = float(np.linalg.norm(total - np.eye(f), 2))
    if residual > tol:
        return ProjectorReport(residual, False)
    rep = particle_to_spacetime(measure)
    pm, g = rep.fermionic_operator, rep.krein_gram
    scale = max(float(np.max(np.abs(pm))), 1e-300)
    proj_res = float(np.max(np.abs(pm @ pm - pm))) / scale
    u, sv, _ = np.linalg.svd(pm)
    r = int(np.sum(sv > 1e-10 * sv[0]))
    b = u[:, :r]
    ev = np.linalg.eigvalsh(_linalg.herm(b.conj().T @ g @ b))
    top = float(np.max(ev))
    return ProjectorReport(residual, True, proj_res, r, top,
                           bool(proj_res <= proj_tol and top < 0))

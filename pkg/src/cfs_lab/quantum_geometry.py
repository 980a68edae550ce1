"""Spin connection, metric connection and curvature on spin-dimension-2 systems.

All objects live on four-dimensional spin spaces carrying an indefinite
gram G of signature (2,2).  Operators are 4x4 matrices acting on
coordinate vectors; an operator a is *symmetric* when G a is Hermitian.

A ``GeometryContext`` supplies, for every point of a system, its spin gram,
the local operator x restricted to S_x, and the kernels P(x, y).  It can be
built from a finite measure (spin-space bases from the eigenvectors of each
point) or directly in spinor coordinates from the vacuum kernel.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import expm, subspace_angles

from . import _linalg
from . import operator_core as oc
from .errors import (
    DegenerateSpectrum,
    DimensionMismatch,
    NoConvergence,
    NotGenericallySeparated,
    NotProperlyTimelike,
    NotRegular,
    NotSpacelike,
    NotSpinConnectable,
    UsageError,
)

SPECTRUM_RTOL = 1e-10
CLUSTER_RTOL = 1e-6
COMMUTATOR_RANK_RTOL = 1e-8
VERIFY_TOL = 1e-8
QUARTER_GRID_TOL = 1e-6
# relative gap below which two eigenvalues of s v count as equal
DEGENERATE_GAP = 1e-9

# Dirac representation of the five-generator Clifford algebra in the
# frame where G = s = diag(1, 1, -1, -1)
_S0 = [
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]
_Z2 = np.zeros((2, 2), dtype=complex)
_I2 = np.eye(2, dtype=complex)
_G0 = np.block([[_I2, _Z2], [_Z2, -_I2]])
_FRAME = [_G0] + [np.block([[_Z2, s], [-s, _Z2]]) for s in _S0]
# i gamma^5 = -gamma^0 gamma^1 gamma^2 gamma^3: symmetric, squares to -1
_FRAME.append(-_FRAME[0] @ _FRAME[1] @ _FRAME[2] @ _FRAME[3])
_FRAME = np.array(_FRAME)


class TimeOrientation(str, Enum):
    FUTURE = "Future"
    PAST = "Past"


def inner(u, w):
    """<u, w> = tr(u w) / 4, the Clifford inner product."""
    return complex(np.trace(u @ w)) / 4.0


def _real_vec(a):
    a = np.asarray(a)
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def _symmetric_defect(a, gram):
    ga = gram @ a
    return float(np.max(np.abs(ga - ga.conj().T))) / max(float(np.max(np.abs(ga))), 1e-300)


def _check_spin_space(gram):
    g = np.asarray(gram, dtype=complex)
    if g.shape != (4, 4):
        raise NotRegular("spin space has dimension %d, need 4" % g.shape[0])
    return g


# sign operators ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SignOperator:
    matrix: np.ndarray
    gram: np.ndarray

    def defects(self):
        v, g = self.matrix, self.gram
        inv = float(np.max(np.abs(v @ v - np.eye(4))))
        sym = _symmetric_defect(v, g)
        pos = float(np.min(np.linalg.eigvalsh(_linalg.herm(g @ v))))
        return {"involution": inv, "symmetry": sym, "min_eigenvalue_G_v": pos}

    def is_valid(self, tol=1e-10):
        d = self.defects()
        return d["involution"] <= tol and d["symmetry"] <= tol and d["min_eigenvalue_G_v"] > 0


def _sign_from_subspaces(vpos, vneg, gram):
    basis = np.hstack([vpos, vneg])
    signs = np.concatenate([np.ones(vpos.shape[1]), -np.ones(vneg.shape[1])])
    mat = (basis * signs) @ np.linalg.inv(basis)
    return SignOperator(mat, gram)


def euclidean_sign_operator(local_op, gram):
    """s with eigenspaces +-1 equal to the positive/negative spectral
    subspaces of (-x) on S_x."""
    g = _check_spin_space(gram)
    x = np.asarray(local_op, dtype=complex)
    w, vecs = np.linalg.eig(-x)
    scale = float(np.max(np.abs(w)))
    if scale == 0 or np.any(np.abs(w) <= SPECTRUM_RTOL * scale):
        raise DegenerateSpectrum("(-x) has an eigenvalue too close to zero", eigenvalues=_cl(w))
    if np.any(np.abs(w.imag) > 1e-8 * scale):
        raise DegenerateSpectrum("(-x) has non-real spectrum on S_x", eigenvalues=_cl(w))
    pos = w.real > 0
    return _sign_from_subspaces(vecs[:, pos], vecs[:, ~pos], g)


def euclidean_sign(x, spin):
    """Euclidean sign operator of a point in the eigenbasis coordinates of
    its spin space (``spin`` from operator_core.spin_space)."""
    if spin.dim != 4:
        raise NotRegular("spin space has dimension %d, need 4" % spin.dim)
    return euclidean_sign_operator(spin.local_operator, spin.gram)


def _cl(z):
    return [[float(np.real(v)), float(np.imag(v))] for v in np.ravel(z)]


def _timelike_decomposition(a, gram):
    """(I+, I-) bases of the definite eigenspaces of the closed chain, or a
    reason string if the pair is not properly timelike."""
    w, vecs = np.linalg.eig(a)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if scale == 0:
        return "zero closed chain"
    if np.any(np.abs(w.imag) > 1e-8 * scale):
        return "complex eigenvalues"
    if np.any(w.real <= SPECTRUM_RTOL * scale):
        return "spectrum not strictly positive"
    order = np.argsort(w.real)
    w, vecs = w.real[order], vecs[:, order]
    pos, neg = [], []
    start = 0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[k - 1] > CLUSTER_RTOL * scale:
            block = vecs[:, start:k]
            q, _ = np.linalg.qr(block)
            h = np.linalg.eigvalsh(_linalg.herm(q.conj().T @ gram @ q))
            tol = 1e-8 * float(np.max(np.abs(h)))
            if np.all(h > tol):
                pos.append(block)
            elif np.all(h < -tol):
                neg.append(block)
            else:
                return "indefinite eigenspace"
            start = k
    if not pos or not neg:
        return "eigenspaces of one sign only"
    return np.hstack(pos), np.hstack(neg)


def properly_timelike_chain(a, gram):
    return not isinstance(_timelike_decomposition(np.asarray(a, dtype=complex), gram), str)


def directional_sign_operator(a, gram):
    """v with eigenspaces +-1 equal to the definite subspaces I+- of A."""
    g = _check_spin_space(gram)
    dec = _timelike_decomposition(np.asarray(a, dtype=complex), g)
    if isinstance(dec, str):
        raise NotProperlyTimelike("closed chain is not properly timelike: " + dec)
    return _sign_from_subspaces(dec[0], dec[1], g)


def commutator_rank(v, w):
    c = v.matrix @ w.matrix - w.matrix @ v.matrix
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > COMMUTATOR_RANK_RTOL * sv[0]))


def generically_separated(v, w):
    return commutator_rank(v, w) == 4


# Clifford subspaces ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CliffordSubspace:
    """Five symmetric operators spanning K; ``basis[0]`` is the sign operator
    the subspace was built around and the basis is orthonormal for <.,.>
    with gram diag(1, -1, -1, -1, -1)."""

    basis: np.ndarray
    gram: np.ndarray  # 5x5 matrix of <e_a, e_b>
    spin_gram: np.ndarray = field(repr=False, default=None)

    def defects(self):
        worst = 0.0
        for a in range(5):
            for b in range(5):
                ac = 0.5 * (self.basis[a] @ self.basis[b] + self.basis[b] @ self.basis[a])
                worst = max(worst, float(np.max(np.abs(ac - self.gram[a, b] * np.eye(4)))))
        sym = max(_symmetric_defect(e, self.spin_gram) for e in self.basis) if self.spin_gram is not None else 0.0
        ev = np.linalg.eigvalsh(self.gram)
        return {"anticommutator": worst, "symmetry": sym,
                "signature": (int(np.sum(ev > 1e-10)), int(np.sum(ev < -1e-10)))}

    def conjugate(self, u, u_inv=None):
        u_inv = np.linalg.inv(u) if u_inv is None else u_inv
        return CliffordSubspace(np.array([u @ e @ u_inv for e in self.basis]), self.gram, self.spin_gram)

    def coordinates(self, a):
        """Real coordinates of ``a`` in the basis and the relative residual."""
        m = np.stack([_real_vec(e) for e in self.basis], axis=1)
        t = _real_vec(a)
        c, *_ = np.linalg.lstsq(m, t, rcond=None)
        res = float(np.linalg.norm(m @ c - t) / max(np.linalg.norm(t), 1e-300))
        return c, res

    def contains(self, a, tol=VERIFY_TOL):
        return self.coordinates(a)[1] <= tol


def clifford_subspace(elements, spin_gram=None, tol=1e-10):
    """Validate five operators as a Clifford subspace."""
    e = np.asarray(elements, dtype=complex)
    if e.shape != (5, 4, 4):
        raise DimensionMismatch("a Clifford subspace needs five 4x4 operators")
    gram = np.array([[inner(a, b).real for b in e] for a in e])
    k = CliffordSubspace(e, gram, spin_gram)
    d = k.defects()
    if d["anticommutator"] > tol or d["symmetry"] > tol or d["signature"] != (1, 4):
        raise UsageError("not a Clifford subspace", **{k2: str(v) for k2, v in d.items()})
    return k


def dirac_extension():
    """{gamma^0, gamma^1, gamma^2, gamma^3, i gamma^5} in the Dirac
    representation, the extension of s = gamma^0 in spinor coordinates."""
    return CliffordSubspace(_FRAME.copy(), np.diag([1.0, -1.0, -1.0, -1.0, -1.0]), _G0.copy())


def subspace_distance(k1, k2):
    """Largest principal angle between the real spans of two subspaces."""
    a = np.stack([_real_vec(e) for e in k1.basis], axis=1)
    b = np.stack([_real_vec(e) for e in k2.basis], axis=1)
    return float(np.max(subspace_angles(a, b)))


def adapted_frame(sign):
    """Basis B with B^dagger G B = diag(1,1,-1,-1) and B^{-1} s B = diag(1,1,-1,-1)."""
    s, g = sign.matrix, sign.gram
    cols = []
    for eig in (1.0, -1.0):
        proj = 0.5 * (np.eye(4) + eig * s)
        u, sv, _ = np.linalg.svd(proj)
        v = u[:, :2]
        m = _linalg.herm(v.conj().T @ g @ v) * eig
        w, q = np.linalg.eigh(m)
        if np.any(w <= 0):
            raise DegenerateSpectrum("sign operator eigenspace is not definite")
        cols.append(v @ q @ np.diag(1.0 / np.sqrt(w)) @ q.conj().T)
    return np.hstack(cols)


def canonical_extension(sign):
    """The Clifford extension of s obtained from the Dirac frame adapted to s."""
    b = adapted_frame(sign)
    b_inv = np.linalg.inv(b)
    basis = np.array([b @ f @ b_inv for f in _FRAME])
    basis[0] = sign.matrix
    gram = np.diag([1.0, -1.0, -1.0, -1.0, -1.0])
    return CliffordSubspace(basis, gram, sign.gram)


def reframe(k, sign):
    """Orthonormal basis of K with ``sign`` first (sign must lie in K)."""
    s = sign.matrix
    c, res = k.coordinates(s)
    if res > VERIFY_TOL:
        raise NoConvergence("sign operator is not in the subspace", residual=res)
    spatial = []
    for e in k.basis:
        e = e - inner(e, s).real * s
        for f in spatial:
            e = e + inner(e, f).real * f  # <f,f> = -1
        nrm = -inner(e, e).real
        if nrm > 1e-8:
            spatial.append(e / np.sqrt(nrm))
        if len(spatial) == 4:
            break
    if len(spatial) != 4:
        raise NoConvergence("could not build a spatial frame")
    return CliffordSubspace(np.array([s] + spatial), np.diag([1.0, -1.0, -1.0, -1.0, -1.0]), k.spin_gram)


def rotate(k, theta):
    """e^{i theta s} K e^{-i theta s} for the sign operator s = basis[0]."""
    s = k.basis[0]
    u = np.cos(theta) * np.eye(4) + 1j * np.sin(theta) * s
    u_inv = np.cos(theta) * np.eye(4) - 1j * np.sin(theta) * s
    return k.conjugate(u, u_inv)


def orbit_angle(k, targets):
    """theta in [0, pi/2) with targets in e^{i theta s} K e^{-i theta s}.

    Every element anticommuting with s is a unique real combination of the
    spatial frame e_j and of i s e_j; conjugation turns e_j into
    cos(2 theta) e_j + sin(2 theta) i s e_j.  So each target has coordinate
    vectors (a, b) proportional to (cos 2theta, sin 2theta).  Returns the
    angle and the ratio of the two eigenvalues of the 2x2 Gram matrix of
    the (a, b) pairs, which vanishes when the proportionality is exact.
    """
    s = k.basis[0]
    frame = list(k.basis[1:]) + [1j * s @ e for e in k.basis[1:]]
    m = np.stack([_real_vec(e) for e in frame], axis=1)
    gram2 = np.zeros((2, 2))
    total = 0.0
    for t in targets:
        t = t - inner(t, s).real * s
        c, *_ = np.linalg.lstsq(m, _real_vec(t), rcond=None)
        a, b = c[:4], c[4:]
        gram2 += np.array([[a @ a, a @ b], [a @ b, b @ b]])
        total += float(np.linalg.norm(m @ c - _real_vec(t)))
    w, q = np.linalg.eigh(gram2)
    if w[1] <= 0:
        raise NoConvergence("no spatial component to align")
    two_theta = np.arctan2(q[1, 1], q[0, 1])
    theta = float(np.mod(two_theta / 2.0, np.pi / 2))
    return theta, float(max(w[0], 0.0) / w[1])


# synchronization --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyncResult:
    generator: np.ndarray
    unitary: np.ndarray
    extension_s: CliffordSubspace  # K_x^{(y)}, contains s
    extension_v: CliffordSubspace  # K_xy = U K_x^{(y)} U^{-1}, contains v
    theta: float  # K_x^{(y)} = rotate(canonical_extension(s), theta)
    residuals: dict

    @property
    def unitary_inv(self):
        return np.linalg.inv(self.unitary)


def synchronize(s, v):
    """Synchronization of the sign operators s and v.

    Q = s v is similar to a positive Hermitian matrix with spectrum
    {la, 1/la, lb, 1/lb}; s swaps the eigenvectors of l and 1/l.  Any
    generator anticommuting with s and v commutes with Q, and the Clifford
    conditions leave the diagonal generator
        rho = i b (P_la - P_{1/la} - P_lb + P_{1/lb}),  b = ln(la/lb) / 4,
    for which w = U^{-1} v U lies in an extension of s containing rho.
    When la = lb ({s, v} is a multiple of 1) the generator is zero.
    """
    if not generically_separated(s, v):
        raise NotGenericallySeparated("commutator [s, v] has rank %d" % commutator_rank(s, v))
    g = s.gram
    q = s.matrix @ v.matrix
    lam, vecs = np.linalg.eig(q)
    if np.any(np.abs(lam.imag) > 1e-8 * np.max(np.abs(lam))) or np.any(lam.real <= 0):
        raise NoConvergence("s v does not have a positive spectrum", eigenvalues=_cl(lam))
    lam = lam.real
    big = np.argsort(-lam)[:2]
    la, lb = lam[big[0]], lam[big[1]]
    if lb <= 1.0:
        raise NotGenericallySeparated("s v has an eigenvalue equal to one")
    if (la - lb) <= DEGENERATE_GAP * la:
        rho = np.zeros((4, 4), dtype=complex)
    else:
        b = np.log(la / lb) / 4.0
        ua, ub = vecs[:, big[0]], vecs[:, big[1]]
        t = np.stack([ua, s.matrix @ ua, ub, s.matrix @ ub], axis=1)
        rho = (t * (1j * b * np.array([1, -1, -1, 1]))) @ np.linalg.inv(t)
    u = expm(1j * rho)
    u_inv = expm(-1j * rho)
    w = u_inv @ v.matrix @ u
    k0 = canonical_extension(s)
    targets = [w]
    if np.any(rho != 0):
        targets.append(rho)
    theta, misalign = orbit_angle(k0, targets)
    k_s = rotate(k0, theta)
    k_v = k_s.conjugate(u, u_inv)
    res = {
        "anticommutator_s": float(np.max(np.abs(s.matrix @ rho + rho @ s.matrix))),
        "anticommutator_v": float(np.max(np.abs(v.matrix @ rho + rho @ v.matrix))),
        "generator_symmetry": float(np.max(np.abs(g @ rho - (g @ rho).conj().T))),
        "generator_in_extensions": max(k_s.coordinates(rho)[1], k_v.coordinates(rho)[1])
        if np.any(rho != 0) else 0.0,
        "v_in_extension": k_v.coordinates(v.matrix)[1],
        "alignment": misalign,
    }
    if max(res.values()) > VERIFY_TOL * max(1.0, float(np.max(np.abs(rho)))):
        raise NoConvergence("synchronization conditions are not met", **{k: float(x) for k, x in res.items()})
    return SyncResult(rho, u, k_s, k_v, theta, res)


def clifford_extension(v, partner):
    """Distinguished extension of v singled out jointly with ``partner``."""
    return synchronize(v, partner).extension_s


# contexts ---------------------------------------------------------------------


class GeometryContext:
    """Spin grams, local operators and kernels of a system, with per-pair
    caches of the derived geometric objects."""

    def __init__(self, grams, local_ops, kernel_fn, labels=None):
        self.grams = [np.asarray(g, dtype=complex) for g in grams]
        self.local_ops = [np.asarray(x, dtype=complex) for x in local_ops]
        self._kernel_fn = kernel_fn
        self.labels = list(range(len(self.grams))) if labels is None else list(labels)
        self._kernels = {}
        self._cache = {}

    def __len__(self):
        return len(self.grams)

    def kernel(self, i, j):
        if (i, j) not in self._kernels:
            self._kernels[i, j] = np.asarray(self._kernel_fn(i, j), dtype=complex)
        return self._kernels[i, j]

    def chain(self, i, j):
        return self.kernel(i, j) @ self.kernel(j, i)

    def cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


def context_from_measure(measure):
    """Context in the eigenvector coordinates of each point's spin space."""
    pts = measure.points
    spaces = [oc.spin_space(p) for p in pts]
    for k, sp in enumerate(spaces):
        if sp.dim != 4:
            raise NotRegular("point %d has a spin space of dimension %d" % (k, sp.dim))

    def kern(i, j):
        return oc.kernel(pts[i], pts[j], spaces[i], spaces[j]).entries

    return GeometryContext([s.gram for s in spaces], [s.local_operator for s in spaces], kern)


def vacuum_context(events, params, basis=None):
    """Spinor-coordinate context of the regularized vacuum: gram gamma^0,
    x = P^eps(0) on S_x and P(x, y) = P^eps(y - x)."""
    from . import dirac_minkowski as dm

    b = dm._basis(basis)
    ev = [dm.four_vector(e) for e in events]
    local = dm.vacuum_kernel(np.zeros(4), params, b)

    def kern(i, j):
        return dm.vacuum_kernel(ev[j] - ev[i], params, b)

    return GeometryContext([b.gram] * len(ev), [local] * len(ev), kern, labels=[e.tolist() for e in ev])


# pairwise objects -----------------------------------------------------------------


def sign_s(ctx, i):
    return ctx.cached(("s", i), lambda: euclidean_sign_operator(ctx.local_ops[i], ctx.grams[i]))


def properly_timelike(ctx, i, j):
    for a, b in ((i, j), (j, i)):
        if isinstance(_timelike_decomposition(ctx.chain(a, b), ctx.grams[a]), str):
            return False
    return True


def sign_v(ctx, i, j):
    return ctx.cached(("v", i, j), lambda: directional_sign_operator(ctx.chain(i, j), ctx.grams[i]))


def sync(ctx, i, j):
    def run():
        try:
            return synchronize(sign_s(ctx, i), sign_v(ctx, i, j))
        except NotGenericallySeparated as exc:
            raise NotSpinConnectable(str(exc), reason="NotGenericallySeparated", pair=[i, j]) from exc
    return ctx.cached(("sync", i, j), run)


@dataclass(frozen=True, eq=False)
class SpinConnectionMap:
    matrix: np.ndarray  # D_{x,y} : S_y -> S_x
    phase: float
    residuals: dict = field(default_factory=dict)


def _unitary_phase(v, phi):
    return np.cos(phi) * np.eye(4) + 1j * np.sin(phi) * v


def _pre_connection(ctx, i, j):
    """(A^{-1/2} P(x,y), K_xy, K_yx, v_xy)."""
    for a, b in ((i, j), (j, i)):
        dec = _timelike_decomposition(ctx.chain(a, b), ctx.grams[a])
        if isinstance(dec, str):
            raise NotSpinConnectable("pair is not properly timelike: " + dec,
                                     reason="NotProperlyTimelike", pair=[i, j])
    d0 = _linalg.inv_sqrt_positive(ctx.chain(i, j)) @ ctx.kernel(i, j)
    return d0, sync(ctx, i, j).extension_v, sync(ctx, j, i).extension_v, sign_v(ctx, i, j)


def _admissible(theta):
    """Representative of theta mod pi/2 in (-pi/2, -pi/4) u (pi/4, pi/2)."""
    r = float(np.mod(theta, np.pi / 2))
    grid = min(abs(r), abs(r - np.pi / 4), abs(r - np.pi / 2))
    return (r if r > np.pi / 4 else r - np.pi / 2), grid


def _raw_connection(ctx, i, j):
    d0, k_xy, k_yx, v = _pre_connection(ctx, i, j)
    k1 = reframe(k_yx.conjugate(d0), v)
    k2 = reframe(k_xy, v)
    theta, misalign = orbit_angle(k1, list(k2.basis[1:]))
    phi, grid = _admissible(theta)
    if grid < QUARTER_GRID_TOL:
        raise NotSpinConnectable("phase %.3e is a multiple of pi/4" % phi,
                                 reason="PhaseOnQuarterGrid", pair=[i, j])
    return _unitary_phase(v.matrix, phi) @ d0, phi, misalign


def spin_connection(ctx, i, j):
    """Spin connection D_{x,y}: S_y -> S_x of the pair (x, y) = (i, j)."""
    def run():
        d, phi, misalign = _raw_connection(ctx, i, j)
        d_back, phi_back, _ = _raw_connection(ctx, j, i)
        v_xy, v_yx = sign_v(ctx, i, j).matrix, sign_v(ctx, j, i).matrix
        gx, gy = ctx.grams[i], ctx.grams[j]
        d_inv = np.linalg.inv(d)
        k_xy, k_yx = sync(ctx, i, j).extension_v, sync(ctx, j, i).extension_v
        scale = max(1.0, float(np.max(np.abs(d))) * float(np.max(np.abs(d_back))))
        res = {
            "inverse": float(np.max(np.abs(d @ d_back - np.eye(4)))) / scale,
            "adjoint": float(np.max(np.abs(_linalg.gram_adjoint(d_back, gy, gx) - d)))
            / max(float(np.max(np.abs(d))), 1e-300),
            "directional": float(np.max(np.abs(d @ v_yx @ d_inv - v_xy))),
            "extension": subspace_distance(k_yx.conjugate(d, d_inv), k_xy),
            "phase_antisymmetry": abs(float(np.angle(np.exp(1j * (phi + phi_back))))),
            "alignment": misalign,
        }
        return SpinConnectionMap(d, phi, res)
    return ctx.cached(("D", i, j), run)


def time_orientation(ctx, i, j):
    return TimeOrientation.FUTURE if spin_connection(ctx, i, j).phase > 0 else TimeOrientation.PAST


# metric connection ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transport:
    """u -> M u M^{-1}; maps the representative ``source`` onto ``target``."""

    conjugator: np.ndarray
    source: CliffordSubspace
    target: CliffordSubspace

    def apply(self, u):
        return self.conjugator @ u @ np.linalg.inv(self.conjugator)

    def matrix(self):
        """5x5 matrix in the orthonormal bases of source and target."""
        cols = []
        for e in self.source.basis:
            c, _ = self.target.coordinates(self.apply(e))
            cols.append(c)
        return np.array(cols).T

    def gram_defect(self):
        m = self.matrix()
        g_s, g_t = self.source.gram, self.target.gram
        return float(np.max(np.abs(m.T @ g_t @ m - g_s)))

    def then(self, other):
        """other after self; ``other.source`` must equal ``self.target``."""
        return Transport(other.conjugator @ self.conjugator, self.source, other.target)


def metric_connection(ctx, i, j):
    """nabla_{x,y}: T_y -> T_x from K_y^{(x)} onto K_x^{(y)}."""
    d = spin_connection(ctx, i, j).matrix
    u_xy, u_yx = sync(ctx, i, j), sync(ctx, j, i)
    m = u_xy.unitary_inv @ d @ u_yx.unitary
    return Transport(m, u_yx.extension_s, u_xy.extension_s)


def identification(ctx, i, frm, to):
    """V = e^{i theta s_x} with V K_x^{(frm)} V^{-1} = K_x^{(to)},
    theta in (-pi/4, pi/4]."""
    return identify(sync(ctx, i, frm).extension_s, sync(ctx, i, to).extension_s)


def metric_curvature(ctx, i, j, k):
    """R(x,y,z) = nabla_{x,y} nabla_{y,z} nabla_{z,x} on T_x, as a transport
    from K_x^{(z)} onto itself (representatives identified in between)."""
    for a, b in ((i, j), (j, k), (k, i)):
        _wrap_pair(ctx, a, b)
    t = metric_connection(ctx, k, i)
    t = t.then(identification(ctx, k, i, j))
    t = t.then(metric_connection(ctx, j, k))
    t = t.then(identification(ctx, j, k, i))
    t = t.then(metric_connection(ctx, i, j))
    return t.then(identification(ctx, i, j, k))


def _wrap_pair(ctx, a, b):
    try:
        spin_connection(ctx, a, b)
    except NotSpinConnectable as exc:
        raise NotSpinConnectable(str(exc), reason=exc.reason, pair=[a, b]) from exc


def splice_map(ctx, i, k, j):
    """U_x^{(z|y)} = U_xz V U_xy^{-1} with x = i, z = k, y = j."""
    v = identification(ctx, i, j, k).conjugator
    return sync(ctx, i, k).unitary @ v @ sync(ctx, i, j).unitary_inv


def directional_tangent(ctx, i, j):
    """y-hat_x = U_xy^{-1} v_xy U_xy, a vector of K_x^{(y)}."""
    sy = sync(ctx, i, j)
    spin_connection(ctx, i, j)
    vec = sy.unitary_inv @ sign_v(ctx, i, j).matrix @ sy.unitary
    return TangentVector(vec, sy.extension_s)


@dataclass(frozen=True, eq=False)
class TangentVector:
    matrix: np.ndarray
    representative: CliffordSubspace

    def coordinates(self):
        return self.representative.coordinates(self.matrix)

    def norm_sq(self):
        return inner(self.matrix, self.matrix).real


def transport_chain(ctx, points, mode="metric"):
    """Compose connections along points[0] -> points[1] -> ... -> points[-1].

    metric: Transport from K_{x0}^{(x1)} onto K_{xN}^{(x_{N-1})}.
    spin_unspliced: D_{xN,x_{N-1}} ... D_{x1,x0}.
    spin_spliced: the same product with splice maps between the links.
    """
    pts = list(points)
    if len(pts) < 2:
        raise UsageError("a chain needs at least two points")
    for a, b in zip(pts[:-1], pts[1:]):
        _wrap_pair(ctx, b, a)
    if mode == "metric":
        t = metric_connection(ctx, pts[1], pts[0])
        for n in range(1, len(pts) - 1):
            t = t.then(identification(ctx, pts[n], pts[n - 1], pts[n + 1]))
            t = t.then(metric_connection(ctx, pts[n + 1], pts[n]))
        return t
    if mode not in ("spin_spliced", "spin_unspliced"):
        raise UsageError("unknown transport mode %r" % mode)
    out = spin_connection(ctx, pts[1], pts[0]).matrix
    for n in range(1, len(pts) - 1):
        if mode == "spin_spliced":
            out = splice_map(ctx, pts[n], pts[n + 1], pts[n - 1]) @ out
        out = spin_connection(ctx, pts[n + 1], pts[n]).matrix @ out
    return out


def identify(k_from, k_to):
    """Transport V = e^{i theta s} (theta in (-pi/4, pi/4]) from one
    representative onto another containing the same sign operator s."""
    s = k_from.basis[0]
    if float(np.max(np.abs(k_to.basis[0] - s))) > VERIFY_TOL * max(1.0, float(np.max(np.abs(s)))):
        raise UsageError("representatives are built around different sign operators")
    theta, _ = orbit_angle(k_from, list(k_to.basis[1:]))
    theta = float(np.mod(theta + np.pi / 4, np.pi / 2) - np.pi / 4)
    if theta <= -np.pi / 4 + 1e-15:
        theta += np.pi / 2
    return Transport(_unitary_phase(s, theta), k_from, k_to)


# chirality -------------------------------------------------------------------


def pseudoscalar(u):
    """gamma^5 = -i u / sqrt(-u^2) for a spacelike tangent vector u."""
    nsq = inner(u.matrix, u.matrix).real
    if not nsq < 0:
        raise NotSpacelike("u is not spacelike", norm_sq=nsq)
    return -1j * u.matrix / np.sqrt(-nsq)


def reduce_tangent(u):
    """Orthogonal complement of a spacelike u in its representative, with
    gram (signature (1,3)) and gamma^5."""
    g5 = pseudoscalar(u)
    k = u.representative
    c, _ = k.coordinates(u.matrix)
    # <e_a, u> in the basis coordinates
    w = k.gram @ c
    _, _, vt = np.linalg.svd(w[None, :])
    comp = vt[1:]
    basis = np.array([np.tensordot(row, k.basis, axes=1) for row in comp])
    gram = np.array([[inner(a, b).real for b in basis] for a in basis])
    ev = np.linalg.eigvalsh(gram)
    return {"basis": basis, "gram": gram,
            "signature": (int(np.sum(ev > 1e-10)), int(np.sum(ev < -1e-10))),
            "gamma5": g5}


def in_representative(u, k):
    """The same tangent vector expressed in the representative ``k``."""
    if u.representative is k:
        return u
    return TangentVector(identify(u.representative, k).apply(u.matrix), k)


def verify_chiral_symmetry(ctx, u, pairs):
    """Largest violations of <u(x), y-hat_x> = 0 and of u(x) = nabla_{x,y} u(y)
    over ``pairs``; ``u`` maps point index -> spacelike TangentVector.

    Parallelism is checked modulo u -> s u s = -u, the sign ambiguity of
    the identification of representatives.
    """
    for i, ui in u.items():
        if not ui.norm_sq() < 0:
            raise NotSpacelike("u(%s) is not spacelike" % (i,), norm_sq=ui.norm_sq())
    orth, par = 0.0, 0.0
    for i, j in pairs:
        ui = in_representative(u[i], sync(ctx, i, j).extension_s).matrix
        uj = in_representative(u[j], sync(ctx, j, i).extension_s).matrix
        yhat = directional_tangent(ctx, i, j).matrix
        scale = np.sqrt(-inner(ui, ui).real)
        orth = max(orth, abs(inner(ui, yhat)) / scale)
        moved = metric_connection(ctx, i, j).apply(uj)
        err = min(float(np.max(np.abs(moved - ui))), float(np.max(np.abs(moved + ui))))
        par = max(par, err / float(np.max(np.abs(ui))))
    return {"orthogonality_violation": float(orth), "parallelism_violation": par}

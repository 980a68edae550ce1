"""Dirac matrices, the regularized Dirac-sea kernel and its closed chains.

Conventions: Minkowski metric diag(1,-1,-1,-1), Dirac representation,
spin scalar product psi-bar phi = psi^dagger gamma0 phi, four-vectors as
arrays (t, x1, x2, x3).  The kernel is

    P^eps(x, y) = int d^4k/(2pi)^4 (kslash + m) delta(k^2 - m^2)
                  Theta(-k0) exp(eps k0) exp(-i k (x - y)),

evaluated at xi = y - x.  After the angular integration it is

    P^eps(xi) = C [ m I0 - I1 gamma0 + i (I2 / r) xi_vec . gamma_vec ],
    C = 1 / (8 pi^3),

with radial integrals (omega = sqrt(k^2 + m^2), s = eps + i t, r = |xi_vec|)

    I0 = int k^2 j0(kr) e^{-omega s} / omega dk
    I1 = int k^2 j0(kr) e^{-omega s} dk
    I2 = int k^3 j1(kr) e^{-omega s} / omega dk.

The integrands oscillate on the real axis, so each exponential piece is
integrated along a ray rotated by +-pi/4 into the complex k-plane where it
decays like exp(-|t -+ r| k / sqrt 2) instead of exp(-eps k).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import operator_core as oc
from .errors import (
    BadFit,
    DimensionMismatch,
    InvalidOptions,
    NearLightCone,
    OffShell,
    QuadratureFailure,
    SingularGram,
)

PREFACTOR = 1.0 / (8.0 * np.pi ** 3)
METRIC = np.diag([1.0, -1.0, -1.0, -1.0])
LIGHT_CONE_GUARD = 0.1
FIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GammaBasis:
    gammas: np.ndarray  # shape (4, 4, 4), gammas[j] = gamma^j
    gram: np.ndarray  # spin gram, equal to gamma^0

    def slash(self, v):
        """v_j gamma^j with the index lowered by the Minkowski metric."""
        v = np.asarray(v)
        lowered = METRIC @ v
        return np.tensordot(lowered, self.gammas, axes=1)

    def anticommutator_defect(self):
        worst = 0.0
        for i in range(4):
            for j in range(4):
                g = self.gammas[i] @ self.gammas[j] + self.gammas[j] @ self.gammas[i]
                worst = max(worst, float(np.max(np.abs(g - 2 * METRIC[i, j] * np.eye(4)))))
        return worst

    def symmetry_defect(self):
        """max_j |G gamma^j - (G gamma^j)^dagger|: each gamma^j is gram-symmetric."""
        return max(
            float(np.max(np.abs(self.gram @ g - (self.gram @ g).conj().T))) for g in self.gammas
        )

    def gamma5(self):
        g = self.gammas
        return 1j * g[0] @ g[1] @ g[2] @ g[3]


def dirac_basis():
    """Standard Dirac representation, gamma^0 = diag(1, 1, -1, -1)."""
    sigma = [
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]], dtype=complex),
        np.array([[1, 0], [0, -1]], dtype=complex),
    ]
    zero = np.zeros((2, 2), dtype=complex)
    one = np.eye(2, dtype=complex)
    g0 = np.block([[one, zero], [zero, -one]])
    gs = [np.block([[zero, s], [-s, zero]]) for s in sigma]
    gammas = np.array([g0] + gs)
    return GammaBasis(gammas=gammas, gram=g0.copy())


_DEFAULT_BASIS = None


def _basis(basis):
    global _DEFAULT_BASIS
    if basis is not None:
        return basis
    if _DEFAULT_BASIS is None:
        _DEFAULT_BASIS = dirac_basis()
    return _DEFAULT_BASIS


def four_vector(v):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size != 4 or not np.all(np.isfinite(a)):
        raise DimensionMismatch("a four-vector needs 4 finite components", got=int(a.size))
    return a


def minkowski_sq(v):
    v = np.asarray(v)
    return v[0] * v[0] - v[1] * v[1] - v[2] * v[2] - v[3] * v[3]


@dataclass(frozen=True)
class RegularizationParams:
    mass: float = 1.0
    epsilon: float = 1e-3
    kmax_factor: float = 50.0
    rtol: float = 1e-10
    limit: int = 2000

    def __post_init__(self):
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise InvalidOptions("mass must be positive", mass=self.mass)
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise InvalidOptions("epsilon must be positive", epsilon=self.epsilon)
        if not (self.kmax_factor > 0 and self.rtol > 0 and self.limit > 0):
            raise InvalidOptions("quadrature settings must be positive")


def gamma_identity_check(q, mass, basis=None, tol=1e-10):
    """Relative residual of (qslash + m) g0 (qslash + m) + 2|q0| (qslash + m).

    q must lie on the lower mass shell q^2 = m^2, q0 < 0.
    """
    b = _basis(basis)
    q = four_vector(q)
    scale = max(1.0, q[0] * q[0])
    if abs(minkowski_sq(q) - mass * mass) > tol * scale or not q[0] < 0:
        raise OffShell("momentum is not on the lower mass shell", q=q.tolist(), mass=mass)
    a = b.slash(q) + mass * np.eye(4)
    r = a @ b.gammas[0] @ a + 2 * abs(q[0]) * a
    return float(np.linalg.norm(r) / np.linalg.norm(a))


def lower_shell_momentum(qvec, mass):
    qvec = np.asarray(qvec, dtype=float)
    return np.concatenate([[-np.sqrt(mass * mass + qvec @ qvec)], qvec])


# radial quadrature --------------------------------------------------------


def _ray_integral(f, theta, decay, params, what):
    """int_0^inf f(k) dk along k = rho e^{i theta}, truncated at kmax/decay."""
    direction = np.exp(1j * theta)
    upper = params.kmax_factor / decay

    def g(rho):
        return f(rho * direction) * direction

    parts, errs = [], []
    for take in (np.real, np.imag):
        v, e, *_ = integrate.quad(lambda rho: take(g(rho)), 0.0, upper, epsrel=params.rtol,
                                  epsabs=0.0, limit=params.limit, full_output=1)
        parts.append(v)
        errs.append(e)
    val = complex(parts[0], parts[1])
    err = float(np.hypot(*errs))
    if not np.isfinite(val) or err > 100 * params.rtol * abs(val) + 1e-300:
        raise QuadratureFailure("radial quadrature did not reach the tolerance",
                                integral=what, error_estimate=err)
    return val


def _radial_integrals(t, r, params):
    """(I0, I1, I2) for s = eps + i t; I2 is returned as I2 / r (finite at r=0)."""
    m, eps = params.mass, params.epsilon
    s = eps + 1j * t

    def omega(k):
        return np.sqrt(k * k + m * m)

    # when r * (typical k) is tiny the split pieces cancel badly; use the
    # spherical Bessel functions directly on a single ray instead
    width = max(abs(t), eps)
    if r < 1e-3 * width:
        theta = -np.sign(t) * np.pi / 4 if t != 0 else 0.0
        decay = eps * np.cos(theta) + abs(t) * abs(np.sin(theta)) - r * abs(np.sin(theta))
        decay = max(decay, eps * 0.5)

        def j0(z):
            return special.spherical_jn(0, z) if r > 0 else 1.0

        def j1_over_r(k):
            # j1(kr)/r -> k/3 as r -> 0
            if r == 0:
                return k / 3.0
            z = k * r
            return special.spherical_jn(1, z) / r

        f0 = lambda k: k * k * j0(k * r) * np.exp(-omega(k) * s) / omega(k)
        f1 = lambda k: k * k * j0(k * r) * np.exp(-omega(k) * s)
        f2 = lambda k: k ** 3 * j1_over_r(k) * np.exp(-omega(k) * s) / omega(k)
        return tuple(_ray_integral(f, theta, decay, params, name)
                     for f, name in ((f0, "I0"), (f1, "I1"), (f2, "I2/r")))

    # j0(kr) = (e^{ikr} - e^{-ikr}) / (2ikr)
    # j1(kr)/r = [(e^{ikr} - e^{-ikr}) / (2i k^2 r^2) - (e^{ikr} + e^{-ikr}) / (2kr)] / r
    out = [0j, 0j, 0j]
    for sign in (1.0, -1.0):
        delta = sign * r - t  # phase velocity of exp(-omega s + i sign k r)
        if abs(delta) < eps:
            theta = 0.0
        else:
            theta = np.sign(delta) * np.pi / 4
        decay = eps * np.cos(theta) + abs(delta) * abs(np.sin(theta))

        def e(k, sign=sign):
            return np.exp(-omega(k) * s + 1j * sign * k * r)

        f0 = lambda k, e=e, sign=sign: sign * k * e(k) / (2j * r * omega(k))
        f1 = lambda k, e=e, sign=sign: sign * k * e(k) / (2j * r)
        f2 = lambda k, e=e, sign=sign: (
            k * e(k) * (sign / (2j * r * r) - k / (2 * r)) / (r * omega(k))
        )
        for i, (f, name) in enumerate(((f0, "I0"), (f1, "I1"), (f2, "I2/r"))):
            out[i] += _ray_integral(f, theta, decay, params, name)
    return tuple(out)


def vacuum_kernel(xi, params, basis=None):
    """Regularized vacuum kernel P^eps at separation xi = y - x (4x4 matrix)."""
    b = _basis(basis)
    xi = four_vector(xi)
    t, vec = xi[0], xi[1:]
    r = float(np.linalg.norm(vec))
    i0, i1, i2r = _radial_integrals(float(t), r, params)
    spatial = np.tensordot(vec, b.gammas[1:], axes=1)
    return PREFACTOR * (params.mass * i0 * np.eye(4) - i1 * b.gammas[0] + 1j * i2r * spatial)


def spin_adjoint(a, basis=None):
    """Adjoint with respect to the spin scalar product: G^{-1} a^dagger G."""
    g = _basis(basis).gram
    return np.linalg.solve(g, a.conj().T @ g)


def conjugation_residual(xi, params, basis=None):
    p = vacuum_kernel(xi, params, basis)
    q = vacuum_kernel(-four_vector(xi), params, basis)
    return float(np.linalg.norm(q - spin_adjoint(p, basis)) / np.linalg.norm(p))


# closed chain ---------------------------------------------------------------


@dataclass(frozen=True)
class KernelClosedForm:
    alpha: complex
    beta: complex
    a: float
    b: float
    residual: float
    xi: np.ndarray = field(repr=False, default=None)
    epsilon: float = 0.0


def kernel_coefficients(p, xi, basis=None, epsilon=0.0, tol=FIT_TOLERANCE):
    """Fit P = alpha * xislash + beta.

    With ``epsilon`` > 0 the fit uses the complexified vector
    (xi0 - i eps, xi_vec), which is the exact Lorentz form of P^eps.  The
    fit residual is relative in Frobenius norm; above ``tol`` raises BadFit.
    a and b follow b = |alpha|^2 xi^2 + |beta|^2 with the real xi.
    """
    bs = _basis(basis)
    p = np.asarray(p, dtype=complex)
    xi = four_vector(xi)
    if not np.any(xi != 0):
        raise InvalidOptions("xi must be nonzero")
    vfit = xi.astype(complex)
    vfit[0] -= 1j * epsilon
    beta = np.trace(p) / 4.0
    # tr(gamma^j P) / 4 = alpha xi^j
    proj = np.array([np.trace(bs.gammas[j] @ p) / 4.0 for j in range(4)])
    mask = np.abs(vfit) > 0
    alpha = np.vdot(vfit[mask], proj[mask]) / np.vdot(vfit[mask], vfit[mask]).real
    model = alpha * bs.slash(vfit) + beta * np.eye(4)
    norm = np.linalg.norm(p)
    residual = float(np.linalg.norm(p - model) / norm) if norm > 0 else 0.0
    if residual > tol:
        raise BadFit("kernel is not of the form alpha xislash + beta", residual=residual)
    a = 2.0 * float((alpha * np.conj(beta)).real)
    b = float(abs(alpha) ** 2 * minkowski_sq(xi) + abs(beta) ** 2)
    return KernelClosedForm(complex(alpha), complex(beta), a, b, residual, xi, float(epsilon))


def chain_eigenvalues(cf, xi):
    """b +- sqrt(a^2 xi^2) (principal branch); each has multiplicity two."""
    root = np.sqrt(complex(cf.a * cf.a * minkowski_sq(four_vector(xi))))
    return complex(cf.b + root), complex(cf.b - root)


def regularized_chain_eigenvalues(cf, xi, epsilon):
    """Exact eigenvalues of A = P(xi) P(-xi) when P = alpha u-slash + beta
    with u = (xi0 - i eps, xi_vec).

    A = b' + V-slash + |alpha|^2 B with the real vector V = 2 Re(alpha
    beta-bar u) and the bivector B = -2 i eps (xi_vec . gamma) gamma0, so
    lambda = b' +- sqrt(V^2 - 4 |alpha|^4 eps^2 r^2).  Reduces to
    chain_eigenvalues as eps -> 0.
    """
    xi = four_vector(xi)
    t, r = xi[0], float(np.linalg.norm(xi[1:]))
    ab = cf.alpha * np.conj(cf.beta)
    b_prime = abs(cf.alpha) ** 2 * (t * t + epsilon * epsilon - r * r) + abs(cf.beta) ** 2
    v0 = 2.0 * (ab * (t - 1j * epsilon)).real
    v_sq = v0 * v0 - (2.0 * ab.real * r) ** 2
    root = np.sqrt(complex(v_sq - 4.0 * abs(cf.alpha) ** 4 * epsilon ** 2 * r * r))
    return complex(b_prime + root), complex(b_prime - root)


@dataclass(frozen=True)
class IntervalReport:
    causal_class: oc.CausalClass
    eigenvalues: np.ndarray  # direct eigenvalues of A, sorted
    fit: KernelClosedForm
    chain_eigenvalues: tuple
    regularized_chain_eigenvalues: tuple
    chain_mismatch: float  # direct vs b +- sqrt(a^2 xi^2), relative
    regularized_mismatch: float  # direct vs the exact regularized formula
    imag_ratio: float  # max |Im lambda| / |lambda|
    modulus_spread: float  # (max |lambda| - min |lambda|) / max |lambda|
    conjugation_residual: float

    def to_dict(self):
        return {
            "classification": self.causal_class.value,
            "alpha": _c(self.fit.alpha),
            "beta": _c(self.fit.beta),
            "a": self.fit.a,
            "b": self.fit.b,
            "fit_residual": self.fit.residual,
            "eigenvalues": [_c(z) for z in self.eigenvalues],
            "chain_eigenvalues": [_c(z) for z in self.chain_eigenvalues],
            "regularized_chain_eigenvalues": [_c(z) for z in self.regularized_chain_eigenvalues],
            "chain_mismatch": self.chain_mismatch,
            "regularized_mismatch": self.regularized_mismatch,
            "imag_ratio": self.imag_ratio,
            "modulus_spread": self.modulus_spread,
            "conjugation_residual": self.conjugation_residual,
        }


def _c(z):
    return [float(np.real(z)), float(np.imag(z))]


def _pair_mismatch(direct, pair):
    ref = np.repeat(np.asarray(pair), 2)
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(direct[:, None] - ref[None, :])
    i, j = linear_sum_assignment(cost)
    return float(np.max(cost[i, j]) / np.max(np.abs(direct)))


def classify_interval(xi, params, basis=None, tol_rel=1e-6):
    """Spectral classification of the separation xi via the vacuum closed chain."""
    xi = four_vector(xi)
    norm_sq = float(xi @ xi)
    if abs(minkowski_sq(xi)) < LIGHT_CONE_GUARD * norm_sq or norm_sq == 0:
        raise NearLightCone("separation too close to the light cone", xi=xi.tolist())
    p = vacuum_kernel(xi, params, basis)
    pm = vacuum_kernel(-xi, params, basis)
    conj = float(np.linalg.norm(pm - spin_adjoint(p, basis)) / np.linalg.norm(p))
    lam = np.linalg.eigvals(p @ pm)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    cls = oc.classify(lam, tol_rel=tol_rel)
    fit = kernel_coefficients(p, xi, basis, epsilon=params.epsilon)
    pair = chain_eigenvalues(fit, xi)
    reg = regularized_chain_eigenvalues(fit, xi, params.epsilon)
    mod = np.abs(lam)
    return IntervalReport(
        causal_class=cls,
        eigenvalues=lam,
        fit=fit,
        chain_eigenvalues=pair,
        regularized_chain_eigenvalues=reg,
        chain_mismatch=_pair_mismatch(lam, pair),
        regularized_mismatch=_pair_mismatch(lam, reg),
        imag_ratio=float(np.max(np.abs(lam.imag) / mod)),
        modulus_spread=float((mod.max() - mod.min()) / mod.max()),
        conjugation_residual=conj,
    )


# finite systems -----------------------------------------------------------


def lower_shell_grid(n_radial, n_polar, n_azimuth, params, k_max=None):
    """Product quadrature of d^3q over a ball: Gauss-Legendre in |q| on
    [0, k_max], Gauss-Legendre in cos(theta), uniform in phi.

    The grid is symmetric under q -> -q when n_azimuth is even.  Returns
    (momenta, weights) with momenta of shape (N, 3); the weights include
    the Jacobian q^2 but not the factor exp(-eps omega).
    """
    if min(n_radial, n_polar, n_azimuth) < 1:
        raise InvalidOptions("grid sizes must be positive")
    if k_max is None:
        k_max = 30.0 / params.epsilon
    x, wx = np.polynomial.legendre.leggauss(n_radial)
    k = 0.5 * k_max * (x + 1.0)
    wk = 0.5 * k_max * wx * k * k
    c, wc = np.polynomial.legendre.leggauss(n_polar)
    phi = 2 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    wphi = 2 * np.pi / n_azimuth
    sn = np.sqrt(1 - c * c)
    dirs = np.stack([
        (sn[:, None] * np.cos(phi)[None, :]).ravel(),
        (sn[:, None] * np.sin(phi)[None, :]).ravel(),
        np.repeat(c, n_azimuth),
    ], axis=1)
    wdir = np.repeat(wc, n_azimuth) * wphi
    momenta = (k[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (wk[:, None] * wdir[None, :]).ravel()
    return momenta, weights


def grid_kernel(xis, momenta, weights, params, basis=None):
    """Kernel sum_a w_a e^{-eps omega_a} (q_a-slash + m) / (2 omega_a (2pi)^4)
    exp(-i q_a . (x - y)) for each separation xi = y - x in ``xis``."""
    b = _basis(basis)
    m, eps = params.mass, params.epsilon
    momenta = np.atleast_2d(np.asarray(momenta, dtype=float))
    w = np.asarray(weights, dtype=float)
    om = np.sqrt(m * m + np.sum(momenta ** 2, axis=1))
    c2 = w * np.exp(-eps * om) / (2 * om * (2 * np.pi) ** 4)
    # q.(x-y) = -q.xi with q = (-omega, q_vec): q.xi = -omega t - q_vec . xi_vec
    out = []
    for xi in np.atleast_2d(xis):
        phase = np.exp(1j * (-om * xi[0] - momenta @ xi[1:]))
        coef = c2 * phase
        s0 = np.sum(coef)
        # qslash = q0 gamma0 - q_vec . gamma_vec
        mat = (m * s0) * np.eye(4) - np.sum(coef * om) * b.gammas[0]
        mat = mat - np.tensordot(coef @ momenta, b.gammas[1:], axes=1)
        out.append(mat)
    return np.array(out)


def _spacetime_system(events, kernel_fn, basis):
    b = _basis(basis)
    events = [four_vector(e) for e in events]
    k = len(events)
    if k == 0:
        raise InvalidOptions("at least one event is required")
    for i in range(k):
        for j in range(i):
            if np.allclose(events[i], events[j], rtol=0, atol=1e-14):
                raise InvalidOptions("events must be distinct", pair=[j, i])
    blocks = [[kernel_fn(events[j] - events[i]) for j in range(k)] for i in range(k)]
    grams = [b.gram for _ in range(k)]
    return events, blocks, grams


def _measure_from_blocks(blocks, grams):
    k = len(blocks)
    dim = 4 * k
    gram = np.zeros((dim, dim), dtype=complex)
    pmat = np.zeros((dim, dim), dtype=complex)
    projs = []
    for i in range(k):
        sl = slice(4 * i, 4 * i + 4)
        gram[sl, sl] = grams[i]
        e = np.zeros((dim, dim))
        e[sl, sl] = np.eye(4)
        projs.append(e)
        for j in range(k):
            pmat[sl, 4 * j:4 * j + 4] = blocks[i][j]
    rep = oc.DiscreteSpacetimeRep(gram, tuple(projs), pmat, np.ones(k))
    try:
        ops = oc.spacetime_to_particle(rep)
    except oc.DegenerateRange as exc:
        raise SingularGram("the discretized particle space is degenerate") from exc
    return oc.make_measure(ops, np.ones(k), spin_dim=2)


def build_finite_vacuum_system(events, momenta, weights, params, basis=None):
    """Causal fermion system of the vacuum sampled on a finite momentum grid.

    Every grid momentum q_a contributes the two lower-shell plane waves
    sqrt(w_a e^{-eps omega_a} / (2pi)^4) u e^{-i q_a x}, with u running over
    an orthonormal basis of the image of (q_a-slash + m); these states are
    orthonormal for the discretized probability integral.  F(x) represents
    -psi-bar phi (x) on the span of the states.  The operators are returned
    in an isometric compression of that span (the F(x) vanish on its
    orthogonal complement), which keeps the size at 4 x (number of events)
    regardless of the grid size.
    """
    momenta = np.asarray(momenta, dtype=float).reshape(-1, 3) if np.size(momenta) else np.zeros((0, 3))
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if momenta.shape[0] == 0 or weights.size == 0:
        raise SingularGram("the momentum grid is empty")
    if weights.size != momenta.shape[0]:
        raise DimensionMismatch("one weight per momentum is required")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise SingularGram("grid weights must be nonnegative and not all zero")
    b = _basis(basis)

    def kern(xi):
        return grid_kernel(xi[None, :], momenta, weights, params, b)[0]

    _, blocks, grams = _spacetime_system(events, kern, b)
    return _measure_from_blocks(blocks, grams)


def build_vacuum_system(events, params, basis=None):
    """Same construction with the continuum kernel (quadrature) in place of
    a momentum grid: the finite system whose kernel between the given events
    is exactly P^eps."""
    b = _basis(basis)
    _, blocks, grams = _spacetime_system(events, lambda xi: vacuum_kernel(xi, params, b), b)
    return _measure_from_blocks(blocks, grams)


def grid_convergence(events, momenta, weights, params, basis=None):
    """Largest relative deviation of the grid kernel from P^eps over event pairs."""
    b = _basis(basis)
    events = [four_vector(e) for e in events]
    worst = 0.0
    for i, x in enumerate(events):
        for y in events[i:]:
            exact = vacuum_kernel(y - x, params, b)
            approx = grid_kernel((y - x)[None, :], momenta, weights, params, b)[0]
            worst = max(worst, float(np.linalg.norm(approx - exact) / np.linalg.norm(exact)))
    return worst

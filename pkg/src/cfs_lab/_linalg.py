"""Small dense linear-algebra helpers shared by the modules."""

import numpy as np

# eigenvalues below this fraction of the largest singular value count as zero
RANK_RTOL = 1e-10


def as_complex_square(matrix):
    a = np.array(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix, got shape %s" % (a.shape,))
    return a


def hermitian_defect(a):
    """Max-norm of a - a^dagger and the scale it should be compared to."""
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    defect = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    return defect, (scale if scale > 0 else 1.0)


def herm(a):
    return 0.5 * (a + a.conj().T)


def gram_adjoint(a, gram_target, gram_source):
    """Adjoint of a : (S_src, G_src) -> (S_tgt, G_tgt) w.r.t. the two grams.

    Returns the map S_tgt -> S_src given by G_src^{-1} a^dagger G_tgt.
    """
    return np.linalg.solve(gram_source, a.conj().T @ gram_target)


def gram_unitarity_defect(u, gram):
    lhs = u.conj().T @ gram @ u
    return float(np.max(np.abs(lhs - gram))) / max(float(np.max(np.abs(gram))), 1e-300)


def inv_sqrt_positive(a, gram=None):
    """A^{-1/2} for a diagonalizable matrix with strictly positive spectrum.

    Uses the eigen-decomposition; the result is a function of ``a`` so it
    commutes with everything ``a`` commutes with.
    """
    w, v = np.linalg.eig(a)
    if np.any(np.abs(w.imag) > 1e-8 * np.max(np.abs(w))) or np.any(w.real <= 0):
        raise np.linalg.LinAlgError("spectrum is not strictly positive")
    return (v * (1.0 / np.sqrt(w.real))) @ np.linalg.inv(v)


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    r = idx[cond][-1]
    theta = css[cond][-1] / r
    return np.maximum(v - theta, 0.0)


def signature_counts(eigenvalues, atol):
    ev = np.asarray(eigenvalues).real
    return int(np.sum(ev > atol)), int(np.sum(ev < -atol))


def random_gram_unitary(gram, rng, scale=1.0):
    """exp(i G^{-1} H) with H random Hermitian is unitary w.r.t. gram."""
    from scipy.linalg import expm

    k = gram.shape[0]
    h = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
    h = scale * herm(h)
    return expm(1j * np.linalg.solve(gram, h))

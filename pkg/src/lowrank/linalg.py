"""Small dense linear-algebra helpers shared by every module.

Inner products conjugate the FIRST argument everywhere, for matrices and for
measurement vectors alike: ``<A, X> = tr(A^* X) = np.vdot(A, X)``.
"""

from __future__ import annotations

import numpy as np

# relative cut below which singular values count as zero
RANK_CUTOFF = 1e-12


def inner(a, b) -> complex:
    return np.vdot(a, b)


def nuclear_norm(X) -> float:
    return float(np.linalg.svd(X, compute_uv=False).sum())


def spectral_norm(X) -> float:
    if X.size == 0:
        return 0.0
    return float(np.linalg.svd(X, compute_uv=False)[0])


def compact_svd(X, rank: int | None = None, cutoff: float = RANK_CUTOFF):
    """Compact SVD ``X = U diag(s) V^*`` truncated at ``s > cutoff * s_max``.

    Returns ``(U, s, V)`` with ``V`` of shape ``(n2, r)`` (not ``V^*``).
    If ``rank`` is given, keep exactly that many leading triplets.
    """
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    if rank is None:
        rank = int(np.sum(s > cutoff * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :rank], s[:rank], Vh[:rank].conj().T


def random_isometry(n: int, r: int, rng, complex_valued: bool = False):
    """Haar-distributed ``n x r`` isometry (QR of a Gaussian matrix with sign fix)."""
    G = rng.standard_normal((n, r))
    if complex_valued:
        G = G + 1j * rng.standard_normal((n, r))
    Q, R = np.linalg.qr(G)
    d = np.diagonal(R)
    phase = d / np.where(np.abs(d) > 0, np.abs(d), 1.0)
    return Q * phase.conj()


def random_low_rank(n1: int, n2: int, r: int, rng, complex_valued: bool = False):
    """Rank-``r`` matrix with Haar singular vectors and unit Frobenius norm."""
    U = random_isometry(n1, r, rng, complex_valued)
    V = random_isometry(n2, r, rng, complex_valued)
    s = np.abs(rng.standard_normal(r)) + 0.5
    X = (U * s) @ V.conj().T
    return X / np.linalg.norm(X)

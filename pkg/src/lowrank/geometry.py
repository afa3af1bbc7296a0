"""Tangent spaces, coherence, descent cones and their Monte Carlo probes.

The nuclear-norm descent cone at ``X = U S V^*`` is handled through the
one-sided directional derivative

    f'(X; Z) = Re<UV^*, Z> + ||P_T^perp Z||_*

so ``Z`` belongs to the closed cone iff ``f'(X; Z) <= 0``.

Estimators of conic singular values and widths are one-sided by
construction: sampling cone directions can only over-estimate an infimum
(``min_conic_singular_value_estimate``) and under-estimate a supremum
(``gaussian_width_estimate``, ``small_ball_estimates.w_m``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import RANK_CUTOFF, compact_svd, inner, nuclear_norm, random_isometry, spectral_norm
from .rng import as_generator

MEMBERSHIP_TOL = 1e-8
EFFECTIVE_RANK_CONSTANT = 1.0 + math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class SvdFactors:
    U: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U, S, V = self.U, np.asarray(self.Sigma), self.V
        r = U.shape[1]
        if V.shape[1] != r or S.shape != (r,):
            raise ValueError("inconsistent factor shapes")
        if r > min(U.shape[0], V.shape[0]):
            raise ValueError("rank exceeds min(n1, n2)")
        eye = np.eye(r)
        if r and (np.abs(U.conj().T @ U - eye).max() > 1e-10 or np.abs(V.conj().T @ V - eye).max() > 1e-10):
            raise ValueError("U and V must be isometries")
        if np.any(S < 0) or np.any(np.diff(S) > 0):
            raise ValueError("Sigma must be nonnegative and non-increasing")

    @classmethod
    def from_matrix(cls, X, rank: int | None = None) -> "SvdFactors":
        U, s, V = compact_svd(np.asarray(X), rank=rank, cutoff=RANK_CUTOFF)
        return cls(U, s, V)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def sign(self) -> np.ndarray:
        return self.U @ self.V.conj().T

    def matrix(self) -> np.ndarray:
        return (self.U * self.Sigma) @ self.V.conj().T


class TangentSpace:
    """Tangent space ``{U A^* + B V^*}`` of the rank-``r`` variety at the anchor."""

    def __init__(self, factors: SvdFactors):
        self.factors = factors
        self.U, self.V = factors.U, factors.V
        self.P = self.U @ self.U.conj().T
        self.Q = self.V @ self.V.conj().T

    @classmethod
    def at(cls, X, rank: int | None = None) -> "TangentSpace":
        return cls(SvdFactors.from_matrix(X, rank))

    @property
    def shape(self) -> tuple:
        return self.factors.shape

    @property
    def dim(self) -> int:
        """Complex dimension ``r (n1 + n2 - r)``."""
        n1, n2 = self.shape
        r = self.factors.rank
        return r * (n1 + n2 - r)

    def _check(self, Z):
        if Z.shape != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {Z.shape}")

    def project(self, Z):
        self._check(Z)
        PZ = self.P @ Z
        return PZ + Z @ self.Q - PZ @ self.Q

    def complement(self, Z):
        self._check(Z)
        W = Z - self.P @ Z
        return W - W @ self.Q

    def basis(self) -> np.ndarray:
        """Orthonormal basis of T (complex), shape ``(dim, n1, n2)``.

        Built from ``U A^*`` (all ``A``) and ``U_perp-part B V^*`` so the
        two families are orthogonal.
        """
        n1, n2 = self.shape
        U, V = self.U, self.V
        r = U.shape[1]
        Uperp = _complement_basis(U)
        out = []
        for k in range(r):
            for j in range(n2):
                out.append(np.outer(U[:, k], np.eye(n2)[j]))
        for i in range(Uperp.shape[1]):
            for k in range(r):
                out.append(np.outer(Uperp[:, i], V[:, k].conj()))
        out = np.array(out, dtype=np.result_type(U, V, np.float64))
        assert len(out) == self.dim
        return out


def _complement_basis(U):
    n, r = U.shape
    if r == n:
        return np.zeros((n, 0), dtype=U.dtype)
    Q, _ = np.linalg.qr(np.hstack([U, np.eye(n, dtype=U.dtype)]))
    return Q[:, r:n]


def tangent_project(T: TangentSpace, Z):
    return T.project(np.asarray(Z))


def tangent_complement(T: TangentSpace, Z):
    return T.complement(np.asarray(Z))


# --- coherence ------------------------------------------------------------


def coherence(W) -> float:
    """``sqrt(n / r) max_i ||W^* e_i||_2`` for an ``n x r`` isometry ``W``."""
    W = np.asarray(W)
    if W.ndim == 1:
        W = W[:, None]
    n, r = W.shape
    if np.abs(W.conj().T @ W - np.eye(r)).max() > 1e-8:
        raise ValueError("coherence is defined for isometries only (W^* W != Id)")
    return float(math.sqrt(n / r) * np.linalg.norm(W, axis=1).max())


def blind_deconv_incoherence(h, b) -> float:
    """Smallest ``mu`` with ``sqrt(L) |<b_l, h>| <= mu ||h||`` for all rows ``b_l``."""
    h = np.asarray(h)
    nh = np.linalg.norm(h)
    if nh == 0:
        raise ValueError("h must be nonzero")
    b = np.asarray(b)
    L = b.shape[0]
    return float(math.sqrt(L) * np.abs(b.conj() @ h).max() / nh)


def signal_incoherence(x) -> float:
    x = np.asarray(x)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("x must be nonzero")
    return float(np.abs(x).max() / nx)


# --- descent cone ---------------------------------------------------------


def _as_factors(anchor) -> SvdFactors:
    return anchor if isinstance(anchor, SvdFactors) else SvdFactors.from_matrix(anchor)


def directional_derivative(anchor, Z) -> float:
    F = _as_factors(anchor)
    T = TangentSpace(F)
    Z = np.asarray(Z)
    return float(inner(F.sign, Z).real + nuclear_norm(T.complement(Z)))


def descent_direction_test(anchor, Z, tol: float = MEMBERSHIP_TOL):
    """``(is_member, derivative)`` for the closed nuclear-norm descent cone."""
    d = directional_derivative(anchor, Z)
    return d <= tol, d


@dataclass(frozen=True, eq=False)
class ConeSample:
    direction: np.ndarray
    anchor: SvdFactors
    directional_derivative: float


def _gaussian_like(shape, rng, complex_valued):
    G = rng.standard_normal(shape)
    if complex_valued:
        G = G + 1j * rng.standard_normal(shape)
    return G


def sample_descent_direction(anchor, rng=None, max_retries: int = 1000,
                             complex_valued: bool | None = None) -> ConeSample:
    """Random unit-Frobenius element of the descent cone at ``anchor``.

    Draw a Gaussian ``G`` and pass it through :func:`adapted_descent_direction`;
    draws whose tangent part points uphill are discarded.
    """
    F = _as_factors(anchor)
    rng = as_generator(rng)
    if complex_valued is None:
        complex_valued = np.iscomplexobj(F.U) or np.iscomplexobj(F.V)
    for _ in range(max_retries):
        Z = adapted_descent_direction(F, _gaussian_like(F.shape, rng, complex_valued))
        if Z is not None:
            return ConeSample(Z, F, directional_derivative(F, Z))
    raise RuntimeError(f"no descent direction found in {max_retries} draws")


def adapted_descent_direction(anchor, G) -> np.ndarray | None:
    """Cone element built from ``G``: ``(G_T + t G_perp) / norm``.

    ``G_perp`` is shrunk only when needed, by the exact factor
    ``t = -Re<UV^*, G_T> / ||G_perp||_*`` that puts the result on the cone
    boundary.  Returns ``None`` if ``G_T`` points uphill.
    """
    F = _as_factors(anchor)
    T = TangentSpace(F)
    GT = T.project(G)
    c = -inner(F.sign, GT).real
    if c <= 0:
        return None
    Gp = T.complement(G)
    npp = nuclear_norm(Gp)
    Z = GT + (min(1.0, c / npp) if npp > 0 else 0.0) * Gp
    nz = np.linalg.norm(Z)
    return Z / nz if nz > 0 else None


def min_conic_singular_value_estimate(op, anchor, n_samples: int, rng=None,
                                      extra_directions=()) -> float:
    """Upper bound on ``inf ||A(Z)|| / ||Z||_F`` over the descent cone.

    Minimum of ``||A(Z)||_2`` over ``n_samples`` sampled unit cone
    directions (plus any ``extra_directions`` supplied by the caller).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = as_generator(rng)
    F = _as_factors(anchor)
    vals = [np.linalg.norm(op.apply(sample_descent_direction(F, rng).direction))
            for _ in range(n_samples)]
    for Z in extra_directions:
        vals.append(np.linalg.norm(op.apply(Z)) / np.linalg.norm(Z))
    return float(min(vals))


# --- Gaussian width -------------------------------------------------------


class FrobeniusSphere:
    """The whole Frobenius unit sphere; the maximiser of ``<A, Z>`` is ``A / ||A||_F``."""

    def __init__(self, n1, n2):
        self.shape = (n1, n2)

    def sample(self, rng):
        Z = rng.standard_normal(self.shape)
        return Z / np.linalg.norm(Z)

    def maximize(self, A):
        return A / np.linalg.norm(A)


class Singleton:
    def __init__(self, Z0):
        self.Z0 = np.asarray(Z0) / np.linalg.norm(Z0)
        self.shape = self.Z0.shape

    def sample(self, rng):
        return self.Z0

    def maximize(self, A):
        return self.Z0


class DescentConeUnion:
    """Unit-norm elements of the union of descent cones over rank-``r`` anchors.

    ``sample`` draws a Haar rank-``r`` anchor and a cone direction there.
    ``maximize(A)`` anchors at ``-A_r`` (the negated best rank-``r``
    approximation of ``A``), where the tangent part of ``A`` points downhill,
    and returns the adapted cone element built from ``A``.
    """

    def __init__(self, n1, n2, r, complex_valued=False):
        self.shape = (n1, n2)
        self.r = r
        self.complex_valued = complex_valued

    def sample(self, rng):
        n1, n2 = self.shape
        U = random_isometry(n1, self.r, rng, self.complex_valued)
        V = random_isometry(n2, self.r, rng, self.complex_valued)
        F = SvdFactors(U, np.ones(self.r), V)
        return sample_descent_direction(F, rng, complex_valued=self.complex_valued).direction

    def maximize(self, A):
        U, s, V = compact_svd(A, rank=self.r)
        F = SvdFactors(-U, s, V)
        return adapted_descent_direction(F, A)


def gaussian_width_estimate(anchor_set_sampler, n1: int, n2: int, n_outer: int, n_inner: int,
                            rng=None) -> float:
    """Lower bound on ``E sup_{Z in E} <A, Z>`` for a standard Gaussian ``A``.

    For each of ``n_outer`` draws of ``A`` the supremum is replaced by the
    best of ``n_inner`` sampled elements of ``E`` and, when the sampler
    offers one, its ``maximize(A)`` candidate.
    """
    if n_outer < 1 or n_inner < 1:
        raise ValueError("n_outer and n_inner must be >= 1")
    rng = as_generator(rng)
    vals = np.empty(n_outer)
    has_max = hasattr(anchor_set_sampler, "maximize")
    for k in range(n_outer):
        A = rng.standard_normal((n1, n2))
        best = -np.inf
        for _ in range(n_inner):
            best = max(best, inner(A, anchor_set_sampler.sample(rng)).real)
        if has_max:
            Z = anchor_set_sampler.maximize(A)
            if Z is not None:
                best = max(best, inner(A, Z).real)
        vals[k] = best
    return float(vals.mean())


# --- small-ball quantities ------------------------------------------------


@dataclass(frozen=True)
class SmallBallEstimates:
    q_xi: float
    w_m: float
    xi: float
    n_samples: int
    sampled_surrogate: bool = field(default=True)


def small_ball_estimates(op_sampler, cone_sampler, xi: float, n_samples: int, rng=None, m: int = 1,
                         n_directions: int = 20) -> SmallBallEstimates:
    """Sampled surrogates of the marginal tail ``Q_xi`` and empirical width ``W_m``.

    ``op_sampler(rng)`` draws one measurement matrix ``A``; ``cone_sampler(rng)``
    draws one element ``Y`` of the set ``E``.  ``q_xi`` is the minimum over
    ``n_directions`` sampled ``Y`` of the empirical ``Pr[|<A, Y>| >= xi]``
    (``n_samples`` draws each).  ``w_m`` averages, over ``n_samples`` draws
    of ``H = m^{-1/2} sum_i eps_i A_i``, the best ``<Y, H>`` among the sampled
    ``Y``.
    """
    if xi <= 0:
        raise ValueError("xi must be positive")
    rng = as_generator(rng)
    Ys = [cone_sampler(rng) for _ in range(n_directions)]
    q = 1.0
    for Y in Ys:
        hits = sum(abs(inner(op_sampler(rng), Y).real) >= xi for _ in range(n_samples))
        q = min(q, hits / n_samples)
    w = np.empty(n_samples)
    for k in range(n_samples):
        eps = rng.choice([-1.0, 1.0], size=m)
        H = sum(e * op_sampler(rng) for e in eps) / math.sqrt(m)
        w[k] = max(inner(Y, H).real for Y in Ys)
    return SmallBallEstimates(q_xi=float(q), w_m=float(w.mean()), xi=float(xi), n_samples=n_samples)


def tail_probability(op_sampler, Y, xi: float, n_samples: int, rng=None) -> float:
    """Empirical ``Pr[|<A, Y>| >= xi]`` for a single fixed ``Y``."""
    rng = as_generator(rng)
    return sum(abs(inner(op_sampler(rng), Y).real) >= xi for _ in range(n_samples)) / n_samples


# --- matrix toolkit -------------------------------------------------------


def dilation(Z) -> np.ndarray:
    """Self-adjoint dilation ``[[0, Z], [Z^*, 0]]``."""
    Z = np.asarray(Z)
    n1, n2 = Z.shape
    out = np.zeros((n1 + n2, n1 + n2), dtype=np.result_type(Z, np.float64))
    out[:n1, n1:] = Z
    out[n1:, :n1] = Z.conj().T
    return out


def _is_resolution(P, Pp, tol=1e-8) -> bool:
    n = P.shape[0]
    ok = np.abs(P + Pp - np.eye(n)).max() <= tol
    for R in (P, Pp):
        ok &= np.abs(R @ R - R).max() <= tol and np.abs(R - R.conj().T).max() <= tol
    return bool(ok)


def pinch_check(X, P, Q, Pperp, Qperp):
    """``(||X||_*, ||P X Q||_* + ||P' X Q'||_*)``; pinching asserts lhs >= rhs."""
    X = np.asarray(X)
    if not (_is_resolution(P, Pperp) and _is_resolution(Q, Qperp)):
        raise ValueError("(P, P_perp) and (Q, Q_perp) must be resolutions of the identity")
    return nuclear_norm(X), nuclear_norm(P @ X @ Q) + nuclear_norm(Pperp @ X @ Qperp)


def hermitian_pinch_check(X, projectors):
    """``(||X||_*, sum_l ||P_l X P_l||_*)`` for a Hermitian resolution ``P_1..P_L``."""
    X = np.asarray(X)
    S = sum(projectors)
    if np.abs(S - np.eye(X.shape[0])).max() > 1e-8:
        raise ValueError("projectors must sum to the identity")
    for P in projectors:
        if np.abs(P @ P - P).max() > 1e-8 or np.abs(P - P.conj().T).max() > 1e-8:
            raise ValueError("projectors must be Hermitian idempotents")
    return nuclear_norm(X), sum(nuclear_norm(P @ X @ P) for P in projectors)


def sign_matrix(X) -> np.ndarray:
    X = np.asarray(X)
    U, s, V = compact_svd(X)
    if s.size == 0:
        raise ValueError("sign matrix of the zero matrix is undefined")
    return U @ V.conj().T


def dual_nuclear_norm(X) -> float:
    """``max_{||W|| <= 1} |<W, X>|``, attained at ``W = sign(X)``."""
    return abs(inner(sign_matrix(X), X))


def effective_rank_check(anchor, Z, tol: float = MEMBERSHIP_TOL):
    """``(||Z||_* / ||Z||_F, (1 + sqrt 2) sqrt r)`` for a cone member ``Z``."""
    F = _as_factors(anchor)
    Z = np.asarray(Z)
    member, d = descent_direction_test(F, Z, tol)
    if not member:
        raise ValueError(f"Z is not in the descent cone (derivative {d:.3e})")
    return nuclear_norm(Z) / np.linalg.norm(Z), EFFECTIVE_RANK_CONSTANT * math.sqrt(F.rank)


def effective_rank_chain(anchor, Z) -> dict:
    """Every intermediate quantity of the effective-rank argument for ``Z``.

    For a cone member the chain reads
    ``||Z_perp||_* <= |<sign X, PZQ>| <= sqrt(r) ||PZQ||_F <= sqrt(r) ||Z||_F`` and
    ``||Z_T||_* <= sqrt(rank Z_T) ||Z_T||_F <= sqrt(2r) ||Z||_F``.
    """
    F = _as_factors(anchor)
    T = TangentSpace(F)
    Z = np.asarray(Z)
    PZQ = T.P @ Z @ T.Q
    ZT, Zp = T.project(Z), T.complement(Z)
    rank_ZT = int(np.linalg.matrix_rank(ZT, tol=1e-10 * max(1.0, np.linalg.norm(ZT))))
    r = F.rank
    return {
        "perp_nuclear": nuclear_norm(Zp),
        "sign_overlap": abs(inner(F.sign, PZQ)),
        "sqrt_r_PZQ": math.sqrt(r) * np.linalg.norm(PZQ),
        "sqrt_r_Z": math.sqrt(r) * np.linalg.norm(Z),
        "tangent_nuclear": nuclear_norm(ZT),
        "tangent_rank": rank_ZT,
        "sqrt_rank_tangent": math.sqrt(rank_ZT) * np.linalg.norm(ZT),
        "sqrt_2r_Z": math.sqrt(2 * r) * np.linalg.norm(Z),
        "nuclear": nuclear_norm(Z),
        "bound": EFFECTIVE_RANK_CONSTANT * math.sqrt(r) * np.linalg.norm(Z),
    }


__all__ = [
    "SvdFactors", "TangentSpace", "ConeSample", "SmallBallEstimates", "tangent_project",
    "tangent_complement", "coherence", "blind_deconv_incoherence", "signal_incoherence",
    "directional_derivative", "descent_direction_test", "sample_descent_direction",
    "adapted_descent_direction", "min_conic_singular_value_estimate", "FrobeniusSphere",
    "Singleton", "DescentConeUnion", "gaussian_width_estimate", "small_ball_estimates",
    "tail_probability", "dilation", "pinch_check", "hermitian_pinch_check", "sign_matrix",
    "dual_nuclear_norm", "effective_rank_check", "effective_rank_chain", "spectral_norm",
    "nuclear_norm",
]

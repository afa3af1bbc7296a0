"""Convex recovery programs solved by Douglas-Rachford splitting.

Every program here is ``min f(x) + g(x)`` with two closed-form proximal
maps, iterated as

    x = prox_{gamma f}(z);  w = prox_{gamma g}(2x - z);  z <- z + (w - x)

- nucnorm_min: ``f = ||X||_*`` (singular value thresholding),
  ``g`` = indicator of ``{X : ||A(X) - y|| <= tau}`` (exact projection
  through a dense SVD of the measurement matrix).
- psd_l1_fit: ``f`` = PSD indicator + ``||v||_1`` on the pair ``(X, v)``,
  ``g`` = indicator of the graph ``v = A(X) - y``.
- demixing_nucnorm_min: ``f = sum_i ||X_i||_*`` (block-wise thresholding)
  over the shared noise ball.

The fixed-point residual ``||z_{k+1} - z_k||`` is non-increasing for a
fixed ``gamma``; it is recorded as ``merit`` in the trace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy.optimize import brentq

from .linalg import compact_svd, nuclear_norm

STATUSES = ("converged", "max_iters", "infeasible")


@dataclass
class SolverOptions:
    max_iters: int = 5000
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    penalty: float = 1.0
    adaptive: bool = True
    verbosity: int = 0
    trace_path: str | None = None
    keep_trace: bool = False

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")


@dataclass
class RecoveryResult:
    x_hat: np.ndarray
    objective: float
    residual: float
    iterations: int
    status: str
    trace: list = field(default_factory=list, repr=False)
    signal: np.ndarray | None = None
    error: float | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# --- proximal maps --------------------------------------------------------


def svt(X, threshold: float):
    """Singular value thresholding ``U max(S - t, 0) V^*``, the prox of ``t ||.||_*``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    X = np.asarray(X)
    if threshold == 0:
        return X.copy()
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vh[:k]


def _block_svt(X, threshold):
    if X.ndim == 3:
        return np.stack([svt(Xi, threshold) for Xi in X])
    return svt(X, threshold)


def _block_nuclear(X):
    if X.ndim == 3:
        return sum(nuclear_norm(Xi) for Xi in X)
    return nuclear_norm(X)


class NoiseBall:
    """Exact Euclidean projection onto ``{x : ||M x - y||_2 <= tau}``.

    Uses the compact SVD ``M = W diag(s) R^*``.  Only the row-space
    coordinates ``a = R^* x`` are constrained; the projection shrinks the
    coordinate residual ``s*a - beta`` by the factor ``1 / (1 + lam s^2)``
    with ``lam`` found by a scalar root solve.  When ``tau`` is below the
    least-squares residual of ``y`` the set is empty and the projection
    falls back to the least-squares solution set (``feasible = False``).
    """

    def __init__(self, M, y, tau):
        W, s, R = compact_svd(np.asarray(M))
        y = np.asarray(y)
        self._setup(s, R, W.conj().T @ y, y, tau)

    @classmethod
    def from_factors(cls, s, R, beta, y, tau):
        """Build from ``M = W diag(s) R^*`` given ``s``, ``R`` and ``beta = W^* y``."""
        ball = cls.__new__(cls)
        ball._setup(np.asarray(s, dtype=float), np.asarray(R), np.asarray(beta), np.asarray(y), tau)
        return ball

    @classmethod
    def for_operator(cls, op, y, tau):
        """Noise ball of ``op``; entry sampling gets its SVD in closed form."""
        if op.kind != "completion":
            return cls(op.matrix, y, tau)
        y = np.asarray(y)
        cells = op.payload.rows * op.n2 + op.payload.cols
        uniq, inv, counts = np.unique(cells, return_inverse=True, return_counts=True)
        sums = np.zeros(uniq.size, dtype=np.result_type(y.dtype, float))
        np.add.at(sums, inv, y)
        s = abs(op.gain) * op.payload.scale * np.sqrt(counts)
        beta = np.sign(op.gain) * sums / np.sqrt(counts)
        R = np.zeros((op.n1 * op.n2, uniq.size))
        R[uniq, np.arange(uniq.size)] = 1.0
        return cls.from_factors(s, R, beta, y, tau)

    def _setup(self, s, R, beta, y, tau):
        self.s, self.R = s, R
        self.Rh = R.conj().T
        self.beta = beta
        y_perp2 = max(float(np.vdot(y, y).real - np.vdot(self.beta, self.beta).real), 0.0)
        self.ls_residual = math.sqrt(y_perp2)
        self.tau = float(tau)
        rho2 = self.tau ** 2 - y_perp2
        # relative slack for rounding in y_perp2
        self.feasible = rho2 >= -1e-12 * max(1.0, float(np.vdot(y, y).real))
        self.rho = math.sqrt(max(rho2, 0.0))

    def project(self, x):
        a = self.Rh @ x
        s, beta, rho = self.s, self.beta, self.rho
        res = s * a - beta
        nres = np.linalg.norm(res)
        if nres <= rho:
            return x
        if rho == 0:
            a_new = beta / s
        else:
            s2 = s * s
            ares = np.abs(res)

            def phi(lam):
                return np.linalg.norm(ares / (1 + lam * s2)) - rho

            hi = 1.0
            while phi(hi) > 0:
                hi *= 4.0
            lam = brentq(phi, 0.0, hi, xtol=1e-15, rtol=1e-14, maxiter=500)
            a_new = (a + lam * s * beta) / (1 + lam * s2)
        return x + self.R @ (a_new - a)


def _write_trace(path, trace):
    if not path or not trace:
        return
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(trace[0]))
        w.writeheader()
        w.writerows(trace)


def _douglas_rachford(prox_f, prox_g, z0, gamma, opts: SolverOptions, objective, scale_ref,
                      adaptive, feasible=None):
    """Shared DR loop.  ``prox_f(v, gamma)``, ``prox_g(v)``; returns (x, w, iters, converged, trace).

    ``feasible(x)``, when given, is a further stopping condition on the
    prox-f iterate (the feasibility gap).
    """
    z = z0
    x = prox_f(z, gamma)
    trace = []
    record = opts.keep_trace or opts.trace_path
    converged = False
    it = 0
    last_adapt = 0
    for it in range(1, opts.max_iters + 1):
        w = prox_g(2 * x - z)
        step = w - x
        z = z + step
        x_new = prox_f(z, gamma)
        r_primal = np.linalg.norm(step)
        r_dual = np.linalg.norm(x_new - x) / gamma
        x = x_new
        merit = r_primal
        if record:
            trace.append({"iteration": it, "objective": objective(x), "primal_residual": r_primal,
                          "dual_residual": r_dual, "merit": merit, "gamma": gamma})
        if opts.verbosity and it % max(1, opts.verbosity) == 0:
            print(f"{it:6d} obj={objective(x):.6e} rp={r_primal:.3e} rd={r_dual:.3e}")
        tol_p = opts.abs_tol + opts.rel_tol * max(np.linalg.norm(x), np.linalg.norm(w), scale_ref)
        tol_d = opts.abs_tol + opts.rel_tol * np.linalg.norm(z) / gamma
        if (r_primal <= tol_p and r_dual * gamma <= tol_p + tol_d * gamma
                and (feasible is None or feasible(x))):
            converged = True
            break
        # residual balancing on a sparse schedule; between changes gamma is fixed
        if adaptive and it - last_adapt >= 100 and it <= opts.max_iters // 2:
            ratio = (r_primal / max(tol_p, 1e-300)) / max(r_dual * gamma / max(tol_p, 1e-300), 1e-300)
            if ratio > 10 or ratio < 0.1:
                new_gamma = gamma * (0.5 if ratio > 10 else 2.0)
                # keep the fixed point: z = x + gamma * u  ->  x + gamma' * u
                z = x + (new_gamma / gamma) * (z - x)
                gamma = new_gamma
                x = prox_f(z, gamma)
                last_adapt = it
    return x, prox_g(2 * x - z), it, converged, trace


def nucnorm_min(op, y, tau: float = 0.0, opts: SolverOptions | None = None, x0=None,
                truth=None) -> RecoveryResult:
    """``min ||X||_*  s.t.  ||A(X) - y||_2 <= tau``.

    For a demixing operator the objective is ``sum_i ||X_i||_*`` and
    ``x_hat`` has shape ``(r, K, N)``.  ``truth`` (optional) fills in the
    relative Frobenius ``error`` of the result.
    """
    opts = opts or SolverOptions()
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    y = np.asarray(y)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}")
    complex_valued = np.dtype(op.dtype).kind == "c" or np.iscomplexobj(y)
    ball = NoiseBall.for_operator(op, y, tau)
    shape = op.in_shape

    def prox_f(v, gamma):
        return _block_svt(v.reshape(shape), gamma).ravel()

    def objective(v):
        return _block_nuclear(v.reshape(shape))

    if x0 is None:
        z0 = ball.project(np.zeros(int(np.prod(shape)), dtype=np.complex128 if complex_valued else float))
    else:
        z0 = np.asarray(x0, dtype=np.complex128 if complex_valued else float).ravel()
    scale = max(np.linalg.norm(z0), 1e-12)
    # penalty is relative to the scale of the least-norm data-consistent point
    gamma = opts.penalty * scale / math.sqrt(min(shape[-2:]))
    # feasibility gap; exact consistency (tau = 0) is measured against the data norm
    if tau > 0:
        slack = tau * (1 + opts.rel_tol)
    else:
        slack = opts.abs_tol + opts.rel_tol * float(np.linalg.norm(y))

    def feasible(v):
        return np.linalg.norm(op.apply(v.reshape(shape)) - y) <= slack

    x, w, iters, converged, trace = _douglas_rachford(prox_f, ball.project, z0, gamma, opts,
                                                      objective, scale, opts.adaptive,
                                                      feasible if ball.feasible else None)
    X = x.reshape(shape)
    residual = float(np.linalg.norm(op.apply(X) - y))
    if not ball.feasible:
        status = "infeasible"
    elif converged:
        status = "converged"
    else:
        status = "max_iters"
    _write_trace(opts.trace_path, trace)
    res = RecoveryResult(X, objective(x), residual, iters, status, trace)
    if truth is not None:
        res.error = relative_error(X, truth)
    return res


def demixing_nucnorm_min(op, y, tau: float = 0.0, opts: SolverOptions | None = None,
                         truth=None) -> RecoveryResult:
    """``min sum_i ||X_i||_*  s.t.  ||y - sum_i A_i(X_i)|| <= tau``.

    ``x_hat`` is the block stack ``(r, K, N)``; with ``truth`` given (stack
    of ``h_i m_i^*``) ``error`` is ``sqrt(sum_i ||X_i - h_i m_i^*||_F^2)``.
    """
    if op.kind != "demixing":
        raise ValueError("demixing_nucnorm_min needs a demixing operator")
    res = nucnorm_min(op, y, tau, opts)
    if truth is not None:
        res.error = float(np.linalg.norm(res.x_hat - np.asarray(truth)))
    return res


def relative_error(X, X0) -> float:
    X0 = np.asarray(X0)
    return float(np.linalg.norm(np.asarray(X) - X0) / np.linalg.norm(X0))


# --- PSD l1 fit -----------------------------------------------------------


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal (real inner product) basis of Hermitian ``n x n`` matrices, ``(n^2, n, n)``."""
    out = []
    for j in range(n):
        E = np.zeros((n, n), dtype=np.complex128)
        E[j, j] = 1
        out.append(E)
    for j in range(n):
        for k in range(j + 1, n):
            E = np.zeros((n, n), dtype=np.complex128)
            E[j, k] = E[k, j] = 1 / math.sqrt(2)
            out.append(E)
            E = np.zeros((n, n), dtype=np.complex128)
            E[j, k] = 1j / math.sqrt(2)
            E[k, j] = -1j / math.sqrt(2)
            out.append(E)
    return np.array(out)


def _herm_to_coords(X, n):
    iu = np.triu_indices(n, 1)
    off = X[iu] * math.sqrt(2)
    coords = np.empty(n * n)
    coords[:n] = np.diagonal(X).real
    coords[n::2] = off.real
    coords[n + 1::2] = -off.imag
    return coords


def _coords_to_herm(c, n):
    X = np.zeros((n, n), dtype=np.complex128)
    X[np.diag_indices(n)] = c[:n]
    iu = np.triu_indices(n, 1)
    off = (c[n::2] - 1j * c[n + 1::2]) / math.sqrt(2)
    X[iu] = off
    X[iu[1], iu[0]] = off.conj()
    return X


def psd_projection(X):
    """Nearest PSD matrix in Frobenius norm (eigenvalue clipping of the Hermitian part)."""
    H = (X + X.conj().T) / 2
    lam, Q = np.linalg.eigh(H)
    lam = np.maximum(lam, 0.0)
    return (Q * lam) @ Q.conj().T


def top_component(X, hermitian: bool = False):
    """Leading factor ``sqrt(s_1) u_1`` (and ``sqrt(s_1) v_1``) with a fixed global phase.

    The phase makes the largest-magnitude entry of the first factor real
    positive.  Hermitian input returns a single vector.
    """
    X = np.asarray(X)
    if hermitian:
        lam, Q = np.linalg.eigh((X + X.conj().T) / 2)
        x = math.sqrt(max(lam[-1], 0.0)) * Q[:, -1]
        return _fix_phase(x)
    U, s, Vh = np.linalg.svd(X)
    u = math.sqrt(s[0]) * U[:, 0]
    v = math.sqrt(s[0]) * Vh[0].conj()
    k = np.argmax(np.abs(u))
    ph = u[k] / abs(u[k]) if abs(u[k]) > 0 else 1.0
    return u / ph, v / np.conj(ph)


def _fix_phase(x):
    k = np.argmax(np.abs(x))
    if abs(x[k]) == 0:
        return x
    return x * (abs(x[k]) / x[k])


def phase_error(x_hat, x0) -> float:
    """``min_{|phi| = 1} ||x_hat - phi x0||_2``."""
    x_hat, x0 = np.asarray(x_hat), np.asarray(x0)
    c = np.vdot(x0, x_hat)
    phi = c / abs(c) if abs(c) > 0 else 1.0
    return float(np.linalg.norm(x_hat - phi * x0))


def psd_l1_fit(vectors, y, opts: SolverOptions | None = None, truth=None) -> RecoveryResult:
    """``min sum_i |a_i^* X a_i - y_i|  s.t.  X PSD``.

    Works in an orthonormal real coordinate system of the Hermitian
    matrices, where the measurement map is a real ``m x n^2`` matrix.
    ``signal`` holds the phase-normalised top eigenvector scaled by the
    square root of its eigenvalue.  ``truth`` may be the signal vector
    ``x0`` or the lifted matrix; ``error`` is the relative Frobenius error
    of the lifted estimate.
    """
    opts = opts or SolverOptions()
    a = np.asarray(vectors, dtype=np.complex128)
    y = np.asarray(y)
    if np.iscomplexobj(y):
        if np.abs(y.imag).max() > 1e-12 * max(1.0, np.abs(y).max()):
            raise ValueError("phaseless data must be real")
        y = y.real
    m, n = a.shape
    if y.shape != (m,):
        raise ValueError(f"y must have length {m}")
    # row i holds the coordinates of a_i a_i^*
    M = np.array([_herm_to_coords(np.outer(ai, ai.conj()), n) for ai in a])
    d = n * n
    # the residual variable is rescaled so both blocks have comparable size
    sv = np.linalg.norm(M, 2) / math.sqrt(m) if m else 1.0
    Ms = M / sv
    ys = y / sv
    cho = sla.cho_factor(np.eye(d) + Ms.T @ Ms)

    def prox_f(v, gamma):
        X = psd_projection(_coords_to_herm(v[:d], n))
        r = v[d:]
        r = np.sign(r) * np.maximum(np.abs(r) - gamma * sv, 0.0)
        return np.concatenate([_herm_to_coords(X, n), r])

    def prox_g(v):
        th = sla.cho_solve(cho, v[:d] + Ms.T @ (v[d:] + ys))
        return np.concatenate([th, Ms @ th - ys])

    def objective(v):
        return float(np.abs(M @ v[:d] - y).sum())

    z0 = np.zeros(d + m)
    scale = max(np.linalg.norm(ys), 1e-12)
    gamma = opts.penalty * scale / math.sqrt(m) / sv
    x, w, iters, converged, trace = _douglas_rachford(prox_f, prox_g, z0, gamma, opts, objective,
                                                      scale, opts.adaptive)
    X = _coords_to_herm(x[:d], n)
    X = psd_projection(X)
    objective_val = float(np.abs(np.einsum("ij,jk,ik->i", a.conj(), X, a).real - y).sum())
    residual = float(np.linalg.norm(np.einsum("ij,jk,ik->i", a.conj(), X, a).real - y))
    _write_trace(opts.trace_path, trace)
    res = RecoveryResult(X, objective_val, residual, iters, "converged" if converged else "max_iters",
                         trace, signal=top_component(X, hermitian=True))
    if truth is not None:
        t = np.asarray(truth)
        X0 = np.outer(t, t.conj()) if t.ndim == 1 else t
        res.error = relative_error(X, X0)
    return res


# --- independent reference ------------------------------------------------


def projected_subgradient_reference(op, y, max_iters: int = 100_000, step0: float | None = None,
                                    decay: float = 0.7, stage: int = 1000, x0=None):
    """High-accuracy reference for ``min ||X||_*  s.t.  A(X) = y`` on tiny instances.

    Projected subgradient descent on the affine set, parametrised as
    ``X = X_ls + N c`` with ``N`` an orthonormal null-space basis (from
    ``numpy.linalg.svd``, independent of :class:`NoiseBall`).  The step
    size starts at ``step0`` and every ``stage`` iterations is multiplied by
    ``decay`` with a restart from the best iterate so far.  Returns the best
    iterate and its objective.
    """
    M = op.matrix
    shape = op.in_shape
    Xls = np.linalg.lstsq(M, y, rcond=None)[0]
    U, s, Vh = np.linalg.svd(M)
    k = int(np.sum(s > 1e-12 * s[0]))
    N = Vh[k:].conj().T
    if N.shape[1] == 0:
        return Xls.reshape(shape), _block_nuclear(Xls.reshape(shape))
    c = np.zeros(N.shape[1], dtype=N.dtype) if x0 is None else N.conj().T @ (np.ravel(x0) - Xls)

    def f_and_g(c):
        X = (Xls + N @ c).reshape(shape)
        blocks = X if X.ndim == 3 else X[None]
        val, G = 0.0, []
        for B in blocks:
            Ub, sb, Vbh = np.linalg.svd(B, full_matrices=False)
            val += sb.sum()
            kb = int(np.sum(sb > 1e-14 * max(sb[0], 1e-300)))
            G.append(Ub[:, :kb] @ Vbh[:kb])
        G = np.stack(G).reshape(-1)
        return val, N.conj().T @ G

    best_val, _ = f_and_g(c)
    best_c = c.copy()
    step = step0 if step0 is not None else 0.1 * max(np.linalg.norm(Xls), 1e-12)
    for it in range(1, max_iters + 1):
        val, g = f_and_g(c)
        if val < best_val:
            best_val, best_c = val, c.copy()
        ng = np.linalg.norm(g)
        if ng == 0:
            break
        c = c - step * g / ng
        if it % stage == 0:
            step *= decay
            c = best_c.copy()
            if step < 1e-15 * max(np.linalg.norm(Xls), 1e-12):
                break
    X = (Xls + N @ best_c).reshape(shape)
    return X, best_val

"""Measurement ensembles ``A : C^{n1 x n2} -> C^m`` with exact adjoints.

Each measurement is a Frobenius inner product with a measurement matrix,
``A(X)_i = <A_i, X> = tr(A_i^* X)``.  Vectors use the same convention
(conjugate-linear in the first slot), so the adjoint is characterised by

    np.vdot(A(X), y) == np.vdot(X, A^*(y))

and ``A^*(y) = sum_i y_i A_i``.

Operators are immutable.  ``apply``/``adjoint`` use a fast path per kind;
``materialize`` builds the stack of ``A_i`` directly from the payload and is
deliberately independent of that fast path so the two can be checked
against each other.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import as_generator, stream

KINDS = ("gaussian", "completion", "blind_deconv", "phase_retrieval", "demixing")
PR_MODELS = ("gaussian", "rademacher", "unimodular", "masked_fourier")
# |a_ij| = 1 exactly in these models; the diagonal of a a^* is taken as 1 rather than
# the rounded |exp(i t)|^2, so e_j e_j^* measures identically for every j
_UNIT_MODULUS = ("unimodular", "masked_fourier")


def _off_diagonal(X):
    X = np.array(X, dtype=np.result_type(X.dtype, np.float64))
    np.fill_diagonal(X, 0)
    return X


# --- payloads -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianPayload:
    matrices: np.ndarray  # (m, n1, n2)


@dataclass(frozen=True, eq=False)
class EntrySamplePayload:
    rows: np.ndarray
    cols: np.ndarray
    scale: float


@dataclass(frozen=True, eq=False)
class BlindDeconvPayload:
    """Rows ``b_l`` of ``conj(F B)`` and ``c_l`` of ``sqrt(L) F C``.

    ``B`` is ``L x K`` with ``B^* B = Id``; ``C`` is ``L x N`` with i.i.d.
    ``CN(0, 1/L)`` entries so the ``c_l`` have unit-variance entries.
    """

    B: np.ndarray
    C: np.ndarray
    b: np.ndarray  # (L, K)
    c: np.ndarray  # (L, N)

    @property
    def FB(self):
        return self.b.conj()


@dataclass(frozen=True, eq=False)
class PhaseRetrievalPayload:
    vectors: np.ndarray  # (m, n)
    model: str


@dataclass(frozen=True, eq=False)
class DemixingPayload:
    r: int
    components: tuple  # of BlindDeconvPayload, all sharing B


# --- the operator ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    kind: str
    n1: int
    n2: int
    m: int
    seed: int
    payload: object = field(repr=False)
    model: str | None = None
    r: int = 1
    complex_entries: bool = False
    gain: float = 1.0
    custom: bool = False  # built from user-supplied data, not reproducible from a descriptor

    @property
    def in_shape(self) -> tuple:
        if self.kind == "demixing":
            return (self.r, self.n1, self.n2)
        return (self.n1, self.n2)

    @property
    def dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def dtype(self):
        if self.kind in ("gaussian", "completion") and not self.complex_entries:
            return np.float64
        return np.complex128

    def apply(self, X) -> np.ndarray:
        return apply(self, X)

    def adjoint(self, y) -> np.ndarray:
        return adjoint(self, y)

    def scaled(self, c: float) -> "MeasurementOperator":
        """The same ensemble with every ``A_i`` multiplied by ``c``."""
        return _replace(self, gain=self.gain * float(c))

    @functools.cached_property
    def _materialized(self) -> np.ndarray:
        out = _materialize(self)
        out.setflags(write=False)
        return out

    def materialize(self) -> np.ndarray:
        """Stack of measurement matrices, shape ``(m,) + in_shape``."""
        return self._materialized

    @functools.cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``m x dim`` matrix ``M`` with ``A(X) = M @ X.ravel()``."""
        M = self.materialize().reshape(self.m, -1).conj()
        M = np.ascontiguousarray(M)
        M.setflags(write=False)
        return M


def _replace(op: MeasurementOperator, **changes) -> MeasurementOperator:
    fields = dict(
        kind=op.kind, n1=op.n1, n2=op.n2, m=op.m, seed=op.seed, payload=op.payload,
        model=op.model, r=op.r, complex_entries=op.complex_entries, gain=op.gain,
        custom=op.custom,
    )
    fields.update(changes)
    return MeasurementOperator(**fields)


def _check_dims(**dims):
    for name, v in dims.items():
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")


# --- constructors ---------------------------------------------------------


def make_gaussian_ensemble(n1: int, n2: int, m: int, seed: int, complex_entries: bool = False):
    """``m`` measurement matrices with i.i.d. standard normal entries.

    With ``complex_entries`` the entries are standard complex normal
    (``E|a|^2 = 1``).
    """
    _check_dims(n1=n1, n2=n2, m=m)
    rng = stream(seed)
    A = rng.standard_normal((m, n1, n2))
    if complex_entries:
        A = (A + 1j * rng.standard_normal((m, n1, n2))) / np.sqrt(2)
    return MeasurementOperator("gaussian", n1, n2, m, seed, GaussianPayload(A),
                               complex_entries=complex_entries)


def make_completion_ensemble(n1: int, n2: int, m: int, seed: int = 0, indices=None):
    """Uniform entry sampling with replacement, ``A(X)_i = sqrt(n1 n2 / m) X[a_i, b_i]``.

    ``indices`` (a sequence of ``(row, col)`` pairs) overrides the random
    draw; duplicates are kept as repeated measurements.
    """
    _check_dims(n1=n1, n2=n2, m=m)
    custom = indices is not None
    if custom:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
        if len(idx) != m:
            raise ValueError(f"expected {m} indices, got {len(idx)}")
        rows, cols = idx[:, 0].copy(), idx[:, 1].copy()
        if rows.min() < 0 or rows.max() >= n1 or cols.min() < 0 or cols.max() >= n2:
            raise ValueError("sample index out of range")
    else:
        flat = stream(seed).integers(0, n1 * n2, size=m)
        rows, cols = np.divmod(flat, n2)
    payload = EntrySamplePayload(rows, cols, math.sqrt(n1 * n2 / m))
    return MeasurementOperator("completion", n1, n2, m, seed, payload, custom=custom)


def complete_sampling(n1: int, n2: int) -> MeasurementOperator:
    """Every entry observed exactly once; ``A^*A = Id`` (an orthonormal basis)."""
    rows, cols = np.divmod(np.arange(n1 * n2), n2)
    return make_completion_ensemble(n1, n2, n1 * n2, 0, indices=np.c_[rows, cols])


def zero_padding_isometry(L: int, K: int) -> np.ndarray:
    B = np.zeros((L, K))
    B[:K, :K] = np.eye(K)
    return B


def _blind_deconv_payload(B: np.ndarray, N: int, rng: np.random.Generator) -> BlindDeconvPayload:
    L, K = B.shape
    C = (rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))) / np.sqrt(2 * L)
    FB = np.fft.fft(B, axis=0, norm="ortho")
    c = np.sqrt(L) * np.fft.fft(C, axis=0, norm="ortho")
    return BlindDeconvPayload(B=B, C=C, b=FB.conj(), c=c)


def _check_isometry(B: np.ndarray, L: int, K: int):
    if B.shape != (L, K):
        raise ValueError(f"isometry must have shape {(L, K)}, got {B.shape}")
    if np.abs(B.conj().T @ B - np.eye(K)).max() > 1e-8:
        raise ValueError("B is not an isometry (B^* B != Id)")


def make_blind_deconv_ensemble(K: int, N: int, L: int, seed: int, B=None):
    """Lifted blind deconvolution, ``A(X)_l = <b_l c_l^*, X> = b_l^* X c_l``.

    On rank-one inputs ``A(h m^*) = F (B h * C conj(m))`` with ``*`` the
    circular convolution of length ``L`` and ``F`` the unitary DFT.
    ``B`` defaults to the zero-padding isometry.
    """
    _check_dims(K=K, N=N, L=L)
    if L < K:
        raise ValueError(f"need L >= K for an isometric embedding, got L={L}, K={K}")
    custom = B is not None
    B = zero_padding_isometry(L, K) if B is None else np.asarray(B)
    _check_isometry(B, L, K)
    payload = _blind_deconv_payload(B, N, stream(seed, 0))
    return MeasurementOperator("blind_deconv", K, N, L, seed, payload, custom=custom)


def make_demixing_ensemble(K: int, N: int, L: int, r: int, seed: int, B=None):
    """Sum of ``r`` blind-deconvolution operators sharing ``B``.

    Component ``i`` draws its code matrix from stream ``(seed, i)``, so the
    ``r = 1`` case coincides with :func:`make_blind_deconv_ensemble`.
    """
    _check_dims(K=K, N=N, L=L, r=r)
    if L < K:
        raise ValueError(f"need L >= K for an isometric embedding, got L={L}, K={K}")
    custom = B is not None
    B = zero_padding_isometry(L, K) if B is None else np.asarray(B)
    _check_isometry(B, L, K)
    comps = tuple(_blind_deconv_payload(B, N, stream(seed, i)) for i in range(r))
    return MeasurementOperator("demixing", K, N, L, seed, DemixingPayload(r, comps), r=r,
                               custom=custom)


def _pr_vectors(n: int, m: int, model: str, rng: np.random.Generator) -> np.ndarray:
    if model == "gaussian":
        return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2)
    if model == "rademacher":
        return rng.choice([-1.0, 1.0], size=(m, n)).astype(np.complex128)
    if model == "unimodular":
        return np.exp(2j * np.pi * rng.random((m, n)))
    if model == "masked_fourier":
        n_masks = -(-m // n)
        masks = rng.choice([-1.0, 1.0], size=(n_masks, n))
        k = np.arange(m)
        mask_idx, col = np.divmod(k, n)
        # unimodular DFT columns f_l(j) = exp(-2 pi i j l / n), so E[a a^*] = Id
        f = np.exp(-2j * np.pi * np.outer(col, np.arange(n)) / n)
        return masks[mask_idx] * f
    raise ValueError(f"unknown phase retrieval model {model!r}; expected one of {PR_MODELS}")


def make_phase_retrieval_ensemble(n: int, m: int, model: str = "gaussian", seed: int = 0,
                                  vectors=None):
    """Lifted phaseless measurements ``A(X)_i = <a_i a_i^*, X> = a_i^* X a_i``.

    Every model is isotropic, ``E[a a^*] = Id``.  ``vectors`` (shape
    ``(m, n)``) overrides the random draw.
    """
    _check_dims(n=n, m=m)
    if model not in PR_MODELS:
        raise ValueError(f"unknown phase retrieval model {model!r}; expected one of {PR_MODELS}")
    custom = vectors is not None
    if custom:
        a = np.asarray(vectors, dtype=np.complex128)
        if a.shape != (m, n):
            raise ValueError(f"vectors must have shape {(m, n)}, got {a.shape}")
        if model in _UNIT_MODULUS and not np.allclose(np.abs(a), 1.0, rtol=0, atol=1e-12):
            raise ValueError(f"model {model!r} requires unit-modulus vector entries")
    else:
        a = _pr_vectors(n, m, model, stream(seed))
    return MeasurementOperator("phase_retrieval", n, n, m, seed, PhaseRetrievalPayload(a, model),
                               model=model, custom=custom)


# --- apply / adjoint ------------------------------------------------------


def _as_input(op: MeasurementOperator, X) -> np.ndarray:
    X = np.asarray(X)
    if op.kind == "demixing":
        r, K, N = op.in_shape
        if X.shape == (r * K, r * N):
            X = np.stack([X[i * K:(i + 1) * K, i * N:(i + 1) * N] for i in range(r)])
        elif X.shape != (r, K, N) and not (r == 1 and X.shape == (K, N)):
            raise ValueError(f"demixing input must have shape {(r, K, N)} or "
                             f"{(r * K, r * N)}, got {X.shape}")
        return X.reshape(r, K, N)
    if X.shape != op.in_shape:
        raise ValueError(f"input must have shape {op.in_shape}, got {X.shape}")
    return X


def _bd_apply(p: BlindDeconvPayload, X) -> np.ndarray:
    # row-wise b_l^* X c_l = sum_n (F B X)_{ln} c_{ln}
    return np.einsum("ln,ln->l", p.FB @ X, p.c)


def _bd_adjoint(p: BlindDeconvPayload, y) -> np.ndarray:
    return p.b.T @ (y[:, None] * p.c.conj())


def apply(op: MeasurementOperator, X) -> np.ndarray:
    X = _as_input(op, X)
    p = op.payload
    if op.kind == "gaussian":
        out = np.tensordot(p.matrices.conj(), X, axes=([1, 2], [0, 1]))
    elif op.kind == "completion":
        out = p.scale * X[p.rows, p.cols]
    elif op.kind == "blind_deconv":
        out = _bd_apply(p, X)
    elif op.kind == "phase_retrieval":
        a = p.vectors
        if p.model in _UNIT_MODULUS:
            out = np.einsum("ij,jk,ik->i", a.conj(), _off_diagonal(X), a) + np.trace(X)
        else:
            out = np.einsum("ij,jk,ik->i", a.conj(), X, a)
    elif op.kind == "demixing":
        out = sum(_bd_apply(c, Xi) for c, Xi in zip(p.components, X))
    else:
        raise ValueError(f"unknown operator kind {op.kind!r}")
    return op.gain * out


def adjoint(op: MeasurementOperator, y) -> np.ndarray:
    """``A^*(y) = sum_i y_i A_i``; demixing returns shape ``(r, K, N)``."""
    y = np.asarray(y)
    if y.shape != (op.m,):
        raise ValueError(f"measurement vector must have length {op.m}, got shape {y.shape}")
    p = op.payload
    if op.kind == "gaussian":
        out = np.tensordot(y, p.matrices, axes=1)
    elif op.kind == "completion":
        out = np.zeros(op.in_shape, dtype=np.result_type(y.dtype, np.float64))
        np.add.at(out, (p.rows, p.cols), p.scale * y)
    elif op.kind == "blind_deconv":
        out = _bd_adjoint(p, y)
    elif op.kind == "phase_retrieval":
        a = p.vectors
        out = a.T @ (y[:, None] * a.conj())
        if p.model in _UNIT_MODULUS:
            np.fill_diagonal(out, y.sum())
    elif op.kind == "demixing":
        out = np.stack([_bd_adjoint(c, y) for c in p.components])
    else:
        raise ValueError(f"unknown operator kind {op.kind!r}")
    return op.gain * out


def block_diag(blocks) -> np.ndarray:
    """``X_1 (+) ... (+) X_r`` from a stack of equally shaped blocks."""
    blocks = np.asarray(blocks)
    r, K, N = blocks.shape
    out = np.zeros((r * K, r * N), dtype=blocks.dtype)
    for i in range(r):
        out[i * K:(i + 1) * K, i * N:(i + 1) * N] = blocks[i]
    return out


# --- materialization ------------------------------------------------------


def _materialize(op: MeasurementOperator) -> np.ndarray:
    p = op.payload
    if op.kind == "gaussian":
        out = np.array(p.matrices)
    elif op.kind == "completion":
        out = np.zeros((op.m, op.n1, op.n2))
        out[np.arange(op.m), p.rows, p.cols] = p.scale
    elif op.kind == "blind_deconv":
        out = np.einsum("lk,ln->lkn", p.b, p.c.conj())
    elif op.kind == "phase_retrieval":
        a = p.vectors
        out = np.einsum("ij,ik->ijk", a, a.conj())
        if p.model in _UNIT_MODULUS:
            idx = np.arange(op.n1)
            out[:, idx, idx] = 1.0
    elif op.kind == "demixing":
        out = np.stack([np.einsum("lk,ln->lkn", c.b, c.c.conj()) for c in p.components], axis=1)
    else:
        raise ValueError(f"unknown operator kind {op.kind!r}")
    return op.gain * out


# --- operator norm --------------------------------------------------------


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self):
        return self.value


def operator_norm(op: MeasurementOperator, tol: float = 1e-8, max_iters: int = 1000, rng=None,
                  restarts: int = 2) -> NormEstimate:
    """Largest singular value of ``A`` by power iteration on ``A^*A``.

    Runs ``restarts`` independent random starts and keeps the largest
    estimate.  Hitting ``max_iters`` marks the estimate unconverged instead
    of raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = as_generator(0 if rng is None else rng)
    best, total, all_conv = 0.0, 0, True
    for _ in range(max(1, restarts)):
        x = rng.standard_normal(op.in_shape)
        if op.dtype == np.complex128:
            x = x + 1j * rng.standard_normal(op.in_shape)
        x /= np.linalg.norm(x)
        est, conv = 0.0, False
        for it in range(1, max_iters + 1):
            w = adjoint(op, apply(op, x))
            nw = np.linalg.norm(w)
            if nw == 0:
                est, conv = 0.0, True
                break
            new = math.sqrt(nw)
            x = w / nw
            if abs(new - est) <= tol * new:
                est, conv = new, True
                break
            est = new
        total += it
        all_conv &= conv
        best = max(best, est)
    return NormEstimate(best, total, all_conv)


# --- descriptors and export ----------------------------------------------


def to_descriptor(op: MeasurementOperator) -> dict:
    if op.custom:
        raise ValueError("operator was built from user-supplied data and has no seed descriptor")
    d = {"kind": op.kind, "seed": int(op.seed)}
    if op.kind == "gaussian":
        d.update(n1=op.n1, n2=op.n2, m=op.m, complex_entries=op.complex_entries)
    elif op.kind == "completion":
        d.update(n1=op.n1, n2=op.n2, m=op.m)
    elif op.kind == "blind_deconv":
        d.update(K=op.n1, N=op.n2, L=op.m)
    elif op.kind == "phase_retrieval":
        d.update(n=op.n1, m=op.m, model=op.model)
    elif op.kind == "demixing":
        d.update(K=op.n1, N=op.n2, L=op.m, r=op.r)
    if op.gain != 1.0:
        d["gain"] = float(op.gain)
    return d


def from_descriptor(d: dict) -> MeasurementOperator:
    d = dict(d)
    kind = d.pop("kind")
    gain = float(d.pop("gain", 1.0))
    seed = int(d.pop("seed", 0))
    if kind == "gaussian":
        op = make_gaussian_ensemble(int(d["n1"]), int(d["n2"]), int(d["m"]), seed,
                                    complex_entries=bool(d.get("complex_entries", False)))
    elif kind == "completion":
        op = make_completion_ensemble(int(d["n1"]), int(d["n2"]), int(d["m"]), seed)
    elif kind == "blind_deconv":
        op = make_blind_deconv_ensemble(int(d["K"]), int(d["N"]), int(d["L"]), seed)
    elif kind == "phase_retrieval":
        op = make_phase_retrieval_ensemble(int(d["n"]), int(d["m"]), str(d["model"]), seed)
    elif kind == "demixing":
        op = make_demixing_ensemble(int(d["K"]), int(d["N"]), int(d["L"]), int(d["r"]), seed)
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return op.scaled(gain) if gain != 1.0 else op


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    return repr(v)


def dumps_descriptor(op: MeasurementOperator) -> str:
    """Plain ``key = value`` text (a flat TOML subset)."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in to_descriptor(op).items())


def loads_descriptor(text: str) -> MeasurementOperator:
    import tomli

    return from_descriptor(tomli.loads(text))


def export_csv(op: MeasurementOperator, path) -> Path:
    """Write every nonzero entry of every ``A_i`` as ``i,block,row,col,re,im``."""
    path = Path(path)
    A = op.materialize().reshape((op.m,) + (op.r if op.kind == "demixing" else 1, op.n1, op.n2))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["measurement", "block", "row", "col", "re", "im"])
        for i, blk, j, k in zip(*np.nonzero(A)):
            v = complex(A[i, blk, j, k])
            w.writerow([i, blk, j, k, repr(v.real), repr(v.imag)])
    return path


def read_csv(path, op_like: MeasurementOperator) -> np.ndarray:
    """Inverse of :func:`export_csv` given the operator's shape."""
    shape = (op_like.m, op_like.r if op_like.kind == "demixing" else 1, op_like.n1, op_like.n2)
    A = np.zeros(shape, dtype=np.complex128)
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            A[int(row["measurement"]), int(row["block"]), int(row["row"]), int(row["col"])] = (
                float(row["re"]) + 1j * float(row["im"]))
    return A.reshape((op_like.m,) + op_like.in_shape)

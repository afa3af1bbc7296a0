"""Single trials: signal generation, measurement, recovery and scoring.

Seed discipline (all streams are Philox, see :mod:`lowrank.rng`)::

    cell_seed  = derive_seed(master, cell_index)
    trial_seed = derive_seed(cell_seed, trial)
    operator   = built with seed trial_seed
    signal     = stream(master, SIGNAL_KEY, n1, n2, r, trial)
    noise      = stream(trial_seed, NOISE_KEY)
    conic      = stream(trial_seed, CONIC_KEY)

The signal stream ignores ``m`` and ``tau``, so cells that differ only in
the measurement budget or noise level see the same signal for the same
trial index while the ensemble is redrawn.

Signal models.  For matrix ensembles ``flat`` uses singular vectors with
all entries of equal modulus (coherence 1) and ``spike`` uses standard
basis vectors.  For blind deconvolution and demixing, where incoherence
is measured against the Fourier rows ``b_l``, ``flat`` means ``h = e_1``
(flat spectrum) and ``spike`` means constant ``h`` (spectrum peaked at
frequency zero).  ``incoherent`` draws at random and accepts iff the
relevant coherence is at most ``mu``.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from ..certificates import certify
from ..geometry import (
    SvdFactors,
    blind_deconv_incoherence,
    coherence,
    min_conic_singular_value_estimate,
    signal_incoherence,
)
from ..linalg import random_isometry
from ..operators import (
    complete_sampling,
    make_blind_deconv_ensemble,
    make_completion_ensemble,
    make_demixing_ensemble,
    make_gaussian_ensemble,
    make_phase_retrieval_ensemble,
)
from ..rng import derive_seed, stream
from ..solvers import demixing_nucnorm_min, nucnorm_min, psd_l1_fit
from .config import ExperimentConfig

SIGNAL_KEY = 1
NOISE_KEY = 1
CONIC_KEY = 2
MAX_REJECTIONS = 10_000
# noiseless solver failure threshold for the certificate-implies-recovery check
INCLUSION_TOL = 1e-4


@dataclass
class TrialRecord:
    experiment: str
    ensemble: str
    n1: int
    n2: int
    m: int
    r: int
    tau: float
    cell: int
    trial: int
    seed: int
    error: float
    success: bool
    threshold: float
    iterations: int
    status: str
    wall_time: float
    error_bound: float = float("nan")
    bound_violated: bool = False
    cert: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        cert = d.pop("cert")
        d.update(cert)
        return d


@dataclass
class Instance:
    """Measured problem instance handed to the solvers."""

    op: object
    X0: np.ndarray
    y: np.ndarray
    anchor: SvdFactors | None
    vector: np.ndarray | None = None


def cell_seed(cfg: ExperimentConfig, cell_index: int) -> int:
    return derive_seed(cfg.seed, cell_index)


def trial_seed(cfg: ExperimentConfig, cell_index: int, trial: int) -> int:
    return derive_seed(cell_seed(cfg, cell_index), trial)


# --- signals -----------------------------------------------------------------


def _flat_isometry(n: int, r: int, complex_valued: bool) -> np.ndarray:
    if r == 1:
        return np.ones((n, 1)) / math.sqrt(n)
    if complex_valued:
        F = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(r)) / n)
        return F / math.sqrt(n)
    if n & (n - 1) == 0:
        return hadamard(n)[:, :r] / math.sqrt(n)
    raise ValueError("real flat singular vectors with r > 1 need n a power of two")


def _spike_isometry(n: int, r: int) -> np.ndarray:
    return np.eye(n)[:, :r]


def matrix_factors(cfg: ExperimentConfig, n1: int, n2: int, r: int, rng) -> SvdFactors:
    """Singular factors of the ground truth for matrix ensembles."""
    cplx = cfg.complex_signal
    if cfg.signal == "flat":
        return SvdFactors(_flat_isometry(n1, r, cplx), np.ones(r), _flat_isometry(n2, r, cplx))
    if cfg.signal == "spike":
        return SvdFactors(_spike_isometry(n1, r), np.ones(r), _spike_isometry(n2, r))
    for _ in range(MAX_REJECTIONS):
        U = random_isometry(n1, r, rng, cplx)
        V = random_isometry(n2, r, rng, cplx)
        if cfg.signal == "random":
            s = np.sort(np.abs(rng.standard_normal(r)) + 0.5)[::-1]
            return SvdFactors(U, s, V)
        if max(coherence(U), coherence(V)) <= cfg.mu:
            return SvdFactors(U, np.ones(r), V)
    raise ValueError(f"no factors with coherence <= {cfg.mu} in {MAX_REJECTIONS} draws")


def _complex_unit(n: int, rng) -> np.ndarray:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def bd_factor(cfg: ExperimentConfig, K: int, b: np.ndarray, rng) -> np.ndarray:
    if cfg.signal == "flat":
        return np.eye(K)[0].astype(complex)
    if cfg.signal == "spike":
        return np.ones(K, dtype=complex) / math.sqrt(K)
    for _ in range(MAX_REJECTIONS):
        h = _complex_unit(K, rng)
        if cfg.signal == "random" or blind_deconv_incoherence(h, b) <= cfg.mu:
            return h
    raise ValueError(f"no h with incoherence <= {cfg.mu} in {MAX_REJECTIONS} draws")


def pr_signal(cfg: ExperimentConfig, n: int, rng) -> np.ndarray:
    if cfg.signal == "flat":
        return np.ones(n) / math.sqrt(n)
    if cfg.signal == "spike":
        return np.eye(n)[0]
    for _ in range(MAX_REJECTIONS):
        x = _complex_unit(n, rng) if cfg.complex_signal else rng.standard_normal(n)
        x = x / np.linalg.norm(x)
        if cfg.signal == "random" or signal_incoherence(x) <= cfg.mu:
            return x
    raise ValueError(f"no signal with incoherence <= {cfg.mu} in {MAX_REJECTIONS} draws")


# --- instances -----------------------------------------------------------


def build_operator(cfg: ExperimentConfig, n1: int, n2: int, m: int, r: int, seed: int):
    e = cfg.ensemble
    if e == "gaussian":
        return make_gaussian_ensemble(n1, n2, m, seed, complex_entries=cfg.complex_entries)
    if e == "completion":
        return make_completion_ensemble(n1, n2, m, seed)
    if e == "identity":
        return complete_sampling(n1, n2)
    if e == "blind_deconv":
        return make_blind_deconv_ensemble(n1, n2, m, seed)
    if e == "demixing":
        return make_demixing_ensemble(n1, n2, m, r, seed)
    if e == "phase_retrieval":
        return make_phase_retrieval_ensemble(n1, m, cfg.model, seed)
    raise ValueError(f"unknown ensemble {e!r}")


def _noise(cfg: ExperimentConfig, op, tau: float, rng) -> np.ndarray:
    if tau == 0:
        return np.zeros(op.m)
    real = op.kind == "phase_retrieval" or op.dtype == np.float64
    if cfg.noise_model == "range":
        Z = rng.standard_normal(op.in_shape)
        if op.dtype == np.complex128:
            Z = Z + 1j * rng.standard_normal(op.in_shape)
        if op.kind == "phase_retrieval":
            Z = (Z + Z.conj().T) / 2
        e = op.apply(Z)
        if real:
            e = e.real
    else:
        e = rng.standard_normal(op.m)
        if not real:
            e = e + 1j * rng.standard_normal(op.m)
    return tau * e / np.linalg.norm(e)


def make_instance(cfg: ExperimentConfig, cell: dict, trial: int, seed: int) -> Instance:
    n1, n2 = cfg.shape(cell["n"])
    r, m, tau = cell["r"], cell["m"], cell["tau"]
    srng = stream(cfg.seed, SIGNAL_KEY, n1, n2, r, trial)
    op = build_operator(cfg, n1, n2, m, r, seed)
    vector = None
    if op.kind in ("gaussian", "completion"):
        anchor = matrix_factors(cfg, n1, n2, r, srng)
        X0 = anchor.matrix()
        X0 = X0 / np.linalg.norm(X0)
    elif op.kind == "blind_deconv":
        h = bd_factor(cfg, n1, op.payload.b, srng)
        v = _complex_unit(n2, srng)
        X0 = np.outer(h, v.conj())
        anchor = SvdFactors.from_matrix(X0, rank=1)
    elif op.kind == "demixing":
        blocks = []
        for comp in op.payload.components:
            h = bd_factor(cfg, n1, comp.b, srng)
            blocks.append(np.outer(h, _complex_unit(n2, srng).conj()))
        X0 = np.stack(blocks)
        anchor = None
    else:
        vector = pr_signal(cfg, n1, srng)
        X0 = np.outer(vector, vector.conj())
        anchor = SvdFactors.from_matrix(X0, rank=1)
    y = op.apply(X0)
    if op.kind == "phase_retrieval":
        y = y.real
    y = y + _noise(cfg, op, tau, stream(seed, NOISE_KEY))
    return Instance(op, X0, y, anchor, vector)


def solve(cfg: ExperimentConfig, inst: Instance, tau: float, trace_path: str | None = None):
    opts = cfg.solver_options(trace_path)
    op = inst.op
    if op.kind == "phase_retrieval":
        return psd_l1_fit(op.payload.vectors, inst.y, opts, truth=inst.X0)
    if op.kind == "demixing":
        res = demixing_nucnorm_min(op, inst.y, tau, opts, truth=inst.X0)
        res.error = res.error / float(np.linalg.norm(inst.X0))
        return res
    return nucnorm_min(op, inst.y, tau, opts, truth=inst.X0)


# --- trials ----------------------------------------------------------------


def run_trial(cfg: ExperimentConfig, cell: dict, trial: int, cell_index: int = 0,
              trace_path: str | None = None) -> TrialRecord:
    """Run one recovery (or certification) trial; never raises on solver failure.

    The record is a pure function of ``(cfg, cell, trial, cell_index)``
    apart from ``wall_time``.
    """
    n1, n2 = cfg.shape(cell["n"])
    seed = trial_seed(cfg, cell_index, trial)
    tau = float(cell["tau"])
    rec = TrialRecord(cfg.experiment, cfg.ensemble, n1, n2, cell["m"], cell["r"], tau, cell_index,
                      trial, seed, float("nan"), False, cfg.success_threshold, 0, "error", 0.0)
    t0 = time.perf_counter()
    try:
        inst = make_instance(cfg, cell, trial, seed)
        rec.m = inst.op.m
        if cfg.experiment == "certify":
            rec.cert = _certify(cfg, inst)
        res = solve(cfg, inst, tau, trace_path)
        rec.error = float(res.error)
        rec.iterations = int(res.iterations)
        rec.status = res.status
        if tau > 0:
            _noisy_threshold(cfg, inst, tau, seed, rec)
        rec.success = bool(rec.error < rec.threshold)
        if cfg.experiment == "certify":
            rec.cert["inclusion_violation"] = bool(rec.cert["exact_ok"] and rec.error > INCLUSION_TOL)
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        rec.status = f"error: {type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - t0
    return rec


def _noisy_threshold(cfg: ExperimentConfig, inst: Instance, tau: float, seed: int, rec: TrialRecord):
    # relative threshold = factor * 2 tau / (lambda_hat ||X0||); demixing uses lambda_hat = 1
    x0_norm = float(np.linalg.norm(inst.X0))
    lam = 1.0
    if inst.anchor is not None and cfg.conic_samples > 0:
        lam = min_conic_singular_value_estimate(inst.op, inst.anchor, cfg.conic_samples,
                                                stream(seed, CONIC_KEY))
    bound = 2 * tau / lam if lam > 0 else float("inf")
    rec.error_bound = bound
    rec.bound_violated = bool(rec.error * x0_norm > bound)
    rec.threshold = cfg.noisy_threshold_factor * bound / x0_norm


def _certify(cfg: ExperimentConfig, inst: Instance) -> dict:
    if inst.op.kind not in ("gaussian", "completion"):
        raise ValueError("certification needs an ensemble with i.i.d. rows (gaussian or completion)")
    F = inst.anchor
    anchor = SvdFactors(F.U, np.ones(F.rank), F.V)
    op = inst.op
    if op.kind == "gaussian":
        # certificates assume E[A^*A] = Id; the recovery program is scale invariant
        op = op.scaled(1.0 / math.sqrt(op.m))
    out = certify(op, anchor, cfg.Q_legs or None)
    out.pop("trace")
    return out

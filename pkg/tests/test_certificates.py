import csv
import math

import numpy as np
import pytest

from lowrank.certificates import (
    RipReport,
    certify,
    default_golfing_legs,
    golfing_construct,
    putting,
    rip_on_tangent,
    validate_approx_certificate,
    validate_exact_certificate,
)
from lowrank.geometry import SvdFactors, TangentSpace
from lowrank.linalg import random_isometry
from lowrank.operators import (
    adjoint,
    apply,
    complete_sampling,
    make_completion_ensemble,
    make_demixing_ensemble,
    make_gaussian_ensemble,
)
from lowrank.rng import stream
from lowrank.solvers import nucnorm_min

from conftest import random_like

N32 = 32
M32 = round(8 * N32 * math.log(N32) ** 2)


def flat_anchor(n, r=1):
    # leading Sylvester-Hadamard columns: every entry has modulus 1/sqrt(n)
    H = np.array([[1.0]])
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    U = H[:n, :r] / math.sqrt(n)
    return SvdFactors(U, np.ones(r), U)


def spike_anchor(n):
    e = np.zeros((n, 1))
    e[0] = 1
    return SvdFactors(e, np.ones(1), e)


def haar_anchor(n, r, rng):
    return SvdFactors(random_isometry(n, r, rng), np.ones(r), random_isometry(n, r, rng))


def normalized_gaussian(n, m, seed):
    return make_gaussian_ensemble(n, n, m, seed).scaled(1 / math.sqrt(m))


# --- restricted isometry on T ----------------------------------------------------


def test_rip_complete_sampling_is_zero():
    rng = np.random.default_rng(0)
    F = SvdFactors(random_isometry(5, 2, rng), np.ones(2), random_isometry(4, 2, rng))
    rep = rip_on_tangent(complete_sampling(5, 4), TangentSpace(F))
    assert rep.delta < 1e-12
    assert rep.lambda_min_T == pytest.approx(1.0) and rep.lambda_max_T == pytest.approx(1.0)


def test_rip_scales_quadratically():
    rng = np.random.default_rng(1)
    T = TangentSpace(haar_anchor(6, 1, rng))
    op = normalized_gaussian(6, 80, 1)
    a, b = rip_on_tangent(op, T), rip_on_tangent(op.scaled(1.7), T)
    assert b.lambda_min_T == pytest.approx(1.7 ** 2 * a.lambda_min_T, rel=1e-10)
    assert b.lambda_max_T == pytest.approx(1.7 ** 2 * a.lambda_max_T, rel=1e-10)
    assert b.delta == pytest.approx(max(1 - b.lambda_min_T, b.lambda_max_T - 1))


def test_rip_dense_matches_lanczos_and_oracle():
    rng = np.random.default_rng(2)
    F = haar_anchor(6, 2, rng)
    T = TangentSpace(F)
    op = normalized_gaussian(6, 60, 2)
    dense = rip_on_tangent(op, T, method="dense")
    lanczos = rip_on_tangent(op, T, method="lanczos")
    # oracle: singular values of the measurement matrix restricted to a real basis of T
    B = T.basis().reshape(T.dim, -1).T
    s = np.linalg.svd(op.matrix @ B, compute_uv=False)
    assert dense.lambda_max_T == pytest.approx(s[0] ** 2, rel=1e-10)
    assert dense.lambda_min_T == pytest.approx(s[-1] ** 2, rel=1e-10)
    assert lanczos.converged
    assert lanczos.delta == pytest.approx(dense.delta, abs=1e-8)


def test_rip_report_invariant():
    with pytest.raises(ValueError):
        RipReport(0.1, 1.2, 0.9, "dense", 3, True)


def gaussian_rip_passes(m, seeds=range(100)):
    passes = 0
    for seed in seeds:
        F = haar_anchor(8, 1, stream(seed, 5))
        passes += rip_on_tangent(normalized_gaussian(8, m, seed), TangentSpace(F)).delta < 0.75
    return passes


@pytest.mark.xfail(strict=True, reason="at m=100 the constant straddles 3/4 (median near 0.76)")
def test_gaussian_rip_at_m100():
    assert gaussian_rip_passes(100) >= 95


def test_gaussian_rip():
    assert gaussian_rip_passes(200) >= 95


def test_rip_on_demixing_block_operator():
    rng = np.random.default_rng(3)
    op = make_demixing_ensemble(3, 3, 400, 2, 3)
    anchors = [haar_anchor(3, 1, rng) for _ in range(2)]
    rep = rip_on_tangent(op, [TangentSpace(a) for a in anchors])
    assert rep.dim == 2 * 5
    assert 0 < rep.lambda_min_T <= rep.lambda_max_T
    assert rep.delta < 0.75


# --- golfing ------------------------------------------------------------------------


def test_default_legs():
    assert [default_golfing_legs(r) for r in (1, 2, 3, 4, 5)] == [3, 1, 1, 1, 1]
    with pytest.raises(ValueError):
        default_golfing_legs(0)


def test_single_leg_complete_sampling_is_exact():
    rng = np.random.default_rng(4)
    F = haar_anchor(4, 2, rng)
    tr = golfing_construct(complete_sampling(4, 4), F, Q_legs=1)
    assert np.allclose(tr.iterates[1], F.sign)
    assert tr.alphas[1] < 1e-12
    assert np.all(tr.iterates[0] == 0)


def test_golfing_trace_invariants():
    op = make_completion_ensemble(N32, N32, 2000, 5)
    F = flat_anchor(N32)
    T = TangentSpace(F)
    tr = golfing_construct(op, F, Q_legs=4, seed=5)
    parts = np.concatenate(tr.partition)
    assert np.array_equal(np.sort(parts), np.arange(op.m))
    assert tr.legs == 4 and len(tr.alphas) == 5 and len(tr.iterates) == 5
    assert tr.alphas[0] == pytest.approx(1.0)
    # telescoping of the recorded iterates
    for q, idx in enumerate(tr.partition, start=1):
        W = F.sign - T.project(tr.iterates[q - 1])
        meas = np.zeros(op.m)
        meas[idx] = apply(op, W)[idx]
        step = T.project(4 * adjoint(op, meas))
        assert np.abs(T.project(tr.iterates[q]) - T.project(tr.iterates[q - 1]) - step).max() < 1e-12
    assert np.abs(adjoint(op, tr.z) - tr.iterates[-1]).max() < 1e-12


def test_golfing_argument_checks():
    op = make_completion_ensemble(4, 4, 3, 0)
    F = flat_anchor(4)
    with pytest.raises(ValueError):
        golfing_construct(op, F, Q_legs=0)
    with pytest.raises(ValueError):
        golfing_construct(op, F, Q_legs=4)
    with pytest.raises(ValueError):
        golfing_construct(make_demixing_ensemble(2, 2, 4, 2, 0), F)
    with pytest.raises(ValueError):
        golfing_construct(make_completion_ensemble(4, 5, 3, 0), F)


def test_golfing_csv(tmp_path):
    tr = golfing_construct(make_completion_ensemble(8, 8, 200, 1), flat_anchor(8), Q_legs=3)
    with tr.to_csv(tmp_path / "golf.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["leg"]) for r in rows] == [0, 1, 2, 3]
    assert sum(int(r["leg_size"]) for r in rows) == 200
    assert float(rows[-1]["alpha"]) == tr.alphas[-1]


def test_flat_completion_certificates():
    halving, passing = 0, 0
    F = flat_anchor(N32)
    for seed in range(100):
        op = make_completion_ensemble(N32, N32, M32, seed)
        tr = golfing_construct(op, F, seed=seed)
        Q = tr.legs
        halving += tr.alphas[-1] <= tr.alphas[0] / 2 ** Q
        passing += validate_approx_certificate(tr.z, op, F).passes
    assert halving >= 90
    assert passing >= 90


@pytest.mark.xfail(strict=True, reason="with ceil(log2 n) + 2 legs the certificate norm exceeds 2")
def test_flat_completion_with_logarithmic_legs():
    F = flat_anchor(N32)
    Q = math.ceil(math.log2(N32)) + 2
    passing = 0
    for seed in range(100):
        op = make_completion_ensemble(N32, N32, M32, seed)
        passing += validate_approx_certificate(golfing_construct(op, F, Q).z, op, F).passes
    assert passing >= 90


def test_logarithmic_legs_violate_norm_bound():
    # ||z||^2 grows like Q r, so many legs break ||z|| <= 2 while alpha keeps shrinking
    F = flat_anchor(N32)
    Q = math.ceil(math.log(N32)) + 2
    for seed in range(10):
        op = make_completion_ensemble(N32, N32, M32, seed)
        tr = golfing_construct(op, F, Q)
        rep = validate_approx_certificate(tr.z, op, F)
        assert not rep.z_ok and rep.alpha_ok
        assert rep.z_norm == pytest.approx(math.sqrt(Q), rel=0.25)


def test_spike_anchor_fails():
    F = spike_anchor(N32)
    failures = 0
    for seed in range(20):
        op = make_completion_ensemble(N32, N32, N32 * N32 // 4, seed)
        failures += not certify(op, F, seed=seed)["exact_ok"]
    assert failures > 10


# --- approximate certificate checks -----------------------------------------------


def test_large_z_fails_norm_condition():
    op = complete_sampling(3, 3)
    F = spike_anchor(3)
    z = np.zeros(9)
    z[0] = 3.0
    rep = validate_approx_certificate(z, op, F)
    assert rep.z_norm == 3.0 and not rep.z_ok and not rep.passes


def test_exact_input_passes():
    rng = np.random.default_rng(6)
    F = haar_anchor(4, 1, rng)
    op = complete_sampling(4, 4)
    rep = validate_approx_certificate(apply(op, F.sign), op, F)
    assert rep.alpha < 1e-12 and rep.offtangent_norm < 1e-12
    assert rep.passes and rep.op_norm == pytest.approx(1.0)
    with pytest.raises(ValueError):
        validate_approx_certificate(np.zeros(3), op, F)


# --- putting and exact certificates -------------------------------------------------


def test_putting_with_nothing_to_correct():
    rng = np.random.default_rng(7)
    F = haar_anchor(4, 2, rng)
    op = complete_sampling(4, 4)
    rip = rip_on_tangent(op, TangentSpace(F))
    z = apply(op, F.sign)
    cert = putting(z, op, F, rip)
    assert cert.x_norm < 1e-14
    assert np.allclose(cert.z_prime, z, atol=1e-14)
    assert np.allclose(cert.Y_prime, F.sign)
    # exactly representable input: the correction vanishes identically
    S = spike_anchor(4)
    z = apply(op, S.sign)
    cert = putting(z, op, S, rip_on_tangent(op, TangentSpace(S)))
    assert cert.x_norm == 0.0 and np.array_equal(cert.z_prime, z)


def test_putting_rejects_large_delta():
    op = complete_sampling(3, 3)
    F = spike_anchor(3)
    with pytest.raises(ValueError):
        putting(np.zeros(9), op, F, RipReport(0.8, 0.2, 1.0, "dense", 5, True))


def test_putting_on_golfing_output():
    F = flat_anchor(N32)
    for seed in range(5):
        op = make_completion_ensemble(N32, N32, M32, seed)
        rip = rip_on_tangent(op, TangentSpace(F))
        assert rip.delta < 0.75
        tr = golfing_construct(op, F)
        rep = validate_approx_certificate(tr.z, op, F)
        cert = putting(tr.z, op, F, rip)
        assert cert.cg_converged and cert.tangent_residual < 1e-8
        assert cert.x_norm <= cert.x_bound * (1 + 1e-9)
        assert cert.offtangent_norm <= 0.5 + 1 / (8 * math.sqrt(1 - rip.delta)) < 1
        assert rep.passes and cert.valid
        assert validate_exact_certificate(cert, op, F, rip)


def test_putting_after_tenfold_alpha_violation():
    # a deliberately poor z: alpha ten times the allowed size
    rng = np.random.default_rng(8)
    F = haar_anchor(6, 1, rng)
    op = normalized_gaussian(6, 600, 8)
    rip = rip_on_tangent(op, TangentSpace(F))
    op_norm = rip.lambda_max_T ** 0.5
    z0 = apply(op, F.sign) / rip.lambda_max_T
    T = TangentSpace(F)
    D = T.project(random_like((6, 6), rng, complex_valued=False))
    target_alpha = 10 / (8 * op_norm)
    # move z along A(D) until the tangent residual reaches the target
    R0 = F.sign - T.project(adjoint(op, z0))
    dir_ = T.project(adjoint(op, apply(op, D)))
    t = (target_alpha - np.linalg.norm(R0)) / np.linalg.norm(dir_)
    z = z0 + t * apply(op, D)
    rep = validate_approx_certificate(z, op, F)
    assert rep.alpha > 5 / (8 * rep.op_norm) and not rep.alpha_ok
    cert = putting(z, op, F, rip)
    assert cert.x_norm <= rep.alpha / math.sqrt(1 - rip.delta) + 1e-12
    assert cert.tangent_residual < 1e-8
    # the report carries the actual norms; validity follows the off-tangent norm
    assert cert.valid == (cert.offtangent_norm < 1)
    assert cert.extra["alpha"] == pytest.approx(rep.alpha)


def test_validate_exact_examples():
    rng = np.random.default_rng(9)
    F = haar_anchor(4, 2, rng)
    op = complete_sampling(4, 4)
    rip = rip_on_tangent(op, TangentSpace(F))
    cert = putting(apply(op, F.sign), op, F, rip)
    assert validate_exact_certificate(cert, op, F, rip)
    zero = putting(np.zeros(16), op, F, rip)
    zero.Y_prime = np.zeros((4, 4))
    assert not validate_exact_certificate(zero, op, F, rip)
    singular = RipReport(0.5, 0.0, 1.0, "dense", rip.dim, True)
    assert not validate_exact_certificate(cert, op, F, singular)


def test_certificate_implies_recovery():
    F = flat_anchor(16)
    m = round(8 * 16 * math.log(16) ** 2)
    X0 = F.matrix()
    certified = 0
    for seed in range(10):
        op = make_completion_ensemble(16, 16, m, seed)
        if certify(op, F, seed=seed)["exact_ok"]:
            certified += 1
            res = nucnorm_min(op, apply(op, X0), truth=X0)
            assert res.error < 1e-6
    assert certified >= 5


def test_monotone_confidence():
    F = flat_anchor(N32)
    rates = []
    for m in (600, 900, 2000):
        passes = sum(certify(make_completion_ensemble(N32, N32, m, seed), F, seed=seed)["exact_ok"]
                     for seed in range(100))
        rates.append(passes / 100)
    for p0, p1 in zip(rates, rates[1:]):
        se = math.sqrt(max(p0 * (1 - p0) + p1 * (1 - p1), 0.01) / 100)
        assert p1 >= p0 - 2 * se

import io
import math

import numpy as np
import pytest

from lowrank.harness import (
    ExperimentConfig,
    certification_sweep,
    config_from_dict,
    dumps_config,
    is_monotone,
    linear_fit,
    loads_config,
    noise_sweep,
    phase_transition_sweep,
    read_csv,
    run_cells,
    run_trial,
    summarize,
    transition_location,
    wilson_interval,
    write_csv,
)
from lowrank.harness.trials import make_instance, matrix_factors, trial_seed
from lowrank.geometry import coherence
from lowrank.rng import stream


def record_key(rec):
    row = rec.row()
    row.pop("wall_time")
    return {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}


# --- config ---------------------------------------------------------------------


def test_config_round_trip():
    cfg = ExperimentConfig(ensemble="completion", n=[8, 16], r=[1, 2], m=[2.5, 4], m_unit="n_log2n",
                           tau=[0.0, 0.1], trials=3, seed=9, signal="flat")
    back = loads_config(dumps_config(cfg))
    assert back == cfg
    assert back.hash() == cfg.hash()


def test_config_hash_ignores_output_options():
    cfg = ExperimentConfig()
    assert cfg.replace(out="x.csv", threads=4).hash() == cfg.hash()
    assert cfg.replace(seed=1).hash() != cfg.hash()


@pytest.mark.parametrize("bad", [
    {"m": []}, {"trials": 0}, {"tau": [-1.0]}, {"ensemble": "poisson"}, {"r": [0]},
    {"unknown_key": 1}, {"trials": 2.5},
])
def test_config_errors(bad):
    with pytest.raises(ValueError):
        config_from_dict(bad)


def test_nested_config_rejected():
    with pytest.raises(ValueError):
        loads_config("[solver]\nmax_iters = 3\n")


def test_measurement_units():
    cfg = ExperimentConfig(n=[32], m=[8], m_unit="n_log2n")
    assert cfg.cells()[0]["m"] == round(8 * 32 * math.log(32) ** 2)
    cfg = ExperimentConfig(n=[16], m=[8], m_unit="n_logn")
    assert cfg.cells()[0]["m"] == round(8 * 16 * math.log(16))
    cfg = ExperimentConfig(n=[10], n2=6, r=[2], m=[3], m_unit="dof")
    assert cfg.cells()[0]["m"] == 3 * 2 * 14


def test_cells_order():
    cfg = ExperimentConfig(n=[4, 5], r=[1, 2], m=[10, 20], tau=[0.0])
    cells = cfg.cells()
    assert len(cells) == 8
    assert [(c["n"], c["r"], c["m"]) for c in cells[:3]] == [(4, 1, 10), (4, 1, 20), (4, 2, 10)]


# --- trials ---------------------------------------------------------------------


def test_identity_cell_succeeds():
    cfg = ExperimentConfig(experiment="trial", ensemble="identity", n=[3], m=[9], trials=1)
    rec = run_trial(cfg, cfg.cells()[0], 0)
    assert rec.success and rec.error < 1e-6
    assert rec.status == "converged"


def test_trial_is_reproducible():
    cfg = ExperimentConfig(n=[6], m=[30], r=[1], tau=[0.01], trials=2, seed=3)
    a = run_trial(cfg, cfg.cells()[0], 1)
    b = run_trial(cfg, cfg.cells()[0], 1)
    assert record_key(a) == record_key(b)
    c = run_trial(cfg.replace(seed=4), cfg.cells()[0], 1)
    assert c.seed != a.seed


def test_solver_failure_is_recorded():
    cfg = ExperimentConfig(signal="incoherent", mu=1.0, n=[6], m=[30])
    rec = run_trial(cfg, cfg.cells()[0], 0)
    assert rec.status.startswith("error") and not rec.success


def test_incoherent_signal_filter():
    cfg = ExperimentConfig(signal="incoherent", mu=2.5, n=[12])
    F = matrix_factors(cfg, 12, 12, 1, stream(0))
    assert max(coherence(F.U), coherence(F.V)) <= 2.5


@pytest.mark.parametrize("ensemble", ["gaussian", "completion", "blind_deconv", "demixing",
                                      "phase_retrieval"])
def test_every_ensemble_runs(ensemble):
    cfg = ExperimentConfig(ensemble=ensemble, n=[4], m=[60], r=[2 if ensemble == "demixing" else 1])
    rec = run_trial(cfg, cfg.cells()[0], 0)
    assert not rec.status.startswith("error"), rec.status
    assert np.isfinite(rec.error)


def test_range_noise_lies_in_operator_range():
    cfg = ExperimentConfig(ensemble="blind_deconv", noise_model="range", n=[4], m=[32], tau=[0.1])
    cell = cfg.cells()[0]
    inst = make_instance(cfg, cell, 0, trial_seed(cfg, 0, 0))
    e = inst.y - inst.op.apply(inst.X0)
    assert np.linalg.norm(e) == pytest.approx(0.1)
    M = inst.op.matrix
    coef = np.linalg.lstsq(M, e, rcond=None)[0]
    assert np.linalg.norm(M @ coef - e) < 1e-10


def test_gaussian_cell_success_rate():
    cfg = ExperimentConfig(n=[10], r=[1], m=[120], trials=100, seed=11)
    recs = run_cells(cfg)
    assert sum(r.success for r in recs) >= 95


# --- statistics -------------------------------------------------------------------


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)
    lo, hi = wilson_interval(0, 10)
    assert lo == 0.0 and hi == pytest.approx(0.2775, abs=1e-4)
    with pytest.raises(ValueError):
        wilson_interval(3, 2)


def test_transition_location_and_fit():
    summary = [{"r": 1, "m": m, "p_success": p} for m, p in [(10, 0.0), (20, 0.4), (30, 0.8), (40, 1.0)]]
    assert transition_location(summary, r=1) == pytest.approx(22.5)
    assert math.isnan(transition_location([{"m": 1, "p_success": 0.1}]))
    fit = linear_fit([1, 2, 3], [2, 4, 6])
    assert fit["slope"] == pytest.approx(2) and fit["r2"] == pytest.approx(1)


def test_is_monotone():
    assert is_monotone([0.1, 0.5, 0.45, 0.9], trials=20)
    assert not is_monotone([0.9, 0.1], trials=50)


# --- sweeps ---------------------------------------------------------------------


def test_completion_grid_is_monotone():
    cfg = ExperimentConfig(ensemble="completion", n=[32], r=[1, 2], m=[2, 4, 8], m_unit="n_log2n",
                           trials=20, seed=2)
    res = phase_transition_sweep(cfg)
    for r in (1, 2):
        ps = [s["p_success"] for s in sorted(res.summary, key=lambda s: s["m"]) if s["r"] == r]
        assert len(ps) == 3 and is_monotone(ps, 20)
        assert ps[-1] == 1.0
    for s in res.summary:
        assert s["wilson_lo"] <= s["p_success"] <= s["wilson_hi"]


def test_empty_axis_fails_before_trials():
    with pytest.raises(ValueError):
        ExperimentConfig(r=[])


def test_noise_sweep_axis_checks():
    with pytest.raises(ValueError):
        noise_sweep(ExperimentConfig(tau=[0.01, 0.1]))
    with pytest.raises(ValueError):
        noise_sweep(ExperimentConfig(tau=[0.01, 0.02, 0.05]))


def test_noise_sweep_zero_row_matches_noiseless():
    cfg = ExperimentConfig(n=[6], m=[30], tau=[0.0, 1e-3, 1e-2, 1e-1], trials=3, seed=5)
    res = noise_sweep(cfg)
    zero = [r for r in res.records if r.tau == 0.0]
    plain = run_cells(cfg.replace(experiment="transition", tau=[0.0]))
    assert [r.error for r in zero] == [r.error for r in plain]
    assert res.fits[0]["slope"] == pytest.approx(1.0, abs=0.15)


def test_certification_sweep_complete_single_leg():
    cfg = ExperimentConfig(ensemble="identity", n=[4], m=[16], Q_legs=1, trials=3)
    res = certification_sweep(cfg)
    assert all(r.cert["exact_ok"] for r in res.records)
    assert res.summary[0]["rate_exact_ok"] == 1.0
    assert res.summary[0]["inclusion_violations"] == 0


def test_parallel_matches_serial():
    cfg = ExperimentConfig(n=[5], m=[20, 30], trials=3, seed=8)
    a = [record_key(r) for r in run_cells(cfg, threads=1)]
    b = [record_key(r) for r in run_cells(cfg, threads=2)]
    assert a == b


# --- CSV ----------------------------------------------------------------------------


def test_csv_header_and_round_trip(tmp_path):
    cfg = ExperimentConfig(n=[4], m=[20], trials=2, seed=1)
    res = phase_transition_sweep(cfg)
    path = write_csv(res, tmp_path / "out.csv")
    raw = path.read_bytes()
    assert raw.count(b"\r\n") >= 6
    header, rows = read_csv(path)
    assert header[0].startswith("lowrank ")
    assert f"config_hash {cfg.hash()}" in header
    assert "seed 1" in header
    assert any(h.startswith("success_threshold") for h in header)
    assert [r["row_type"] for r in rows] == ["trial", "trial", "summary"]
    assert float(rows[0]["error"]) == res.records[0].error


def test_csv_is_pure_function_of_config():
    cfg = ExperimentConfig(n=[4], m=[20], trials=2, seed=1)

    def table(threads):
        buf = io.StringIO()
        write_csv(phase_transition_sweep(cfg.replace(threads=threads)), buf)
        lines = buf.getvalue().splitlines()
        col = lines[6].split(",").index("wall_time")
        return [",".join(v for i, v in enumerate(line.split(",")) if i != col) for line in lines]

    assert table(1) == table(2)


def test_summarize_flags():
    cfg = ExperimentConfig(ensemble="completion", signal="flat", n=[8], m=[300], trials=2,
                           experiment="certify")
    recs = run_cells(cfg)
    s = summarize(recs, ("exact_ok",))
    assert 0 <= s[0]["rate_exact_ok"] <= 1

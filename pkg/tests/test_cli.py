import io

import pytest

from lowrank.harness.cli import main
from lowrank.harness.sweeps import read_csv


def write_config(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return path


def run(argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    return code, out.getvalue()


def test_trial_command(tmp_path):
    cfg = write_config(tmp_path, 'ensemble = "identity"\nn = [3]\nm = [9]\n')
    trace = tmp_path / "trace.csv"
    code, text = run(["trial", "--config", cfg, "--seed", 5, "--trace", trace])
    assert code == 0
    fields = dict(line.split(" = ", 1) for line in text.splitlines())
    assert fields["success"] == "True" and fields["seed"] != ""
    assert trace.read_text().startswith("iteration,")


def test_sweep_transition_to_file(tmp_path):
    cfg = write_config(tmp_path, "n = [4]\nm = [10, 20]\ntrials = 2\n")
    out = tmp_path / "out.csv"
    code, _ = run(["sweep-transition", "--config", cfg, "--out", out, "--threads", 2])
    assert code == 0
    header, rows = read_csv(out)
    assert "experiment transition" in header
    assert sum(r["row_type"] == "summary" for r in rows) == 2


def test_sweep_noise_bad_axis(tmp_path):
    cfg = write_config(tmp_path, "n = [4]\nm = [20]\ntau = [0.1]\n")
    assert run(["sweep-noise", "--config", cfg])[0] == 2


def test_config_errors_exit_2(tmp_path):
    cfg = write_config(tmp_path, "n = []\n")
    assert run(["sweep-transition", "--config", cfg])[0] == 2
    assert run(["trial", "--config", tmp_path / "missing.toml"])[0] == 2


def test_certify_command(tmp_path):
    cfg = write_config(tmp_path, 'ensemble = "completion"\nsignal = "flat"\nn = [16]\n'
                                 'm = [8]\nm_unit = "n_log2n"\n')
    trace = tmp_path / "golf.csv"
    code, text = run(["certify", "--config", cfg, "--trace", trace])
    assert code == 0
    assert "exact_ok = True" in text
    assert trace.read_text().splitlines()[0] == "leg,leg_size,alpha"


def test_certify_rejects_unsupported_ensemble(tmp_path):
    cfg = write_config(tmp_path, 'ensemble = "blind_deconv"\nn = [4]\nm = [16]\n')
    assert run(["certify", "--config", cfg])[0] == 2


def test_sweep_certify(tmp_path):
    cfg = write_config(tmp_path, 'ensemble = "completion"\nsignal = "flat"\nn = [8]\nm = [300]\ntrials = 2\n')
    code, text = run(["sweep-certify", "--config", cfg])
    assert code == 0 and "rate_exact_ok" in text


@pytest.mark.parametrize("estimator", ["conic", "width", "small_ball"])
def test_estimate_command(tmp_path, estimator):
    cfg = write_config(tmp_path, f'estimator = "{estimator}"\nn = [4]\nm = [20]\ntrials = 1\n'
                                 "n_samples = 10\nn_inner = 3\n")
    code, text = run(["estimate", "--config", cfg])
    assert code == 0
    assert "value" in text and "side" in text


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["fly"])

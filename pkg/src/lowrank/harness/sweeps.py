"""Sweeps over configuration grids, summaries and CSV output.

Every sweep returns a :class:`SweepResult` whose ``rows`` (per trial) and
``summary`` (per cell, or per fit) are plain dicts; :func:`write_csv` turns
it into an RFC-4180 table preceded by a ``#`` header block.  Trials run
in a process pool when ``threads > 1``; results are gathered in
``(cell, trial)`` order, so the table does not depend on the pool size.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .trials import INCLUSION_TOL, TrialRecord, run_trial

WILSON_Z = 1.959963984540054
CERT_FLAGS = ("z_ok", "alpha_ok", "offtangent_ok", "approx_ok", "rip_ok", "putting_ok", "exact_ok")


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class SweepResult:
    config: ExperimentConfig
    records: list
    summary: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    extra_rows: list = field(default_factory=list)

    @property
    def rows(self) -> list[dict]:
        return [r.row() for r in self.records] + list(self.extra_rows)


def _task(args):
    cfg, cell, trial, index = args
    return run_trial(cfg, cell, trial, index)


def run_cells(cfg: ExperimentConfig, threads: int | None = None) -> list[TrialRecord]:
    """All ``(cell, trial)`` pairs in deterministic order."""
    tasks = [(cfg, cell, t, i) for i, cell in enumerate(cfg.cells()) for t in range(cfg.trials)]
    threads = cfg.threads if threads is None else threads
    if threads <= 1 or len(tasks) == 1:
        return [_task(a) for a in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _cell_key(rec: TrialRecord) -> tuple:
    return (rec.cell, rec.n1, rec.n2, rec.m, rec.r, rec.tau)


def summarize(records, flags=()) -> list[dict]:
    """Per-cell success probability with Wilson 95% interval and rates of ``flags``."""
    groups = defaultdict(list)
    for rec in records:
        groups[_cell_key(rec)].append(rec)
    out = []
    for key in sorted(groups):
        recs = groups[key]
        n = len(recs)
        k = sum(r.success for r in recs)
        lo, hi = wilson_interval(k, n)
        errs = np.array([r.error for r in recs], dtype=float)
        row = {
            "cell": key[0], "n1": key[1], "n2": key[2], "m": key[3], "r": key[4], "tau": key[5],
            "trials": n, "successes": k, "p_success": k / n, "wilson_lo": lo, "wilson_hi": hi,
            "median_error": float(np.nanmedian(errs)) if np.isfinite(errs).any() else float("nan"),
            "mean_iterations": float(np.mean([r.iterations for r in recs])),
            "failed_runs": sum(r.status.startswith("error") for r in recs),
        }
        for f in flags:
            kf = sum(bool(r.cert.get(f, False)) for r in recs)
            row[f"rate_{f}"] = kf / n
        out.append(row)
    return out


# --- phase transitions ------------------------------------------------------


def phase_transition_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Success-rate grid over ``(n, r, m)`` (and ``tau``) with per-cell summaries."""
    records = run_cells(cfg)
    res = SweepResult(cfg, records, summarize(records))
    _maybe_write(res)
    return res


def transition_location(summary: list[dict], level: float = 0.5, **match) -> float:
    """Smallest ``m`` where the success curve crosses ``level`` (linear interpolation).

    ``match`` restricts the summary rows (e.g. ``r=2``).  Returns ``nan``
    when the curve never reaches ``level``; the first grid point when it
    starts above it.
    """
    rows = sorted((s for s in summary if all(s[k] == v for k, v in match.items())),
                  key=lambda s: s["m"])
    if not rows:
        raise ValueError("no summary rows match")
    ms = [s["m"] for s in rows]
    ps = [s["p_success"] for s in rows]
    if ps[0] >= level:
        return float(ms[0])
    for (m0, p0), (m1, p1) in zip(zip(ms, ps), zip(ms[1:], ps[1:])):
        if p0 < level <= p1:
            return float(m0 + (level - p0) * (m1 - m0) / (p1 - p0))
    return float("nan")


def linear_fit(x, y) -> dict:
    """Least-squares line ``y = a x + b`` with coefficient of determination."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    a, b = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(a), "intercept": float(b), "r2": r2}


def is_monotone(ps, trials: int, z: float = 2.0) -> bool:
    """Non-decreasing up to ``z`` binomial standard errors between neighbours."""
    for p0, p1 in zip(ps, ps[1:]):
        se = math.sqrt(max(p0 * (1 - p0) + p1 * (1 - p1), 1.0 / trials) / trials)
        if p1 < p0 - z * se:
            return False
    return True


# --- noise --------------------------------------------------------------------


def check_noise_axis(taus) -> None:
    pos = sorted(t for t in taus if t > 0)
    if len(pos) < 3:
        raise ValueError("noise sweep needs at least 3 positive tau values")
    if pos[-1] / pos[0] < 100:
        raise ValueError("noise sweep tau values must span at least two decades")


def noise_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Per-``tau`` median relative error and a log-log slope fit per ``(n, r, m)``."""
    check_noise_axis(cfg.tau)
    records = run_cells(cfg)
    summary = summarize(records)
    for s in summary:
        s["error_over_tau"] = s["median_error"] / s["tau"] if s["tau"] > 0 else float("nan")
    groups = defaultdict(list)
    for s in summary:
        groups[(s["n1"], s["n2"], s["m"], s["r"])].append(s)
    fits = []
    for key in sorted(groups):
        pts = [(s["tau"], s["median_error"]) for s in groups[key] if s["tau"] > 0]
        pts = [(t, e) for t, e in pts if e > 0 and np.isfinite(e)]
        fit = {"n1": key[0], "n2": key[1], "m": key[2], "r": key[3], "slope": float("nan"),
               "intercept": float("nan"), "r2": float("nan"), "max_ratio_spread": float("nan")}
        if len(pts) >= 2:
            fit.update(linear_fit(np.log([t for t, _ in pts]), np.log([e for _, e in pts])))
            ratios = [e / t for t, e in pts]
            fit["max_ratio_spread"] = max(ratios) / min(ratios)
        fits.append(fit)
    res = SweepResult(cfg, records, summary, fits)
    _maybe_write(res)
    return res


# --- certification -----------------------------------------------------------------


def certification_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Certificate pass rates cross-tabulated with noiseless solver success."""
    if cfg.experiment != "certify":
        cfg = cfg.replace(experiment="certify")
    records = run_cells(cfg)
    summary = summarize(records, CERT_FLAGS)
    for s in summary:
        recs = [r for r in records if r.cell == s["cell"]]
        exact = [r for r in recs if r.cert.get("exact_ok")]
        s["solver_ok_given_exact"] = (sum(r.error <= INCLUSION_TOL for r in exact) / len(exact)
                                      if exact else float("nan"))
        s["inclusion_violations"] = sum(bool(r.cert.get("inclusion_violation")) for r in recs)
        k = sum(bool(r.cert.get("exact_ok")) for r in recs)
        s["exact_wilson_lo"], s["exact_wilson_hi"] = wilson_interval(k, len(recs))
    res = SweepResult(cfg, records, summary)
    _maybe_write(res)
    return res


# --- CSV ---------------------------------------------------------------------


def header_lines(cfg: ExperimentConfig) -> list[str]:
    from .. import __version__

    thr = f"relative Frobenius error < {cfg.success_threshold:g} (noiseless)"
    if any(t > 0 for t in cfg.tau):
        thr += f"; < {cfg.noisy_threshold_factor:g} x 2 tau / (lambda_hat ||X0||_F) (noisy)"
    return [
        f"lowrank {__version__}",
        f"experiment {cfg.experiment}",
        f"ensemble {cfg.ensemble}",
        f"config_hash {cfg.hash()}",
        f"seed {cfg.seed}",
        f"success_threshold {thr}",
    ]


def _fieldnames(rows) -> list[str]:
    names, seen = [], set()
    for row in rows:
        for k in row:
            if k not in seen:
                seen.add(k)
                names.append(k)
    return names


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def write_csv(result: SweepResult, target) -> Path | None:
    """Header block, then one table with a ``row_type`` column (trial/summary/fit).

    ``target`` is a path or an open text handle.
    """
    rows = [{"row_type": "trial", **r} for r in result.rows]
    rows += [{"row_type": "summary", **s} for s in result.summary]
    rows += [{"row_type": "fit", **f} for f in result.fits]
    if hasattr(target, "write"):
        _write_table(result.config, rows, target)
        return None
    path = Path(target)
    with path.open("w", newline="") as fh:
        _write_table(result.config, rows, fh)
    return path


def _write_table(cfg, rows, fh):
    for line in header_lines(cfg):
        fh.write(f"# {line}\r\n")
    w = csv.DictWriter(fh, fieldnames=_fieldnames(rows), restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Inverse of :func:`write_csv` up to string values: ``(header_lines, rows)``."""
    header, body = [], []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                header.append(line[1:].strip())
            else:
                body.append(line)
    return header, list(csv.DictReader(body))


def _maybe_write(res: SweepResult):
    if res.config.out:
        write_csv(res, res.config.out)

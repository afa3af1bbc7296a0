"""Experiment configuration.

Configs are flat key-value text in a TOML subset: scalars, strings,
booleans and one-level lists (the sweep axes).  Example::

    experiment = "transition"
    ensemble = "completion"
    n = [32]
    r = [1, 2]
    m = [2, 4, 8]
    m_unit = "n_log2n"
    trials = 20
    seed = 7

Dimension conventions per ensemble (``n`` is the square size unless
``n2`` is given):

- ``gaussian``, ``completion``, ``identity``: ``n1 x n2`` matrices of rank ``r``;
- ``blind_deconv``: ``K = n1``, ``N = n2``, ``L = m``, rank one;
- ``demixing``: as blind deconvolution with ``r`` components;
- ``phase_retrieval``: ``n x n`` lifted matrices, rank one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from ..solvers import SolverOptions

EXPERIMENTS = ("trial", "transition", "noise", "certify", "estimate")
ENSEMBLES = ("gaussian", "completion", "identity", "blind_deconv", "demixing", "phase_retrieval")
SIGNALS = ("random", "incoherent", "flat", "spike")
M_UNITS = ("count", "n_log2n", "n_logn", "dof", "dim")
NOISE_MODELS = ("isotropic", "range")
ESTIMATORS = ("conic", "width", "small_ball")
# keys that do not change results and stay out of the config hash
NON_SEMANTIC = ("out", "threads", "trace")


@dataclass
class ExperimentConfig:
    """One experiment: ensemble, signal model, solver options and sweep axes.

    Every field maps to a key of the same name in the config file.  The
    axis fields (``n``, ``m``, ``r``, ``tau``) are lists; the sweep runs
    over their Cartesian product.  ``m`` values are multiplied by the unit
    named in ``m_unit`` and rounded.
    """

    experiment: str = "transition"
    ensemble: str = "gaussian"
    model: str = "gaussian"
    complex_entries: bool = False
    n: list = field(default_factory=lambda: [10])
    n2: int = 0
    m: list = field(default_factory=lambda: [120])
    m_unit: str = "count"
    r: list = field(default_factory=lambda: [1])
    tau: list = field(default_factory=lambda: [0.0])
    noise_model: str = "isotropic"
    signal: str = "random"
    mu: float = 0.0
    complex_signal: bool = False
    trials: int = 10
    seed: int = 0
    success_threshold: float = 1e-3
    noisy_threshold_factor: float = 3.0
    conic_samples: int = 50
    Q_legs: int = 0
    max_iters: int = 5000
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    penalty: float = 1.0
    adaptive: bool = True
    estimator: str = "conic"
    n_samples: int = 200
    n_inner: int = 20
    xi: float = 0.5
    out: str = ""
    threads: int = 1
    trace: str = ""

    def __post_init__(self):
        for name in ("n", "m", "r", "tau"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)):
                v = [v]
            setattr(self, name, list(v))
            if not v:
                raise ValueError(f"sweep axis {name!r} is empty")
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.ensemble not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.ensemble!r}; expected one of {ENSEMBLES}")
        if self.signal not in SIGNALS:
            raise ValueError(f"unknown signal {self.signal!r}; expected one of {SIGNALS}")
        if self.m_unit not in M_UNITS:
            raise ValueError(f"unknown m_unit {self.m_unit!r}; expected one of {M_UNITS}")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"unknown noise_model {self.noise_model!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if any(t < 0 for t in self.tau):
            raise ValueError("tau values must be nonnegative")
        if any(int(r) != r or r < 1 for r in self.r):
            raise ValueError("r values must be positive integers")
        if any(int(n) != n or n < 1 for n in self.n):
            raise ValueError("n values must be positive integers")
        if any(m <= 0 for m in self.m):
            raise ValueError("m values must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.solver_options()

    def solver_options(self, trace_path: str | None = None) -> SolverOptions:
        return SolverOptions(max_iters=self.max_iters, abs_tol=self.abs_tol, rel_tol=self.rel_tol,
                             penalty=self.penalty, adaptive=self.adaptive, trace_path=trace_path)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def semantic_dict(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC}

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of all result-affecting fields."""
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # --- axis helpers ----------------------------------------------------

    def shape(self, n: int) -> tuple[int, int]:
        return int(n), int(self.n2 or n)

    def measurements(self, n: int, r: int, m_value: float) -> int:
        """Resolve an ``m`` axis value into a measurement count."""
        n1, n2 = self.shape(n)
        big = max(n1, n2)
        unit = {
            "count": 1.0,
            "n_log2n": big * math.log(big) ** 2,
            "n_logn": big * math.log(big),
            "dof": r * (n1 + n2 - r),
            "dim": n1 * n2,
        }[self.m_unit]
        return max(1, int(round(m_value * unit)))

    def cells(self) -> list[dict]:
        """Cartesian product of the axes in ``(n, r, m, tau)`` order."""
        out = []
        for n in self.n:
            for r in self.r:
                for mv in self.m:
                    for tau in self.tau:
                        out.append({"n": int(n), "r": int(r), "m_value": float(mv),
                                    "m": self.measurements(n, int(r), mv), "tau": float(tau)})
        return out


def _coerce(cls_fields: dict, key: str, value):
    f = cls_fields[key]
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, list):
        return list(value) if isinstance(value, (list, tuple)) else [value]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or int(value) != value:
            raise ValueError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def config_from_dict(d: dict) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**{k: _coerce(fields, k, v) for k, v in d.items()})


def loads_config(text: str) -> ExperimentConfig:
    data = tomli.loads(text)
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat; found tables: {', '.join(nested)}")
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    return loads_config(Path(path).read_text())


def dumps_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))

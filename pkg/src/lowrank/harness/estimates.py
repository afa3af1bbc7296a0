"""Geometry estimators run over a config grid.

Each output row has ``estimator, n1, n2, r, m, value, n_samples, seed``
plus estimator-specific columns; ``side`` says whether the sampled value
bounds the population quantity from above or from below.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import (
    EFFECTIVE_RANK_CONSTANT,
    DescentConeUnion,
    SvdFactors,
    gaussian_width_estimate,
    min_conic_singular_value_estimate,
    sample_descent_direction,
    small_ball_estimates,
)
from ..linalg import random_isometry
from ..rng import stream
from .config import ExperimentConfig
from .trials import build_operator, matrix_factors, trial_seed


def estimate_rows(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for ci, cell in enumerate(cfg.cells()):
        n1, n2 = cfg.shape(cell["n"])
        r, m = cell["r"], cell["m"]
        for t in range(cfg.trials):
            seed = trial_seed(cfg, ci, t)
            rng = stream(seed, 3)
            base = {"estimator": cfg.estimator, "n1": n1, "n2": n2, "r": r, "m": m,
                    "trial": t, "n_samples": cfg.n_samples, "seed": seed}
            rows.extend(_estimate(cfg, base, n1, n2, r, m, seed, rng))
    return rows


def _estimate(cfg, base, n1, n2, r, m, seed, rng) -> list[dict]:
    if cfg.estimator == "conic":
        op = build_operator(cfg, n1, n2, m, r, seed)
        anchor = matrix_factors(cfg, n1, n2, r, rng)
        v = min_conic_singular_value_estimate(op, anchor, cfg.n_samples, rng)
        return [{**base, "value": v, "side": "upper"}]
    if cfg.estimator == "width":
        v = gaussian_width_estimate(DescentConeUnion(n1, n2, r), n1, n2, cfg.n_samples, cfg.n_inner, rng)
        bound = EFFECTIVE_RANK_CONSTANT * math.sqrt(r) * (math.sqrt(n1) + math.sqrt(n2))
        return [{**base, "value": v, "side": "lower", "bound": bound}]
    anchor = SvdFactors(random_isometry(n1, r, rng), np.ones(r), random_isometry(n2, r, rng))

    def op_sampler(g):
        return g.standard_normal((n1, n2))

    def cone_sampler(g):
        return sample_descent_direction(anchor, g).direction

    est = small_ball_estimates(op_sampler, cone_sampler, cfg.xi, cfg.n_samples, rng, m=m,
                               n_directions=cfg.n_inner)
    return [{**base, "estimator": "small_ball_q", "value": est.q_xi, "side": "upper", "xi": cfg.xi},
            {**base, "estimator": "small_ball_w", "value": est.w_m, "side": "lower", "xi": cfg.xi}]


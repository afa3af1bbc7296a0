"""Low-rank matrix recovery laboratory.

Measurement ensembles (:mod:`.operators`), descent-cone geometry
(:mod:`.geometry`), convex recovery solvers (:mod:`.solvers`), dual
certificates (:mod:`.certificates`) and an experiment harness
(:mod:`.harness`).
"""

from .operators import (
    MeasurementOperator,
    adjoint,
    apply,
    complete_sampling,
    make_blind_deconv_ensemble,
    make_completion_ensemble,
    make_demixing_ensemble,
    make_gaussian_ensemble,
    make_phase_retrieval_ensemble,
    operator_norm,
)
from .geometry import SvdFactors, TangentSpace
from .solvers import (
    RecoveryResult,
    SolverOptions,
    demixing_nucnorm_min,
    nucnorm_min,
    psd_l1_fit,
    svt,
)
from .certificates import (
    golfing_construct,
    putting,
    rip_on_tangent,
    validate_approx_certificate,
    validate_exact_certificate,
)

__version__ = "0.1.0"

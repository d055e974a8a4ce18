"""Quantum-limited distributed phase sensing with time-multiplexed Gaussian probes."""

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NonPositiveCovariance,
    NumericalError,
    SingularCovariance,
    TmsenseError,
    TruncationError,
    UninformativeMeasurement,
    WeightOutsideSupport,
)
from .fisher import (
    QFIM,
    BoundReport,
    bound_for_spec,
    bound_sql,
    bound_tm,
    bound_tm_lossy,
    bound_ts,
    bound_ts_lossy,
    number_cov,
    qcrb,
    qfim_closed_lossless,
    qfim_closed_lossy,
    qfim_generic,
    run_qfim,
    sql_crossover,
)
from .gaussian import (
    BogoliubovMap,
    GaussianState,
    ModeLayout,
    apply_bogoliubov,
    loss_channel,
    phase_encode,
    quadrature_marginal,
    vacuum,
)
from .measurement import (
    EstimationResult,
    HomodyneConfig,
    SampleBatch,
    classical_fisher,
    log_likelihood,
    mle,
    outcome_model,
    phi_opt,
    run_experiment,
    sample,
)
from .probes import ProbeSpec, Scheme, build_probe

__version__ = "0.1.0"

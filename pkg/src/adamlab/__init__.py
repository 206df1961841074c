"""adamlab: a numerical laboratory for Adam on quadratic two-point problems.

The pieces fit together bottom-up: `model` defines the data laws and the
quadratic loss, `adam` the optimizer state machines, `vectorfield` the
drift whose zeros are Adam's possible limit points, `experiments` the
ensembles and sweeps, and `cli`/`output` the command-line surface.
"""

from .version import __version__

from .model import (
    AdamHyperparams,
    LearningRateSchedule,
    MiniBatchGradient,
    QuadraticSOP,
    TwoPointDistribution,
    gradient,
    minibatch_gradient,
    minimizer,
    point_mass,
    sample,
    sample_batch,
    two_point_mean_zero,
)
from .adam import (
    AdamState,
    NumericsError,
    OptimizerKind,
    Trajectory,
    adam_step,
    default_record_grid,
    init_state,
    run_trajectory,
    sgd_step,
    trajectory_bound,
)
from .vectorfield import (
    BracketError,
    EnumerationTooLarge,
    FrozenPathField,
    HalfConcavityReport,
    TruncationPolicy,
    VFEstimate,
    ZeroResult,
    estimate_vf,
    find_zero_1d,
    half_concavity_probe,
    vf_deterministic,
    vf_truncated_exact,
)
from .experiments import (
    EnsembleConfig,
    ErrorSeries,
    RateFit,
    ScheduleReport,
    fit_loglog,
    run_ensemble,
    schedule_diagnostics,
    sweep_asymmetry,
    sweep_batch,
    sweep_beta2,
    worker_count,
)
from .output import ResultTable, config_fingerprint, emit_csv, emit_svg_plot
from .streams import RandomStream, make_stream, splitmix64, stream_key

"""Monte Carlo bench for self-normalized U-statistic processes.

Library layout:

* ``kernels``    symmetric kernels bound to a source law (theta, projection)
* ``ustat``      exact and incremental running U-statistic evaluators
* ``processes``  normalized process paths on the k/n grid
* ``truncation`` kernel split at level n^(3/2) and its running diagnostics
* ``sampling``   source distributions, seeded streams, Wiener reference laws
* ``montecarlo`` replication engine, KS aggregation, report persistence
* ``cli``        the ``ustatbench`` command
"""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    BenchError,
    ConfigError,
    DegenerateNormalizerError,
    EstimationError,
    ExperimentError,
    InputError,
    ResourceBudgetError,
    UnsupportedOperationError,
)
from .kernels import Kernel, builtin_catalog, builtin_kernel, evaluate_kernel, hajek_analytic, hajek_mc
from .montecarlo import (
    ExperimentConfig,
    McReport,
    ks_distance,
    load_report,
    run_clt_experiment,
    run_decompose_experiment,
    run_experiment,
    run_fclt_experiment,
    run_miller_sen_comparison,
    run_theorem3_experiment,
)
from .processes import (
    NormalizedProcessPath,
    SelfNormalizer,
    build_miller_sen_process,
    build_scalar_normalized_process,
    build_self_normalized_process,
    partial_sum_path,
    sup_distance,
)
from .sampling import (
    Distribution,
    ExamplePareto,
    Exponential,
    Normal,
    Seed,
    StudentT,
    estimate_bn,
    make_distribution,
    sample,
    simulate_wiener_sup_abs,
    sup_abs_wiener_cdf,
    truncated_second_moment,
    wiener_path,
)
from .truncation import (
    MomentConditionReport,
    TruncatedKernelPair,
    TruncationDiagnostics,
    j_diagnostics,
    moment_condition_estimate,
    projection_remainder,
    truncate_kernel,
    truncated_hajek,
)
from .ustat import (
    PrefixUPath,
    prefix_u_degree2_fast,
    prefix_u_fast,
    prefix_u_oracle,
    prefix_u_product_fast,
    u_statistic_oracle,
)

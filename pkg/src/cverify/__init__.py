"""Statistical verification of black-box models against temporal-logic specs.

Pipeline: simulate parameter samples, monitor each trace's robustness,
fit a split-conformal surrogate band, bound the band over a parameter
box, and recursively partition until every region is Safe, Unsafe, or
small enough to give up on.
"""

from .boxopt import BoxOptimum, OptimizerCfg, maximize_on_box, minimize_on_box
from .conformal import (
    SAFE,
    UNKNOWN,
    UNSAFE,
    AlphaTooSmall,
    ConformalModel,
    OddSampleCount,
    RobustnessInterval,
    classify,
    conf_int,
    coverage_check,
    region_interval,
)
from .partition import (
    FAILED,
    LabeledRegion,
    PartitionConfig,
    PartitionResult,
    Region,
    partition_gu,
    partition_naive,
    partition_root,
    root_region,
    verify,
)
from .regress import Dataset, fit_gp, fit_mlp, fit_poly, fit_surrogate
from .report import render_result_csv, render_result_json, write_outputs
from .signals import (
    Distribution,
    OutOfDomain,
    ParamBox,
    Signal,
    restrict,
    truncated_gaussian,
    uniform,
)
from .sim import (
    DimensionMismatch,
    SimFailure,
    UnknownModel,
    builtin,
    external,
    sample_times,
    simulate,
    simulate_many,
)
from .stl import (
    InsufficientHorizon,
    IntervalError,
    ParseError,
    boolean_sat,
    horizon,
    parse,
    robustness,
)

__version__ = "0.1.0"
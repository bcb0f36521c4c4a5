"""pentraj: neural-trajectory analysis of a handwriting-synthesis RNN.

The package covers the full loop: generate pen-stroke sequences with a
stacked-LSTM attention/mixture-density network, record per-layer unit
activations, extract low-dimensional GPFA trajectories, and quantify how
writing styles and characters are encoded (condition-pair KL divergences,
Mann-Whitney rank tests, per-character trajectory segments).
"""

from .datamodel import (
    ConditionLabel,
    TrialBundle,
    TrialRecord,
    export_csv,
    read_trial_bundle,
    write_trial_bundle,
)
from .preprocess import PreprocessReport, drop_degenerate_units, filter_trial, median_filter3
from .gpfa import FitReport, GpfaModel, Posterior, fit, gp_kernel, infer, log_likelihood, orthonormalize, project
from .analysis import (
    CharSegment,
    ConditionDistribution,
    KlMatrix,
    MwuResult,
    StyleSeparation,
    fit_condition_gaussian,
    kl_gaussian,
    kl_matrix,
    mwu_test,
    principal_angles,
    segment_by_character,
    style_separation_test,
)

__version__ = "0.1.0"

"""Stochastic extreme downscaling of gridded geospatial fields with
progressively grown conditional GANs: data model, networks, training loop,
posterior sampling, and a geostatistical evaluation suite.
"""

from .fields import (
    GridField,
    NormalizationStats,
    PairSample,
    SyntheticFieldConfig,
    average_pool,
    chronological_split,
    fit_normalization,
    generate_synthetic,
    make_pairs,
)
from .losses import LossBreakdown, LossWeights
from .metrics import SemivariogramCurve, SwdParams
from .nets import Critic, Generator, ModelConfig, StagePosition
from .sampling import EnsembleStats, HypothesisTestResult
from .storage import read_grid, write_grid
from .training import OptimizerSettings, Phase, TrainState, make_schedule

__version__ = "0.1.0"

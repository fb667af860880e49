"""Multi-modal sequence anticipation.

A rolling recurrent encoder summarises the observed part of a feature
timeline; an unrolling recurrent predictor extrapolates from each observed
step to the start of the next action; a small attention network weighs the
per-modality predictions into one fused score vector.  Training follows a
staged schedule: per-branch sequence-completion pre-training, per-branch
fine-tuning, then joint fine-tuning of branches plus the attention network.

The public surface is re-exported here; see the subpackages for details:

* :mod:`anticipation.autodiff` - reverse-mode gradients on float64 arrays
* :mod:`anticipation.model` - the recurrent branches and fusion logic
* :mod:`anticipation.features` - timelines, samples, file formats
* :mod:`anticipation.training` - SGD loops and the staged pipeline
* :mod:`anticipation.evaluation` - score tables, metrics, reports
* :mod:`anticipation.synthetic` - seeded dataset generator
* :mod:`anticipation.estimator` - scikit-learn style facade
* :mod:`anticipation.cli` - command line entry points
"""

from .errors import (
    AnticipationError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EvaluationError,
    ParameterError,
    ParseError,
    RangeError,
)

__all__ = [
    "AnticipationError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EvaluationError",
    "ParameterError",
    "ParseError",
    "RangeError",
    "__version__",
]

__version__ = "0.1.0"

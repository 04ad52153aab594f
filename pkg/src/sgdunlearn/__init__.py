"""SGD-unrolling machine unlearning at desk scale."""

from .data import Dataset, gen_blobs, gen_moons, load_csv, load_idx
from .estimators import SGDUnlearningClassifier
from .exceptions import (ConfigError, DataError, EnumerationError, FitError, FormatError, GridError,
                         LabelError, NumericError, ShapeError, SizeError, StateError, TrainingError)
from .hessian import HvpConfig, dense_hessian, hvp, top_singular_value
from .nn import CE, MLP, Batch, LossSpec, ModelSpec, make_mlp, sgd_step
from .unlearn import (RunLog, TrainConfig, UnlearnRequest, amnesiac_unlearn, retrain_oracle,
                      run_paired_experiment, single_gradient_unlearn, train, verification_error)
from .unrolled import ErrorInputs, count_terms_with_target, unlearning_error, unroll_predict

__version__ = "0.1.0"

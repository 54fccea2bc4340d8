from . import analysis
from .data import Dataset, load_idx, subsample, synthetic_classification
from .experiment import Experiment, ExperimentConfig, parse_config, run_experiment
from .federated import FLConfig, run_federated
from .nn import HyperParams, ModelSpec
from .optimizers import AvoConfig, avo_optimize, gwo_optimize, pso_optimize
from .space import SearchSpace, hyperparameter_space

name = "fedavopy"

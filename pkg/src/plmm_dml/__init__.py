"""Double machine learning for partially linear mixed-effects models."""
from .data import FoldPartition, Group, GroupedDataset, Theta, make_groups, validate_dataset
from .dml import DmlConfig, DmlFit, aggregate_splits, dml_fit, estimate_single_split, split_folds
from .exceptions import (
    ConvergenceError,
    ConvergenceWarning,
    DataError,
    FoldError,
    LearnerError,
    NumericalError,
    PlmmError,
    SingularDesignError,
)
from .learners import LearnerSpec, fit_nuisance, residualize
from .lmm import LmmFit, ResidualSet, fit_variance_components, log_likelihood, score
from .simulate import SimScenario, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "ConvergenceWarning", "DataError", "DmlConfig", "DmlFit",
    "FoldError", "FoldPartition", "Group", "GroupedDataset", "LearnerError", "LearnerSpec",
    "LmmFit", "NumericalError", "PlmmError", "ResidualSet", "SimScenario",
    "SingularDesignError", "Theta", "aggregate_splits", "dml_fit", "estimate_single_split",
    "fit_nuisance", "fit_variance_components", "gen_dataset", "log_likelihood",
    "make_groups", "residualize", "score", "split_folds", "validate_dataset",
]

"""Evolutionary search for compact dense neural network architectures."""

from .genotype import (
    Activation,
    ArchKind,
    Genotype,
    GenotypeError,
    LayerGene,
    LayerKind,
    ParseError,
    ProblemKind,
    can_follow,
    count_params,
    distance,
    parse,
    rectify_activations,
    serialize,
    validate,
)
from .evolution import (
    Archive,
    ConfigError,
    Individual,
    SearchConfig,
    compatible_pairs,
    compute_costs,
    crossover,
    finalize,
    mutate,
    nominal_convergence,
    random_genotype,
    run_search,
    sample_stop_variate,
    scaled_size,
    splice,
    tournament_select,
)
from .trainer import (
    DenseNetwork,
    Metric,
    PerfReport,
    TrainConfig,
    kfold_evaluate,
    make_evaluator,
    materialize,
    metric,
    train,
)
from .data import Dataset, DataError, kfold, load_csv, load_idx, load_manifest, split, window_rul
from .evalpool import EvalJob, EvalResult, derive_seed, evaluate_all

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "ArchKind",
    "Archive",
    "ConfigError",
    "DataError",
    "Dataset",
    "DenseNetwork",
    "EvalJob",
    "EvalResult",
    "Genotype",
    "GenotypeError",
    "Individual",
    "LayerGene",
    "LayerKind",
    "Metric",
    "ParseError",
    "PerfReport",
    "ProblemKind",
    "SearchConfig",
    "TrainConfig",
    "can_follow",
    "compatible_pairs",
    "compute_costs",
    "count_params",
    "crossover",
    "derive_seed",
    "distance",
    "evaluate_all",
    "finalize",
    "kfold",
    "kfold_evaluate",
    "load_csv",
    "load_idx",
    "load_manifest",
    "make_evaluator",
    "materialize",
    "metric",
    "mutate",
    "nominal_convergence",
    "parse",
    "random_genotype",
    "rectify_activations",
    "run_search",
    "sample_stop_variate",
    "scaled_size",
    "serialize",
    "splice",
    "split",
    "tournament_select",
    "train",
    "validate",
    "window_rul",
]

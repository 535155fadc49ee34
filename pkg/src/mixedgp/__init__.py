"""Gaussian-process surrogates for mixed continuous/categorical inputs.

Categorical levels are encoded as statistics or empirical distributions of
the outputs observed at each level; distances between those encodings
(Wasserstein, sliced Wasserstein, MMD, histogram divergences) feed
distance-substitution kernels inside a tensorized GP.  The package also
ships rank-based Sobol index estimators for interaction-aware encoding
plans, engineering test functions with sliced Latin hypercube designs, a
replication benchmark harness, and a CLI.
"""

from .benchfns import (BenchmarkConfig, BenchmarkReport, FUNCTIONS, TestFunctionSpec,
                       build_dataset, eval_function, random_design, rrmse,
                       run_benchmark, sliced_design)
from .data import (ColumnSchema, MixedDataset, Standardizer, load_csv, load_schema,
                   schema_to_json, split, standardize)
from .distances import (DEFAULT_DIRECTIONS, DEFAULT_QUANTILES, LevelDistanceMatrix,
                        METRICS, SubstitutionKernelParams, distance_matrix_to_csv,
                        distance_matrix_to_json, energy_base_kernel, histogram_psi,
                        level_distance_matrix, mmd_squared, sliced_wasserstein,
                        substitution_gram, wasserstein_1d)
from .encoders import (EmpiricalDistribution, EncodingTable, Histogram, Partition,
                       distributional_encoding, histogram_encoding,
                       interaction_partition_encoding, mean_encoding,
                       mean_std_encoding, merge_auxiliary, onehot_encoding)
from .errors import ConfigError, DataError, MixedGPError, NumericalError
from .gp import (FactorSpec, GPModel, KernelConfig, METHOD_NAMES, Prediction, fit,
                 gaussian_kernel, log_marginal_likelihood, loo_residuals, matern52,
                 model_from_json, model_to_json, predict, resolve_plan,
                 select_encoding_by_loo)
from .sensitivity import (InteractionPlan, PlanAction, SobolEstimates,
                          build_interaction_plan, rank_successor, sobol_first_categorical,
                          sobol_first_continuous, sobol_report, sobol_second_mixed)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig", "BenchmarkReport", "ColumnSchema", "ConfigError",
    "DataError", "DEFAULT_DIRECTIONS", "DEFAULT_QUANTILES", "EmpiricalDistribution",
    "EncodingTable", "FactorSpec", "FUNCTIONS", "GPModel", "Histogram",
    "InteractionPlan", "KernelConfig", "LevelDistanceMatrix", "METHOD_NAMES",
    "METRICS", "MixedDataset", "MixedGPError", "NumericalError", "Partition",
    "PlanAction", "Prediction", "SobolEstimates", "Standardizer",
    "SubstitutionKernelParams", "TestFunctionSpec", "build_dataset",
    "build_interaction_plan", "distance_matrix_to_csv", "distance_matrix_to_json",
    "distributional_encoding", "energy_base_kernel", "eval_function", "fit",
    "gaussian_kernel", "histogram_encoding", "histogram_psi",
    "interaction_partition_encoding", "level_distance_matrix", "load_csv",
    "load_schema", "log_marginal_likelihood", "loo_residuals", "matern52",
    "mean_encoding", "mean_std_encoding", "merge_auxiliary", "mmd_squared",
    "model_from_json", "model_to_json", "onehot_encoding", "predict",
    "random_design", "rank_successor", "resolve_plan", "rrmse", "run_benchmark",
    "schema_to_json", "select_encoding_by_loo", "sliced_design",
    "sliced_wasserstein", "sobol_first_categorical", "sobol_first_continuous",
    "sobol_report", "sobol_second_mixed", "split", "standardize",
    "substitution_gram", "wasserstein_1d",
]

"""Learning choice functions from set-valued choice data.

Latent multi-output Gaussian-process utilities rationalize choices
through Pareto dominance; inference is variational, and the number of
latent utility dimensions is selected by Pareto-smoothed importance
sampling leave-one-out cross-validation.

Submodules are imported lazily so that the command-line entry point can
configure thread environment variables before numpy loads.
"""

from importlib import import_module

_EXPORTS = {
    # data
    "ObjectTable": "data",
    "ChoiceObservation": "data",
    "ChoiceDataset": "data",
    "PairEncoding": "data",
    "validate_dataset": "data",
    "encode_pairs": "data",
    "decode_pairs": "data",
    "dataset_to_dict": "data",
    "dataset_from_dict": "data",
    "save_dataset": "data",
    "load_dataset": "data",
    # kernels
    "KernelParams": "kernels",
    "GramFactor": "kernels",
    "kernel_matrix": "kernels",
    "rbf_ard": "kernels",
    "preference_kernel": "kernels",
    "gram_matrix": "kernels",
    # likelihood
    "SIGMA_MIN": "likelihood",
    "dominance_prob": "likelihood",
    "log_lik_observation": "likelihood",
    "log_lik_dataset": "likelihood",
    "per_observation_log_lik": "likelihood",
    "preference_prob": "likelihood",
    # inference
    "FitConfig": "inference",
    "FitReport": "inference",
    "VariationalState": "inference",
    "fit": "inference",
    "elbo": "inference",
    "map_estimate": "inference",
    # model
    "FittedModel": "model",
    "FitMeta": "model",
    "model_to_dict": "model",
    "model_from_dict": "model",
    "save_model": "model",
    "load_model": "model",
    # prediction
    "PredictiveGaussian": "prediction",
    "predict_latent": "prediction",
    "sample_latent": "prediction",
    "choice_probability": "prediction",
    "predict_choice_set": "prediction",
    "per_object_choice_probabilities": "prediction",
    "subset_probabilities": "prediction",
    # selection
    "LooResult": "selection",
    "DimensionRow": "selection",
    "tail_size": "selection",
    "fit_gpd_tail": "selection",
    "psis_loo": "selection",
    "select_latent_dim": "selection",
    # synthetic
    "UtilityBank": "synthetic",
    "KernelMixtureBank": "synthetic",
    "pareto_choice": "synthetic",
    "example1_bank": "synthetic",
    "gen_example1": "synthetic",
    "gen_kernel_mixture": "synthetic",
    "sample_index_pairs": "synthetic",
    "gen_pairwise_datasets": "synthetic",
    "choices_to_preferences": "synthetic",
    "test_suite_utility": "synthetic",
    "test_suite_bank": "synthetic",
    "gen_bank_dataset": "synthetic",
    "outputs_to_choice_pairs": "synthetic",
    # evaluation
    "EvalReport": "evaluation",
    "a_mean": "evaluation",
    "pairwise_accuracy": "evaluation",
    "split_dataset": "evaluation",
    "aggregate_reports": "evaluation",
    # errors
    "GPChoiceError": "errors",
    "ValidationError": "errors",
    "EmptyChoiceSetError": "errors",
    "DuplicateObjectError": "errors",
    "IndexOutOfRangeError": "errors",
    "SchemaError": "errors",
    "ConfigError": "errors",
    "FactorizationError": "errors",
    "NonFiniteError": "errors",
    "InsufficientTailError": "errors",
    "DegenerateWeightsError": "errors",
    "TieDetectedError": "errors",
    "DomainViolationError": "errors",
    "MajorityTieError": "errors",
    "NoPositivesError": "errors",
    "NoNegativesError": "errors",
}

__all__ = sorted(_EXPORTS)
__version__ = "0.1.0"


def __getattr__(name: str):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(__all__))

"""Treatment effects in principal strata defined by a post-randomization
variable observed only in the experimental arm, with part of it missing.

Typical use::

    from pstrata import ingest_csv, estimate_with_inference, BootstrapConfig
    ds = ingest_csv("trial.csv")
    for est in estimate_with_inference(ds, BootstrapConfig(n_boot=1000, seed=1)):
        print(est.stratum, est.point, est.ci_low, est.ci_high)
"""
from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_estimate, estimate_with_inference
from .data_model import (
    Arm,
    BinaryOutcome,
    CsvSchema,
    Dataset,
    Endpoint,
    Subject,
    SurvivalOutcome,
    apply_landmark,
    emit_csv,
    ingest_csv,
    partition,
)
from .diagnostics import BalanceReport, asmd, balance_report, expected_exceedances
from .estimators import (
    AnalysisOptions,
    EffectType,
    StratumEstimate,
    Strategy,
    estimate_stratum_effect,
    estimate_with_strategy,
    strategy_weights,
)
from .weights import WeightedDataset, WeightModelSet, build_weighted_dataset, fit_weight_models

__version__ = "0.1.0"

__all__ = [
    "AnalysisOptions", "Arm", "BalanceReport", "BinaryOutcome", "BootstrapConfig",
    "BootstrapResult", "CsvSchema", "Dataset", "EffectType", "Endpoint", "Strategy",
    "StratumEstimate", "Subject", "SurvivalOutcome", "WeightModelSet", "WeightedDataset",
    "apply_landmark", "asmd", "balance_report", "bootstrap_estimate", "build_weighted_dataset",
    "emit_csv", "estimate_stratum_effect", "estimate_with_inference", "estimate_with_strategy",
    "expected_exceedances", "fit_weight_models", "ingest_csv", "partition", "strategy_weights",
]

"""Interpretable text features from LLM prompting, their statistical
validation, and action rule mining over the augmented table."""

from .discovery import DatasetMeta, FeatureSpec, build_discovery_prompt, parse_feature_specs
from .errors import LlmFeatError
from .generation import (
    LlmRequest,
    LlmResponse,
    MockBackend,
    build_multi_feature_prompt,
    build_single_feature_prompt,
    emit_batch_file,
    ingest_batch_results,
    submit,
    validate_and_attach,
)
from .kernels import BACKEND
from .rules import (
    ActionRule,
    ClassificationRule,
    MiningSettings,
    compute_uplift,
    mine_action_rules,
    mine_classification_rules,
    reduce_dominant,
)
from .stats import bootstrap_test, chi_squared_test, cramers_v, smog_index
from .table import AugmentedTable, Column, Item, SplitSpec, TargetBinning, load_csv, split

__version__ = "0.1.0"

__all__ = [
    "ActionRule", "AugmentedTable", "BACKEND", "ClassificationRule", "Column", "DatasetMeta",
    "FeatureSpec", "Item", "LlmFeatError", "LlmRequest", "LlmResponse", "MiningSettings",
    "MockBackend", "SplitSpec", "TargetBinning", "bootstrap_test", "build_discovery_prompt",
    "build_multi_feature_prompt", "build_single_feature_prompt", "chi_squared_test",
    "compute_uplift", "cramers_v", "emit_batch_file", "ingest_batch_results", "load_csv",
    "mine_action_rules", "mine_classification_rules", "parse_feature_specs", "reduce_dominant",
    "smog_index", "split", "submit", "validate_and_attach",
]

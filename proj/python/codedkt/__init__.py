"""Knowledge tracing for programming submissions.

Thin wrapper over the C++ core: AST path extraction, attempt encodings,
AUC evaluation, the synthetic data generator, and the experiment runner.
"""

from ._core import (
    __version__,
    auc,
    default_run_config,
    encode_attempt,
    encode_attempt_skills,
    expert_features,
    expert_rule_names,
    extract_paths,
    parse_mode,
    parse_tree_json,
    run_experiment,
    synthesize,
    tokenize,
)

__all__ = [
    "__version__",
    "auc",
    "default_run_config",
    "encode_attempt",
    "encode_attempt_skills",
    "expert_features",
    "expert_rule_names",
    "extract_paths",
    "parse_mode",
    "parse_tree_json",
    "run_experiment",
    "synthesize",
    "tokenize",
]

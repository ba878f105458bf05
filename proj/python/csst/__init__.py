"""Counterfactual sample synthesis and contrastive training on a toy VQA benchmark.

Configuration everywhere is a dict of dotted keys, the same keys the
command-line tool accepts with --set (see config_keys()).
"""

import json

from ._core import (
    Benchmark,
    ConfigError,
    Model,
    Sample,
    Vocab,
    config_keys,
    consensus_group_score,
    evaluate_json,
    generate_benchmark,
    gradcheck,
    iou,
    synthesize,
    train,
)


def evaluate(model, benchmark, config=None):
    """Test-split metrics as a dict (same layout as metrics.json)."""
    return json.loads(evaluate_json(model, benchmark, config or {}))


__all__ = [
    "Benchmark",
    "ConfigError",
    "Model",
    "Sample",
    "Vocab",
    "config_keys",
    "consensus_group_score",
    "evaluate",
    "generate_benchmark",
    "gradcheck",
    "iou",
    "synthesize",
    "train",
]

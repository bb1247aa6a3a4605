# Copyright 2026 The mofe Authors
# SPDX-License-Identifier: Apache-2.0
"""Mixture-of-frozen-experts toolkit.

Thin wrapper over the native module: merge a base decoder checkpoint with
expert checkpoints into a routed MoE model, train it with the expert FFN
blocks frozen, and score multiple-choice tasks by log-likelihood.
"""

from ._mofe import (
    MofeError,
    count_params,
    demo_transfer,
    evaluate,
    forward_logits,
    init_model,
    inspect,
    load_archive,
    merge,
    preset,
    preset_names,
    route,
    save_archive,
    train,
)

__all__ = [
    "MofeError",
    "count_params",
    "demo_transfer",
    "evaluate",
    "forward_logits",
    "init_model",
    "inspect",
    "load_archive",
    "merge",
    "preset",
    "preset_names",
    "route",
    "save_archive",
    "train",
]

__version__ = "0.1.0"

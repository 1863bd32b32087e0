# SPDX-License-Identifier: Apache-2.0
"""Neural point-field radio coverage: model inference and ray-tracing oracle."""

from ._rpn import (
    Checkpoint,
    FormatError,
    IoError,
    NumericalError,
    ValidationError,
    compute_metrics,
    friis_gain_db,
    gradcheck_micro,
    knife_edge_loss,
    oracle_map,
    read_dataset,
    scene_hash,
    sh_eval,
)

__all__ = [
    "Checkpoint",
    "FormatError",
    "IoError",
    "NumericalError",
    "ValidationError",
    "compute_metrics",
    "friis_gain_db",
    "gradcheck_micro",
    "knife_edge_loss",
    "oracle_map",
    "read_dataset",
    "scene_hash",
    "sh_eval",
]

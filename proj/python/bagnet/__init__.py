"""Python bindings for the BAGNet C++ core."""

import json as _json

from ._core import (
    BagnetError,
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    DecodeError,
    ManifestError,
    MissingFileError,
    NumericError,
    ShapeError,
    SizeMismatchError,
    UsageError,
    compute_metrics,
    confusion,
    evaluate,
    gradcheck,
    kfold_split,
    predict,
    synth_dataset,
    threshold,
)
from ._core import param_count as _param_count
from ._core import train_json as _train_json


def _config_text(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def train(manifest, config=None, out_dir="", fold=None):
    """Train on a manifest. `config` is a dict or JSON text in the run-config layout
    ({"train": {...}, "model": {...}}); returns the run record as a dict."""
    return _json.loads(_train_json(manifest, _config_text(config), out_dir, fold))


def param_count(config=None):
    return _param_count(_config_text(config))


__all__ = [name for name in dir() if not name.startswith("_")]

"""Desk-scale EANet: synthetic two-hand data, training, evaluation."""

import json

from . import _eanet
from ._eanet import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    gradcheck,
    mpjpe,
    mpvpe,
    mrrpe,
    pose_difference,
    pose_hand,
    read_dataset,
    template_faces,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "Model",
    "NumericError",
    "default_config",
    "evaluate",
    "generate",
    "generate_datasets",
    "gradcheck",
    "mpjpe",
    "mpvpe",
    "mrrpe",
    "pose_difference",
    "pose_hand",
    "read_dataset",
    "template_faces",
    "train",
]


def _dump(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return json.dumps(config)


def default_config():
    """Full default run config as a dict."""
    return json.loads(_eanet.default_config())


def validate_config(config):
    """Defaults filled in; raises ConfigError on a bad value or unknown key."""
    return json.loads(_eanet.validate_config(_dump(config)))


def generate(seed, count, config=None):
    return _eanet.generate(seed, count, _dump(config))


def generate_datasets(config, out_dir, sweep=False):
    return _eanet.generate_datasets(_dump(config), str(out_dir), sweep)


def train(config, dataset_dir, out_dir, overfit=False):
    return _eanet.train(_dump(config), str(dataset_dir), str(out_dir), overfit)


def evaluate(checkpoint, dataset, out_dir):
    return _eanet.evaluate(str(checkpoint), str(dataset), str(out_dir))


class Model:
    """Network with seeded weights, or restored from a checkpoint via load()."""

    def __init__(self, config=None, seed=0, _impl=None):
        self._impl = _impl if _impl is not None else _eanet.Model(_dump(config), seed)

    @classmethod
    def load(cls, path):
        return cls(_impl=_eanet.Model.load(str(path)))

    def forward(self, image):
        return self._impl.forward(image)

    @property
    def parameter_count(self):
        return self._impl.parameter_count

    @property
    def config(self):
        return json.loads(self._impl.config_json)

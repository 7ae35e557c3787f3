"""Python front end for the nfm C++ engine.

Configs may be given as dicts or JSON strings; they follow
schemas/run_config.schema.json.
"""

import json

import numpy as np

from . import _nfm
from ._nfm import (
    NfmError,
    decimate,
    extend,
    irfft,
    naive_dft,
    point_adjust,
    rfft,
    sinc_resample,
    synth_generate,
    threshold_by_ratio,
)

__all__ = [
    "NfmError",
    "Model",
    "config_hash",
    "decimate",
    "extend",
    "gradcheck",
    "irfft",
    "naive_dft",
    "param_count",
    "point_adjust",
    "rfft",
    "run",
    "sinc_resample",
    "synth_generate",
    "threshold_by_ratio",
    "validate_config",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def validate_config(config):
    """Canonical form of a run config with every default filled in."""
    return json.loads(_nfm.validate_config(_text(config)))


def config_hash(config):
    return _nfm.config_hash(_text(config))


def param_count(config, channels=1):
    return _nfm.param_count(_text(config), channels)


def run(config):
    """Train and evaluate on the test split; returns the metrics dict."""
    return _nfm.run(_text(config))


def gradcheck(seed=0):
    return _nfm.gradcheck(seed)


class Model:
    """Untrained model resolved from a run config; forward takes [batch, length, channels]."""

    def __init__(self, config, channels=1, seed=0):
        self._m = _nfm.Model(_text(config), channels, seed)

    @property
    def param_count(self):
        return self._m.param_count

    def forward(self, x, m_tau=(1, 1), m_f=(1, 1)):
        x = np.asarray(x, dtype=np.float64)
        b, n, c = x.shape
        if c == self._m.channels:
            return self._m.forward(x, tuple(m_tau), tuple(m_f))
        if self._m.channels != 1:
            raise NfmError(f"model expects {self._m.channels} channels, got {c}")
        # channel-independent tasks: channels ride in the batch
        y = self._m.forward(x.transpose(0, 2, 1).reshape(b * c, n, 1), tuple(m_tau), tuple(m_f))
        return y.reshape(b, c, y.shape[1]).transpose(0, 2, 1)

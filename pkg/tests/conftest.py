"""Shared fixtures: sampled covers and charts are expensive at high
resolution, so they are cached once per session keyed by (Q, res)."""

import numpy as np
import pytest

from qval import GridDomain, sample_variety, sheet_align, power_cover

_FIELDS = {}
_CHARTS = {}


def cover_field(Q: int, res: int, radius: float = 1.0):
    key = (Q, res, radius)
    if key not in _FIELDS:
        dom = GridDomain.disk((0.0, 0.0), radius, res)
        _FIELDS[key] = sample_variety(power_cover(Q), dom)
    return _FIELDS[key]


def cover_chart(Q: int, res: int, radius: float = 1.0):
    key = (Q, res, radius)
    if key not in _CHARTS:
        _CHARTS[key] = sheet_align(cover_field(Q, res, radius))
    return _CHARTS[key]


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)

"""Shared fixtures: small deterministic volumes and fields."""

import numpy as np
import pytest

from fieldreg import GridGeometry, ScalarVolume, VectorField, blob_volume, head_slice


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def geom8():
    return GridGeometry((8, 8, 8))


@pytest.fixture
def ramp2d():
    """2-D ramp along axis 0 with slope 2, spacing 1."""
    g = GridGeometry((16, 16))
    idx = np.arange(16, dtype=np.float64)
    vals = np.broadcast_to(2.0 * idx[:, None], (16, 16)).copy()
    return ScalarVolume(g, vals)


@pytest.fixture
def noisy_slice(rng):
    v = head_slice(size=64)
    noise = rng.normal(0.0, 0.02, v.values.shape)
    return ScalarVolume(v.geometry, v.values + noise)


@pytest.fixture
def small_blob():
    return blob_volume(size=24)


def random_volume(rng, dims, spacing=None):
    g = GridGeometry(dims, spacing)
    return ScalarVolume(g, rng.uniform(0.0, 1.0, dims))


def random_field(rng, dims, spacing=None):
    g = GridGeometry(dims, spacing)
    return VectorField(g, rng.normal(0.0, 1.0, tuple(dims) + (len(dims),)))

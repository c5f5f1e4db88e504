"""Backend parity: every compiled kernel twin must match the numpy reference
(up to float noise), and the env flag must select the numpy-only path."""

import os
import subprocess
import sys

import numpy as np
import pytest

from vidinstruct import kernels

pytestmark = pytest.mark.skipif(
    not kernels.NUMBA_ENABLED, reason="numba backend not active")


@pytest.fixture(scope="module")
def twins():
    return kernels.numba_twins()


def test_pooling_twins_match_numpy(rng, twins):
    for _ in range(5):
        t, n, d = rng.integers(1, 9, size=3)
        x = rng.normal(size=(t, n, d))
        np.testing.assert_allclose(
            twins["temporal_mean"](x), kernels.temporal_mean_numpy(x), rtol=1e-13)
        np.testing.assert_allclose(
            twins["spatial_mean"](x), kernels.spatial_mean_numpy(x), rtol=1e-13)


def test_pooling_twins_are_permutation_invariant(rng, twins):
    x = rng.normal(size=(6, 4, 3))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(
        twins["temporal_mean"](x), twins["temporal_mean"](x[perm]))


def test_affine_twins_match_numpy(rng, twins):
    v = rng.normal(size=(7, 5))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=3)
    up = rng.normal(size=(7, 3))
    np.testing.assert_allclose(
        twins["affine"](v, w, b), kernels.affine_numpy(v, w, b), rtol=1e-12)
    got = twins["affine_backward"](v, w, up)
    want = kernels.affine_backward_numpy(v, w, up)
    for g, e in zip(got, want):
        np.testing.assert_allclose(g, e, rtol=1e-12)


def test_scatter_and_histogram_twins_match_numpy(rng, twins):
    gt = rng.normal(size=(4, 6))
    gz = rng.normal(size=(3, 6))
    np.testing.assert_allclose(
        twins["pool_grad_scatter"](gt, gz),
        kernels.pool_grad_scatter_numpy(gt, gz), rtol=1e-13)
    img = rng.integers(0, 256, size=(20, 30, 3)).astype(np.uint8)
    np.testing.assert_allclose(
        twins["channel_histograms"](img, 32),
        kernels.channel_histograms_numpy(img, 32), rtol=1e-13)


def test_distance_and_selection_twins_match_numpy(rng, twins):
    sigs = rng.random(size=(12, 96))
    assert twins["l1_distance"](sigs[0], sigs[1]) == pytest.approx(
        kernels.l1_distance_numpy(sigs[0], sigs[1]), rel=1e-12)
    for k in (1, 3, 12):
        np.testing.assert_array_equal(
            twins["farthest_point"](sigs, k), kernels.farthest_point_numpy(sigs, k))


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, **{kernels.DISABLE_ENV: "1"})
    out = subprocess.run(
        [sys.executable, "-c",
         "from vidinstruct import kernels; "
         "print(kernels.backend(), len(kernels.numba_twins()))"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy 0"

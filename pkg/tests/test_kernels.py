import os
import subprocess
import sys

import numpy as np
import pytest

from goldiprox import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_xent_parity(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(64, 7)) * 10 ** rng.uniform(-2, 3)
    labels = rng.integers(0, 7, 64)
    a_loss, a_p = K.xent_numpy(logits, labels)
    b_loss, b_p = K.xent_numba(logits, labels)
    assert np.allclose(a_loss, b_loss, rtol=1e-13, atol=1e-300)
    assert np.allclose(a_p, b_p, rtol=1e-13, atol=1e-300)


def test_xent_tiny_losses_keep_precision():
    logits = np.array([[40.0, 0.0, 0.0]])
    for f in (K.xent_numpy, K.xent_numba):
        loss, _ = f(logits, np.array([0]))
        assert loss[0] == pytest.approx(2 * np.exp(-40.0), rel=1e-12)


@needs_numba
def test_entropy_parity():
    p = np.random.default_rng(0).dirichlet(np.full(5, 0.2), size=(3, 40))
    p[0, 0] = [1, 0, 0, 0, 0]
    assert np.allclose(K.entropy_rows_numpy(p), K.entropy_rows_numba(p), rtol=1e-13, atol=1e-15)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_rank_parity(seed):
    x = np.round(np.random.default_rng(seed).normal(size=200), 1)
    assert np.array_equal(K.average_ranks_numpy(x), K.average_ranks_numba(x))


def test_average_ranks_example():
    for f in (K.average_ranks_numpy, K.average_ranks_numba):
        assert f(np.array([10.0, 20.0, 20.0, 5.0])).tolist() == [2.0, 3.5, 3.5, 1.0]


def test_fnv_known_vectors():
    # published FNV-1a 64 test vectors
    for f in (K.fnv1a64_numpy, K.fnv1a64_numba):
        assert f(b"") == 0xCBF29CE484222325
        assert f(b"a") == 0xAF63DC4C8601EC8C
        assert f(b"foobar") == 0x85944171F73967E8


@needs_numba
def test_fnv_parity_random():
    blob = np.random.default_rng(1).integers(0, 256, 5000, dtype=np.uint8).tobytes()
    assert K.fnv1a64_numpy(blob) == K.fnv1a64_numba(blob)


def test_env_flag_selects_numpy_backend():
    code = (
        "from goldiprox import _kernels as K; from goldiprox.data import synth_clusters;"
        "print(K.BACKEND, synth_clusters(3, 5, 10, 0.3, 0).fingerprint())"
    )
    out = {}
    for flag in ("1", "0"):
        env = {**os.environ, "GOLDIPROX_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[flag] = res.stdout.split()
    assert out["1"][0] == "numpy"
    assert out["0"][0] == ("numba" if K.HAVE_NUMBA else "numpy")
    assert out["1"][1] == out["0"][1]

import numpy as np
import pytest

from metatrust import _accel, kernels
from metatrust.learner import ParamLayout

pytestmark = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


def test_variance_parity(rng):
    for n in (1, 2, 63, 64, 500):
        x = rng.normal(3.0, 10.0, n)
        assert kernels.population_variance_jit(x) == pytest.approx(kernels.population_variance_np(x), rel=1e-10, abs=1e-12)


def test_gae_parity(rng):
    n = 300
    r = rng.normal(size=n)
    v = rng.normal(size=n + 1)
    d = (rng.random(n) < 0.05).astype(float)
    dj, aj = kernels.gae_jit(r, v, d, 0.99, 0.95)
    dn, an = kernels.gae_np(r, v, d, 0.99, 0.95)
    np.testing.assert_allclose(dj, dn, rtol=0, atol=1e-12)
    np.testing.assert_allclose(aj, an, rtol=0, atol=1e-10)


def test_td_weights_parity(rng):
    x = rng.normal(0, 5, 256)
    np.testing.assert_allclose(kernels.td_weights_jit(x, 1.0), kernels.td_weights_np(x, 1.0), rtol=1e-12)


def test_dynamics_parity(rng):
    for _ in range(200):
        a, b, c = rng.uniform(-3, 3, 3)
        assert kernels.pointmass_step_jit(a, b, c) == pytest.approx(kernels._pointmass_step(a, b, c))
        assert kernels.pendulum_step_jit(a, b, c) == pytest.approx(kernels._pendulum_step(a, b, c))
        assert kernels.valley_step_jit(a / 3, c) == pytest.approx(kernels._valley_step(a / 3, c))


def test_forward_parity(rng):
    layout = ParamLayout(3, (8, 5), 2)
    flat = layout.init(rng, -0.3)
    for _ in range(20):
        obs = rng.normal(size=3)
        mj, lj, vj = kernels.forward_single_jit(flat, layout.sizes, obs)
        mn, ln, vn = kernels.forward_single_np(flat, layout.sizes, obs)
        np.testing.assert_allclose(mj, mn, atol=1e-12)
        np.testing.assert_allclose(lj, ln)
        assert vj == pytest.approx(vn, abs=1e-12)


def test_fallback_flag(monkeypatch):
    import importlib

    monkeypatch.setenv("METATRUST_DISABLE_NUMBA", "1")
    acc = importlib.reload(_accel)
    try:
        assert not acc.NUMBA_ENABLED
        assert acc.select("jit", "np") == "np"
    finally:
        monkeypatch.delenv("METATRUST_DISABLE_NUMBA")
        importlib.reload(_accel)


def test_numpy_path_runs_end_to_end(tmp_path):
    import os
    import subprocess
    import sys

    code = (
        "from metatrust import _accel; assert not _accel.NUMBA_ENABLED;"
        "from metatrust.harness import run_experiment; from metatrust.harness.config import from_dict;"
        f"run_experiment(from_dict({{'total_steps': 1024, 'seeds': [0], 'out': {str(tmp_path)!r}}}))"
    )
    env = {**os.environ, "METATRUST_DISABLE_NUMBA": "1"}
    subprocess.run([sys.executable, "-c", code], env=env, check=True)
    assert (tmp_path / "experiment" / "full_meta" / "seed0" / "summary.json").exists()

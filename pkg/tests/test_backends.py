import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mglmmnet import _kernels, _series_py
from mglmmnet.families import CompoundPoisson
from mglmmnet.glmm import ResponseSpec, fit

from helpers import simulate_one

needs_compiled = pytest.mark.skipif("cython" not in _kernels.available_backends(),
                                    reason="compiled kernel not built")


@pytest.fixture
def restore_backend():
    before = _kernels.BACKEND
    yield
    _kernels.use_backend(before)


def test_python_backend_always_available():
    assert "python" in _kernels.available_backends()
    with pytest.raises(ValueError):
        _kernels.use_backend("fortran")


@needs_compiled
@settings(max_examples=100, deadline=None)
@given(p=st.floats(1.02, 1.98), phi=st.floats(0.01, 20),
       y=st.lists(st.floats(1e-4, 200), min_size=1, max_size=20))
def test_backends_agree(p, phi, y):
    from mglmmnet import _series
    a = _series.wright_log_sum(np.array(y), p, phi)
    b = _series_py.wright_log_sum(np.array(y), p, phi)
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    assert np.allclose(a[1], b[1], rtol=1e-10)
    assert np.array_equal(a[3], b[3])


@needs_compiled
def test_fit_identical_across_backends(restore_backend):
    table, _ = simulate_one(CompoundPoisson(1.5), (-0.3, 0.0, 0.3), 1.0, 0.5, 10, seed=2)
    spec = ResponseSpec("y", CompoundPoisson(1.5))
    results = {}
    for name in ("cython", "python"):
        _kernels.use_backend(name)
        results[name] = fit(table, spec)
    a, b = results["cython"], results["python"]
    assert a.log_likelihood == pytest.approx(b.log_likelihood, abs=1e-8)
    assert a.dispersion == pytest.approx(b.dispersion, rel=1e-6)


def test_environment_forces_fallback():
    code = "import mglmmnet._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, MGLMMNET_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosserat_lab import _kernels_py, kernels
from cosserat_lab.geometry import random_rotations

HAVE_C = "cython" in kernels.backends()


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from([2.0, 2.13, 2.5, 2.8]),
       st.sampled_from([0.0, 1e-3, 0.3]))
def test_backends_agree_on_pdirichlet(seed, p, eps):
    rng = np.random.default_rng(seed)
    R = random_rotations(rng, (5, 6, 4))
    c = kernels.backends()["cython"]
    e1, g1 = _kernels_py.pdirichlet(R, 0.2, p, eps)
    e2, g2 = c.pdirichlet(R, 0.2, p, eps)
    assert e2 == pytest.approx(e1, rel=1e-12)
    assert np.allclose(g2, g1, rtol=1e-11, atol=1e-12 * np.max(np.abs(g1)))


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@pytest.mark.parametrize("trailing", [(), (3,), (3, 3)])
def test_backends_agree_on_laplacian(trailing):
    u = np.random.default_rng(0).standard_normal((7, 5, 6) + trailing)
    c = kernels.backends()["cython"]
    a = _kernels_py.laplace7(u, 0.1)
    b = c.laplace7(u, 0.1)
    assert np.allclose(a, b, rtol=0, atol=1e-12 * np.max(np.abs(a)))


def test_python_fallback_selected_by_environment():
    env = dict(os.environ, COSSERAT_LAB_KERNELS="python")
    code = "from cosserat_lab import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_default_backend_prefers_compiled():
    assert kernels.BACKEND == ("cython" if HAVE_C else "python")

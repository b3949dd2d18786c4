"""Compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from contactfield import _backend, _fallback

pytestmark = pytest.mark.skipif("cython" not in _backend.available(), reason="extension not built")

finite = st.floats(-10, 10, allow_nan=False, width=64)


def _kernels():
    from contactfield import _kernels
    return _kernels


def _unit_rows(a):
    n = np.linalg.norm(a, axis=1, keepdims=True)
    a = np.where(n < 1e-6, [[0.0, 0.0, 1.0]], a)
    return np.ascontiguousarray(a / np.linalg.norm(a, axis=1, keepdims=True))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (16, 3), elements=finite), arrays(np.float64, (16, 3), elements=finite))
def test_cone_projection_parity(v, n):
    n = _unit_rows(n)
    v = np.ascontiguousarray(v)
    np.testing.assert_allclose(_kernels().cone_project_batch(v, n), _fallback.cone_project_batch(v, n),
                               rtol=1e-13, atol=1e-13)


def test_farthest_point_parity(rng):
    pts = rng.normal(size=(500, 3))
    for start in (0, 17, 499):
        a = _kernels().farthest_point_sample(pts, 64, start)
        b = _fallback.farthest_point_sample(pts, 64, start)
        np.testing.assert_array_equal(a, b)


def test_kernel_mean_parity(rng):
    pts = rng.normal(size=(200, 3)) * 0.05
    cpos = rng.normal(size=(9, 3)) * 0.05
    cvec = rng.normal(size=(9, 3))
    ma, wa = _kernels().kernel_weighted_mean(pts, cpos, cvec, 50.0)
    mb, wb = _fallback.kernel_weighted_mean(pts, cpos, cvec, 50.0)
    np.testing.assert_allclose(ma, mb, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(wa, wb, rtol=1e-12)


def test_admm_sweep_parity(rng):
    m = 12
    a = rng.normal(size=(m, m))
    minv = np.ascontiguousarray(np.linalg.inv(a @ a.T + np.eye(m)))
    q = rng.normal(size=m)
    normals = _unit_rows(rng.normal(size=(m // 3, 3)))
    states = []
    for mod in (_kernels(), _fallback):
        x, z, u = np.zeros(m), np.zeros(m), np.zeros(m)
        out = mod.admm_run(minv, q, normals, x, z, u, 1.0, 1.6, 40, 1e-30, 1e-30)
        states.append((out, x, z, u))
    (oa, *sa), (ob, *sb) = states
    assert oa[0] == ob[0] == 40
    for p, r in zip(sa, sb):
        np.testing.assert_allclose(p, r, rtol=1e-10, atol=1e-12)


def test_use_switches_and_rejects_unknown():
    before = _backend.NAME
    _backend.use("python")
    assert _backend.kernels is _fallback
    _backend.use(before)
    with pytest.raises(ValueError):
        _backend.use("fortran")


def test_environment_variable_forces_fallback():
    env = dict(os.environ, CONTACTFIELD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import contactfield; print(contactfield.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survchallenge import _kernels
from survchallenge._kernels import _pykernels

from oracles import cindex_pairs

def test_extension_built():
    assert "cython" in _kernels.available_backends()
    assert _kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "from survchallenge import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, SURVCHALLENGE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.concordance_counts(np.zeros(2), np.ones(2), np.ones(2, bool), backend="fortran")


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_concordance_backends_agree_with_oracle(draw):
    n = draw.draw(st.integers(2, 40))
    risk = np.array(draw.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n)), dtype=float)
    time = np.array(draw.draw(st.lists(st.integers(1, 8), min_size=n, max_size=n)), dtype=float)
    event = np.array(draw.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    counts = {b: _kernels.concordance_counts(risk, time, event, backend=b) for b in _kernels.available_backends()}
    assert len(set(counts.values())) == 1
    conc, tied, comp = counts["python"]
    if comp:
        assert (conc + 0.5 * tied) / comp == pytest.approx(cindex_pairs(risk, time, event), abs=1e-15)


def test_concordance_blocking_boundary():
    # sizes around the fallback's block length exercise the chunk seams
    rng = np.random.default_rng(0)
    for n in (_pykernels._BLOCK - 1, _pykernels._BLOCK, _pykernels._BLOCK + 1, 2 * _pykernels._BLOCK + 3):
        risk = rng.integers(0, 50, n).astype(float)
        time = rng.integers(1, 30, n).astype(float)
        event = rng.random(n) < 0.6
        a = _kernels.concordance_counts(risk, time, event, backend="python")
        b = _kernels.concordance_counts(risk, time, event, backend="cython")
        assert a == b


@pytest.mark.parametrize("ties", [False, True])
def test_cox_backends_agree(ties):
    rng = np.random.default_rng(7)
    n, d = 300, 4
    X = rng.standard_normal((n, d))
    time = rng.exponential(size=n)
    if ties:
        time = np.ceil(time * 4)
    event = rng.random(n) < 0.7
    order = np.argsort(-time, kind="stable")
    X, time, event = X[order], time[order], event[order]
    eta = X @ rng.normal(scale=0.3, size=d)
    out = [_kernels.cox_breslow(X, eta, time, event, backend=b) for b in ("python", "cython")]
    assert out[0][0] == pytest.approx(out[1][0], rel=1e-12)
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(out[0][2], out[1][2], rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal(out[1][2], out[1][2].T)


def test_cox_kernel_shift_invariant(backend):
    # adding a constant to eta must not change the partial likelihood
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 2))
    time = np.sort(rng.exponential(size=50))[::-1]
    event = np.ones(50, bool)
    eta = X @ np.array([0.5, -0.2])
    a = _kernels.cox_breslow(X, eta, time, event, backend=backend)
    b = _kernels.cox_breslow(X, eta + 700.0, time, event, backend=backend)
    assert a[0] == pytest.approx(b[0], rel=1e-9)
    np.testing.assert_allclose(a[1], b[1], atol=1e-9)

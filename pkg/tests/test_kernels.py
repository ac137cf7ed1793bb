import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htdemucs import _kernels

pytestmark = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")


def _overlap_add_loop(frames, stride, out_len):
    m, n, k = frames.shape
    out = np.zeros((m, out_len))
    for a in range(m):
        for i in range(n):
            for j in range(k):
                out[a, i * stride + j] += frames[a, i, j]
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 12), st.integers(1, 9), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_overlap_add_paths_agree(m, n, k, stride, seed):
    frames = np.random.default_rng(seed).standard_normal((m, n, k))
    out_len = max(0, (n - 1) * stride + k) if n else 4
    ref = _overlap_add_loop(frames, stride, out_len)
    np.testing.assert_allclose(_kernels.overlap_add_numpy(frames, stride, out_len), ref, atol=1e-12)
    np.testing.assert_allclose(_kernels.overlap_add_numba(frames, stride, out_len), ref, atol=1e-12)


@pytest.mark.parametrize("shape,stride", [((2, 7, 3, 8), 4), ((1, 3, 5, 2), 2), ((3, 1, 2, 4), 1)])
def test_col2im_paths_agree(rng, shape, stride):
    cols = rng.standard_normal(shape)
    out_len = (shape[1] - 1) * stride + shape[3]
    a = _kernels.col2im_numpy(cols, stride, out_len)
    b = _kernels.col2im_numba(cols, stride, out_len)
    np.testing.assert_allclose(a, b, atol=1e-12)
    # loop oracle on one channel
    ref = _overlap_add_loop(cols[:, :, 0, :], stride, out_len)
    np.testing.assert_allclose(a[:, 0], ref, atol=1e-12)


def test_env_flag_selects_numpy_path():
    code = "from htdemucs import _kernels; print(_kernels.USE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"HTDEMUCS_NUMBA": "0", "PATH": ""}, check=True)
    assert out.stdout.strip() == "False"

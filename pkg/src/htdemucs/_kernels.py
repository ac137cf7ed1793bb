"""Hot inner loops, with a numba path and a pure-numpy fallback.

Set ``HTDEMUCS_NUMBA=0`` before import to force the numpy path. Both paths
are always importable so they can be benchmarked and cross-checked.
"""
import os

import numpy as np

try:
    import numba
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("HTDEMUCS_NUMBA", "1") not in ("0", "false", "no")


# --- overlap-add: shared by transposed convolution, conv backward, iSTFT ----

def overlap_add_numpy(frames, stride, out_len):
    """Sum ``frames[m, i, :]`` into ``out[m, i*stride : i*stride + K]``."""
    m, n, k = frames.shape
    out = np.zeros((m, out_len), dtype=frames.dtype)
    if n == 0:
        return out
    if k <= n:
        # loop over kernel taps: each tap is one strided slice add
        for j in range(k):
            stop = j + (n - 1) * stride + 1
            out[:, j:stop:stride] += frames[:, :, j]
    else:
        for i in range(n):
            out[:, i * stride:i * stride + k] += frames[:, i, :]
    return out


if HAS_NUMBA:
    @njit(cache=True, nogil=True)
    def _overlap_add_jit(frames, stride, out):
        m, n, k = frames.shape
        for a in range(m):
            for i in range(n):
                base = i * stride
                for j in range(k):
                    out[a, base + j] += frames[a, i, j]
        return out

    def overlap_add_numba(frames, stride, out_len):
        frames = np.ascontiguousarray(frames)
        out = np.zeros((frames.shape[0], out_len), dtype=frames.dtype)
        return _overlap_add_jit(frames, stride, out)
else:  # pragma: no cover
    overlap_add_numba = overlap_add_numpy


def overlap_add(frames, stride, out_len):
    lead = frames.shape[:-2]
    flat = frames.reshape((-1,) + frames.shape[-2:])
    if USE_NUMBA:
        out = overlap_add_numba(flat, stride, out_len)
    else:
        out = overlap_add_numpy(flat, stride, out_len)
    return out.reshape(lead + (out_len,))


def col2im_numpy(cols, stride, out_len):
    """``cols[b, t, c, k]`` summed into ``out[b, c, t*stride + k]``."""
    b, n, c, k = cols.shape
    frames = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(b * c, n, k)
    return overlap_add_numpy(frames, stride, out_len).reshape(b, c, out_len)


if HAS_NUMBA:
    @njit(cache=True, nogil=True)
    def _col2im_jit(cols, stride, out):
        b, n, c, k = cols.shape
        for a in range(b):
            for t in range(n):
                base = t * stride
                for ch in range(c):
                    for j in range(k):
                        out[a, ch, base + j] += cols[a, t, ch, j]
        return out

    def col2im_numba(cols, stride, out_len):
        cols = np.ascontiguousarray(cols)
        out = np.zeros((cols.shape[0], cols.shape[2], out_len), dtype=cols.dtype)
        return _col2im_jit(cols, stride, out)
else:  # pragma: no cover
    col2im_numba = col2im_numpy


def col2im(cols, stride, out_len):
    if USE_NUMBA:
        return col2im_numba(cols, stride, out_len)
    return col2im_numpy(cols, stride, out_len)


# --- LSH bucket collision counting -----------------------------------------

def collision_counts_numpy(codes_q, codes_k, block=256):
    """``counts[q, k] = #{r : codes_q[r, q] == codes_k[r, k]}``."""
    rounds, nq = codes_q.shape
    nk = codes_k.shape[1]
    counts = np.zeros((nq, nk), dtype=np.int32)
    for start in range(0, nq, block):
        cq = codes_q[:, start:start + block]
        eq = cq[:, :, None] == codes_k[:, None, :]
        counts[start:start + block] = eq.sum(axis=0, dtype=np.int32)
    return counts


if HAS_NUMBA:
    @njit(cache=True, nogil=True)
    def _collision_counts_jit(codes_q, codes_k, counts):
        rounds, nq = codes_q.shape
        nk = codes_k.shape[1]
        for r in range(rounds):
            for q in range(nq):
                c = codes_q[r, q]
                for k in range(nk):
                    if codes_k[r, k] == c:
                        counts[q, k] += 1
        return counts

    def collision_counts_numba(codes_q, codes_k):
        codes_q = np.ascontiguousarray(codes_q, dtype=np.int8)
        codes_k = np.ascontiguousarray(codes_k, dtype=np.int8)
        counts = np.zeros((codes_q.shape[1], codes_k.shape[1]), dtype=np.int32)
        return _collision_counts_jit(codes_q, codes_k, counts)
else:  # pragma: no cover
    collision_counts_numba = collision_counts_numpy


def collision_counts(codes_q, codes_k):
    if USE_NUMBA:
        return collision_counts_numba(codes_q, codes_k)
    return collision_counts_numpy(codes_q, codes_k)


def set_num_threads(n):
    """Cap BLAS parallelism (the numba kernels are single-threaded)."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)

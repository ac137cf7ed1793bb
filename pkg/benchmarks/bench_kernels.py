"""Compare the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--forward]

Each kernel is timed on shapes taken from the default model (iSTFT overlap-add,
a decoder transposed convolution, LSH collision counting on a bottleneck-sized
token sequence). ``--forward`` also times a full toy-model forward pass in two
subprocesses, one per ``HTDEMUCS_NUMBA`` setting.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from htdemucs import _kernels

FORWARD_SNIPPET = """
import time, numpy as np
from htdemucs import numerics as nx
from htdemucs.transformer import TransformerConfig
from htdemucs.unet import ModelConfig, build_model
m = build_model(ModelConfig(channels=8, transformer=TransformerConfig(dim=64, depth=2)))
x = np.random.default_rng(0).standard_normal((2, 2 * 44100)).astype(np.float32)
with nx.no_grad():
    m.forward(x)
    t = time.perf_counter()
    for _ in range({repeat}):
        m.forward(x)
print((time.perf_counter() - t) / {repeat})
"""


def cases(rng):
    frames = rng.standard_normal((2, 431, 4096)).astype(np.float32)  # 10 s stereo iSTFT
    cols = rng.standard_normal((1, 2756, 48, 8)).astype(np.float32)  # first decoder convT
    codes_q = rng.integers(0, 4, (32, 1400)).astype(np.int8)
    codes_k = rng.integers(0, 4, (32, 1400)).astype(np.int8)
    yield ("overlap_add (iSTFT 10 s)",
           lambda: _kernels.overlap_add_numpy(frames, 1024, 434 * 1024 + 4096),
           lambda: _kernels.overlap_add_numba(frames, 1024, 434 * 1024 + 4096))
    yield ("col2im (convT K8 s4)",
           lambda: _kernels.col2im_numpy(cols, 4, 2755 * 4 + 8),
           lambda: _kernels.col2im_numba(cols, 4, 2755 * 4 + 8))
    yield ("collision_counts (1400x1400, 32 rounds)",
           lambda: _kernels.collision_counts_numpy(codes_q, codes_k),
           lambda: _kernels.collision_counts_numba(codes_q, codes_k))


def forward_time(use_numba, repeat):
    env = dict(os.environ, HTDEMUCS_NUMBA="1" if use_numba else "0")
    out = subprocess.run([sys.executable, "-c", FORWARD_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--forward", action="store_true", help="also time a toy-model forward pass")
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<42}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, f_np, f_nb in cases(rng):
        np.testing.assert_allclose(f_np(), f_nb(), rtol=1e-4, atol=1e-3)  # also warms the JIT
        t_np = min(timeit.repeat(f_np, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(f_nb, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<42}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.2f}x")

    if args.forward:
        t_np = forward_time(False, args.repeat) * 1e3
        t_nb = forward_time(True, args.repeat) * 1e3
        print(f"{'toy forward (2 s stereo)':<42}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

Shapes match one resonance tensor (C=8 channels, 5 bands, T=512, 256-sample
Welch segments) and one training batch through the 3x3 conv.

    python3 benchmarks/bench_kernels.py --repeat 20
"""
import argparse
import timeit

import numpy as np

from grn.kernels import available_backends


def make_inputs(rng, C=8, B=5, T=512, S=3, F=98, batch=48, cc=8):
    phase = rng.uniform(-np.pi, np.pi, size=(2, B, C, T))
    spectrum = rng.standard_normal((2, S, C, F)) + 1j * rng.standard_normal((2, S, C, F))
    x = rng.standard_normal((batch, 2, C, C))
    w = rng.standard_normal((cc, 2, 3, 3))
    b = rng.standard_normal(cc)
    g = rng.standard_normal((batch, cc, C - 2, C - 2))
    return {
        "band_plv": (np.exp(1j * phase[0]), np.exp(1j * phase[1])),
        "msc_mean": (spectrum[0], spectrum[1]),
        "conv2d_forward": (x, w, b),
        "conv2d_backward": (x, w, g),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    inputs = make_inputs(np.random.default_rng(args.seed))
    names = list(backends)
    print(f"{'kernel':18s}" + "".join(f"{n + ' (ms)':>16s}" for n in names) + ("   speedup  agree" if len(names) > 1 else ""))
    for kernel, kargs in inputs.items():
        times, outs = [], []
        for n in names:
            fn = getattr(backends[n], kernel)
            outs.append(fn(*kargs))
            t = min(timeit.repeat(lambda: fn(*kargs), number=1, repeat=args.repeat))
            times.append(1e3 * t)
        line = f"{kernel:18s}" + "".join(f"{t:16.3f}" for t in times)
        if len(names) > 1:
            line += f"   {times[0] / times[1]:6.1f}x  {agree(outs[0], outs[1])}"
        print(line)


if __name__ == "__main__":
    main()

"""Compare the compiled recurrent kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Shapes match the default model sizes: the speaker encoder LSTM (hidden 128,
batch 8, 40 frames), the synthesizer CBHG GRU (hidden 128, one utterance of
40 tokens), vocoder training (GRU hidden 256, batch 4, 1000 samples) and
vocoder generation (hidden 256, fc 256, 256 classes).
"""

import argparse
import timeit

import numpy as np

from multivox import kernels


def gru_case(T, B, H, rng):
    gx = rng.normal(size=(T, B, 3 * H))
    h0 = rng.normal(size=(B, H))
    U = rng.normal(scale=1 / np.sqrt(H), size=(H, 3 * H))
    dhs = rng.normal(size=(T, B, H))
    return gx, h0, U, dhs


def lstm_case(T, B, H, rng):
    gx = rng.normal(size=(T, B, 4 * H))
    h0, c0 = rng.normal(size=(B, H)), rng.normal(size=(B, H))
    U = rng.normal(scale=1 / np.sqrt(H), size=(H, 4 * H))
    dhs = rng.normal(size=(T, B, H))
    return gx, h0, c0, U, dhs


def generate_case(T, H, F, Q, rng):
    return (rng.normal(size=(T, 3 * H)), rng.normal(size=(Q, 3 * H)), rng.normal(scale=1 / np.sqrt(H), size=(H, 3 * H)),
            rng.normal(size=(H, F)) / np.sqrt(H), np.zeros(F), rng.normal(size=(F, Q)) / np.sqrt(F), np.zeros(Q))


def workloads(quick):
    rng = np.random.default_rng(0)
    scale = 4 if quick else 1
    gen_T = 2000 // scale
    lstm = lstm_case(40, 8, 128, rng)
    gru_small = gru_case(40, 1, 128, rng)
    gru_big = gru_case(1000 // scale, 4, 256, rng)
    gen = generate_case(gen_T, 256, 256, 256, rng)
    uniforms = rng.random(gen_T)

    def lstm_fb(k):
        gx, h0, c0, U, dhs = lstm
        out = k.lstm_forward(gx, h0, c0, U)
        k.lstm_backward(dhs, *out, U)

    def gru_fb(case):
        def run(k):
            gx, h0, U, dhs = case
            out = k.gru_forward(gx, h0, U)
            k.gru_backward(dhs, *out, U)
        return run

    return [
        ("speaker LSTM fwd+bwd (T40 B8 H128)", lstm_fb),
        ("CBHG GRU fwd+bwd (T40 B1 H128)", gru_fb(gru_small)),
        (f"vocoder GRU fwd+bwd (T{gru_big[0].shape[0]} B4 H256)", gru_fb(gru_big)),
        (f"generation argmax ({gen_T} samples)", lambda k: k.wavernn_generate(*gen, None, 128)),
        (f"generation sample ({gen_T} samples)", lambda k: k.wavernn_generate(*gen, uniforms, 128)),
    ]


def best_time(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="shorter sequences")
    args = parser.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    rows = []
    for name, work in workloads(args.quick):
        py = best_time(lambda: work(kernels.python_backend), args.repeat)
        cy = best_time(lambda: work(kernels.compiled_backend), args.repeat)
        rows.append((name, py, cy))
    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'python ms':>10}  {'cython ms':>10}  {'speedup':>8}")
    for name, py, cy in rows:
        print(f"{name:<{width}}  {1e3 * py:>10.2f}  {1e3 * cy:>10.2f}  {py / cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Benchmark: compiled convolution kernels vs the numpy fallback.

Shapes mirror the training hot paths (packed character steps, conv-LSTM
gates, prediction torso). Also times one full training step per backend.

    python benchmarks/bench_kernels.py [--steps 30]
"""

import argparse
import importlib
import os
import time

import numpy as np


def bench_conv(mod, x, w, gy, repeats=30):
    y, cols = mod.conv2d_forward(x, w, return_cols=True)
    mod.conv2d_backward(x, w, gy, cols)
    t0 = time.perf_counter()
    for _ in range(repeats):
        mod.conv2d_forward(x, w, return_cols=True)
    t1 = time.perf_counter()
    for _ in range(repeats):
        mod.conv2d_backward(x, w, gy, cols)
    t2 = time.perf_counter()
    return (t1 - t0) / repeats * 1e3, (t2 - t1) / repeats * 1e3


def bench_training_step(backend: str, steps: int) -> float:
    os.environ["TOMLAB_KERNELS"] = backend
    import tomlab.nn.kernels as kernels
    importlib.reload(kernels)  # re-select the backend; tensor calls through the module
    import tomlab.nn.tensor as tensor

    from tomlab.config import parse_config
    from tomlab.harness import dataset as ds
    from tomlab.harness.batches import build_batch, draw_samples
    from tomlab.nn.optim import Adam
    from tomlab.tomnet import ToMnet

    exp = parse_config({
        "name": "bench",
        "world": {"walls": [0, 4], "timeout": 31},
        "population": {"species": "random", "alpha": 0.01, "n_train_agents": 30,
                       "n_test_agents": 4, "episodes_per_agent": 12,
                       "truncate_steps": 1},
        "model": {"char_arch": "episodic", "e_char_dim": 2, "channels": 16},
        "training": {"steps": steps, "split_rule": "zero"},
    })
    rng = np.random.default_rng(0)
    specs = ds.sample_population(exp["population"], 30, "bench", rng)
    records = ds.generate_dataset(exp.world_config(), specs, 12, seed=1,
                                  truncate_steps=1)
    data = ds.Dataset({}, records)
    tensor.set_default_dtype(np.float32)
    cfg = exp.model_config()
    model = ToMnet(cfg, np.random.default_rng(1))
    opt = Adam(model.parameters())
    npast = exp.npast_rule()
    r = np.random.default_rng(2)

    def one_step():
        samples = draw_samples(data, cfg, r, 16, npast, "zero")
        batch = build_batch(samples, cfg)
        opt.zero_grad()
        with tensor.Tape() as tape:
            out = model.forward(batch, training=True, rng=r)
            total, _ = model.loss(out, batch)
        tensor.backward(tape, total)
        opt.step()

    one_step()
    t0 = time.perf_counter()
    for _ in range(steps):
        one_step()
    return (time.perf_counter() - t0) / steps * 1e3


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=30)
    args = parser.parse_args()

    from tomlab.nn import _kernels_np as knp

    backends = [("numpy-fallback", knp)]
    try:
        from tomlab.nn import _kernels_cy as kcy
        backends.append(("cython-blas", kcy))
    except ImportError:
        print("compiled kernels unavailable; benchmarking the fallback only")

    shapes = [
        ("char steps 13->8", (160, 11, 11, 13), (3, 3, 13, 8)),
        ("conv-lstm gates 16->64", (160, 11, 11, 16), (3, 3, 16, 64)),
        ("torso 33->32", (16, 11, 11, 33), (3, 3, 33, 32)),
        ("torso block 32->32", (16, 11, 11, 32), (3, 3, 32, 32)),
        ("head 32->5 (1x1)", (16, 11, 11, 32), (1, 1, 32, 5)),
    ]
    rng = np.random.default_rng(0)
    print(f"{'shape':26s}" + "".join(f"{name:>26s}" for name, _ in backends))
    for label, xs, ws in shapes:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        gy = rng.standard_normal(xs[:3] + (ws[3],)).astype(np.float32)
        cells = []
        for _, mod in backends:
            fwd, bwd = bench_conv(mod, x, w, gy)
            cells.append(f"{fwd:6.2f} / {bwd:6.2f} ms")
        print(f"{label:26s}" + "".join(f"{c:>26s}" for c in cells))

    print("\nfull training step (random-agent model, batch 16):")
    for name, _ in backends:
        ms = bench_training_step("fallback" if name == "numpy-fallback" else "compiled",
                                 args.steps)
        print(f"  {name:>16s}: {ms:7.1f} ms/step")


if __name__ == "__main__":
    main()

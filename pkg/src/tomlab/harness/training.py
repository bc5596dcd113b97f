"""The training loop: Adam on minibatches sampled from a dataset."""

from __future__ import annotations

import csv
import sys
import time
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig
from ..nn import Tape, backward
from ..nn import tensor as T
from ..nn.optim import Adam
from ..tomnet import ToMnet, beta_schedule
from .batches import build_batch, draw_samples
from .dataset import Dataset


def train(
    exp: ExperimentConfig,
    train_ds: Dataset,
    out_dir,
    seed: int,
    eval_ds: Dataset | None = None,
    progress: bool = False,
) -> dict:
    """Train per the config; returns paths of the checkpoint and metric log.

    Deterministic given (config, seed): identical logs and checkpoints.
    Aborts with a diagnostic if the loss stops being finite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = exp["training"]
    T.set_default_dtype(np.float32 if tcfg["dtype"] == "float32" else np.float64)
    cfg = exp.model_config()

    root = np.random.SeedSequence(seed)
    rng_init, rng_sample, rng_dvib, rng_eval = (
        np.random.default_rng(s) for s in root.spawn(4))

    model = ToMnet(cfg, rng_init)
    opt = Adam(model.parameters(), lr=tcfg["lr"])
    npast = exp.npast_rule()
    split_rule = tcfg["split_rule"]
    char_window = tcfg["char_window"]
    batch_size = tcfg["batch_size"]
    steps = tcfg["steps"]
    log_every = max(1, tcfg["log_every"])

    eval_batches = []
    if eval_ds is not None:
        for _ in range(exp["evaluation"]["eval_batches"]):
            samples = draw_samples(eval_ds, cfg, rng_eval, batch_size, npast, split_rule)
            eval_batches.append(build_batch(samples, cfg, char_window))

    metrics_path = out_dir / "train_log.csv"
    ckpt_path = out_dir / "checkpoint.ckpt"
    fieldnames = ["step", "loss_total", "loss_action", "loss_consumption",
                  "loss_sr", "loss_belief", "loss_kl", "beta", "eval_loss_total"]
    t_start = time.perf_counter()
    with open(metrics_path, "w", newline="") as fh:
        fh.write(f"# manifest={exp.config_hash()}-s{seed}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for step in range(steps):
            beta = beta_schedule(step, cfg.beta_anneal_steps, cfg.beta_max) if cfg.dvib else 0.0
            samples = draw_samples(train_ds, cfg, rng_sample, batch_size, npast, split_rule)
            batch = build_batch(samples, cfg, char_window)
            opt.zero_grad()
            with Tape() as tape:
                out = model.forward(batch, training=True, rng=rng_dvib)
                total, comps = model.loss(out, batch, beta=beta)
            if not np.isfinite(comps["total"]):
                raise RuntimeError(
                    f"training diverged at step {step}: loss components {comps}")
            backward(tape, total)
            opt.step()

            if step % log_every == 0 or step == steps - 1:
                row = {
                    "step": step,
                    "loss_total": f"{comps['total']:.6f}",
                    "loss_action": f"{comps.get('action', float('nan')):.6f}",
                    "loss_consumption": f"{comps.get('consumption', float('nan')):.6f}",
                    "loss_sr": f"{comps.get('sr', float('nan')):.6f}",
                    "loss_belief": f"{comps.get('belief', float('nan')):.6f}",
                    "loss_kl": f"{comps.get('kl', float('nan')):.6f}",
                    "beta": f"{beta:.8f}",
                    "eval_loss_total": "",
                }
                if eval_batches:
                    totals = []
                    for eb in eval_batches:
                        eout = model.forward(eb, training=False)
                        _, ecomps = model.loss(eout, eb, beta=beta)
                        totals.append(ecomps["total"])
                    row["eval_loss_total"] = f"{np.mean(totals):.6f}"
                writer.writerow(row)
                fh.flush()
                if progress:
                    rate = (step + 1) / (time.perf_counter() - t_start)
                    sys.stderr.write(
                        f"\r[{exp.name}] step {step + 1}/{steps} "
                        f"loss {comps['total']:.4f} ({rate:.1f} it/s)")
                    sys.stderr.flush()
    if progress:
        sys.stderr.write("\n")
    model.save(ckpt_path, meta={"step": steps, "experiment": exp.name,
                                "config_hash": exp.config_hash(), "seed": seed})
    return {"checkpoint": ckpt_path, "metrics": metrics_path, "model": model}

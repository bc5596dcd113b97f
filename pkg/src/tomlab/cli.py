"""Command-line surface: reproducible experiment pipelines.

Subcommands: gen, train, eval <experiment>, sally-anne, embed, oracle,
gradcheck. Every run writes a manifest.json into --out; artifacts carry the
deterministic manifest id (config hash + seed), so reruns are byte-identical.

Exit codes: 0 success, 1 usage or contract violation, 2 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, preset_names, resolve_config
from .gridworld import ContractViolation
from .harness import experiments as ex
from .harness import dataset as ds
from .harness.metrics import write_csv
from .harness.training import train as run_training
from .nn import tensor as T
from .oracle import dirichlet_posterior_predictive, expected_kl_species
from .tomnet import ToMnet


def _manifest_id(exp: ExperimentConfig, seed: int) -> str:
    return f"{exp.config_hash()}-s{seed}"


def _write_manifest(out_dir: Path, exp: ExperimentConfig, seed: int,
                    command: str, artifacts: dict) -> None:
    entries = {}
    for name, path in artifacts.items():
        p = Path(path)
        entries[name] = {
            "path": str(p),
            "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
        }
    manifest = {
        "manifest_id": _manifest_id(exp, seed),
        "config_hash": exp.config_hash(),
        "seed": seed,
        "command": command,
        "package_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": exp.data,
        "artifacts": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _set_dtype(exp: ExperimentConfig) -> None:
    T.set_default_dtype(
        np.float32 if exp["training"]["dtype"] == "float32" else np.float64)


def _load_datasets(exp: ExperimentConfig, data_dir: Path):
    with_beliefs = exp["model"]["belief_objects"] > 0
    train_p = data_dir / "dataset_train.ndjson"
    test_p = data_dir / "dataset_test.ndjson"
    train = ds.Dataset.from_file(train_p, with_beliefs) if train_p.exists() else None
    test = ds.Dataset.from_file(test_p, with_beliefs) if test_p.exists() else None
    return train, test


def cmd_gen(args) -> int:
    exp = resolve_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pop = exp["population"]
    wcfg = exp.world_config()
    artifacts = {}
    for role, n_agents, pop_seed, gen_seed in (
        ("train", pop["n_train_agents"], [args.seed, 11], [args.seed, 12]),
        ("test", pop["n_test_agents"], [args.seed, 21], [args.seed, 22]),
    ):
        rng = np.random.default_rng(np.random.SeedSequence(pop_seed))
        specs = ds.sample_population(pop, n_agents, role, rng)
        records = ds.generate_dataset(
            wcfg, specs, pop["episodes_per_agent"],
            seed=int(np.random.SeedSequence(gen_seed).generate_state(1)[0]),
            truncate_steps=pop["truncate_steps"])
        path = out / f"dataset_{role}.ndjson"
        ds.write_ndjson(path, records, header={
            "manifest": _manifest_id(exp, args.seed),
            "config_hash": exp.config_hash(),
            "seed": args.seed,
            "role": role,
            "n_agents": n_agents,
            "experiment": exp.name,
        })
        artifacts[f"dataset_{role}"] = path
    _write_manifest(out, exp, args.seed, "gen", artifacts)
    return 0


def cmd_train(args) -> int:
    exp = resolve_config(args.config)
    out = Path(args.out)
    data_dir = Path(args.data) if args.data else out
    train_ds, test_ds = _load_datasets(exp, data_dir)
    if train_ds is None:
        raise FileNotFoundError(f"no dataset_train.ndjson under {data_dir}")
    result = run_training(exp, train_ds, out, args.seed, eval_ds=test_ds,
                          progress=args.progress)
    _write_manifest(out, exp, args.seed, "train", {
        "checkpoint": result["checkpoint"], "train_log": result["metrics"]})
    return 0


def _load_model(path) -> ToMnet:
    model, meta = ToMnet.load(path)
    dtype = meta.get("dtype", "float32")
    T.set_default_dtype(np.float32 if dtype == "float32" else np.float64)
    return model


def cmd_eval(args) -> int:
    exp = resolve_config(args.config)
    _set_dtype(exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data) if args.data else out
    artifacts = {}

    if args.experiment == "posterior":
        model = _load_model(args.checkpoint[0])
        artifacts["posterior_curves"] = ex.eval_posterior_curves(
            model, exp, args.seed, out)
    elif args.experiment == "transfer":
        models = {}
        for spec_str in args.checkpoint:
            label, _, path = spec_str.partition("=")
            if not path:
                raise ContractViolation(
                    "transfer needs --checkpoint LABEL=PATH (label: alpha or 'mixture')")
            model = _load_model(path)
            if label == "mixture":
                alphas = exp["population"]["alphas"]
                components = [(1.0 / len(alphas), a) for a in alphas]
            else:
                components = [(1.0, float(label))]
            models[label] = (model, components)
        alphas = [float(a) for a in args.alphas.split(",")]
        artifacts["kl_matrix"] = ex.eval_species_transfer(
            models, exp, alphas, args.seed, out)
    elif args.experiment == "goal":
        model = _load_model(args.checkpoint[0])
        _, test_ds = _load_datasets(exp, data_dir)
        acc, emb = ex.eval_goal_inference(model, exp, test_ds, args.seed, out)
        artifacts["goal_accuracy"] = acc
        artifacts["embeddings"] = emb
    elif args.experiment == "greedy":
        model = _load_model(args.checkpoint[0])
        _, test_ds = _load_datasets(exp, data_dir)
        artifacts["greedy_contrast"] = ex.eval_greedy_contrast(
            model, exp, test_ds, args.seed, out)
    elif args.experiment == "natural-sally-anne":
        models = {}
        for spec_str in args.checkpoint:
            label, _, path = spec_str.partition("=")
            if not path:
                label, path = "model", spec_str
            models[label] = _load_model(path)
        artifacts["djs_curves"] = ex.eval_natural_sally_anne(
            models, exp, args.seed, out)
        if len(models) == 2:
            # two checkpoints on one frozen eval set: the no-swap-training
            # control; summarize how similar their policy curves are
            a, b = models.keys()
            corr = ex.no_swap_control_summary(artifacts["djs_curves"], a, b)
            artifacts["control_summary"] = write_csv(
                out / "control_summary.csv", _manifest_id(exp, args.seed),
                ["label_a", "label_b", "policy_rank_correlation"],
                [[a, b, corr]])
    elif args.experiment == "shuffle":
        model = _load_model(args.checkpoint[0])
        train_ds, test_ds = _load_datasets(exp, data_dir)
        artifacts["shuffle_ablation"] = ex.eval_shuffle_ablation(
            model, exp, train_ds, test_ds, args.seed, out)
    else:
        raise ContractViolation(f"unknown experiment {args.experiment!r}")
    _write_manifest(out, exp, args.seed, f"eval {args.experiment}", artifacts)
    return 0


def cmd_sally_anne(args) -> int:
    exp = resolve_config(args.config)
    _set_dtype(exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(args.checkpoint[0])
    path = ex.eval_sally_anne(model, exp, args.seed, out)
    _write_manifest(out, exp, args.seed, "sally-anne", {"sally_anne": path})
    return 0


def cmd_embed(args) -> int:
    exp = resolve_config(args.config)
    _set_dtype(exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data) if args.data else out
    model = _load_model(args.checkpoint[0])
    _, test_ds = _load_datasets(exp, data_dir)
    path = ex.dump_embeddings(model, exp, test_ds, args.seed, out)
    _write_manifest(out, exp, args.seed, "embed", {"embeddings": path})
    return 0


def cmd_oracle(args) -> int:
    rows = []
    if args.kl_matrix:
        alphas = [float(a) for a in args.alphas.split(",")]
        rng = np.random.default_rng(args.seed)
        for a_train in alphas:
            for a_test in alphas:
                est = expected_kl_species(a_train, a_test, args.npast,
                                          args.mc_samples, rng)
                rows.append([a_train, a_test, args.npast, est.value, est.stderr])
        header = ["alpha_train", "alpha_test", "n_past", "kl", "stderr"]
        name = "oracle_kl_matrix.csv"
    else:
        counts = np.zeros(5)
        counts[0] = args.npast
        pred = dirichlet_posterior_predictive(counts, args.alpha)
        rows.append([args.alpha, args.npast, pred[0]])
        header = ["alpha", "n_past", "predictive"]
        name = "oracle_predictive.csv"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / name, f"oracle-s{args.seed}", header, rows)
    writer = __import__("csv").writer(sys.stdout)
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return 0


def cmd_gradcheck(args) -> int:
    from .nn import grad_check, layers as L
    from .nn import tensor as TT

    TT.set_default_dtype(np.float64)
    rng = np.random.default_rng(0)
    results = {}

    lin = L.Dense(7, 9, rng)
    lin2 = L.Dense(9, 3, rng)
    x = TT.Tensor(rng.standard_normal((4, 7)))
    assert np.abs(lin(x).data).min() > 0.02, "relu margin violated"
    results["fully_connected+relu"] = grad_check(
        lambda: TT.sum_all(TT.square(lin2(TT.relu(lin(x))))),
        lin.parameters() + lin2.parameters())

    conv = L.Conv2d(3, 6, rng)
    xc = TT.Tensor(rng.standard_normal((2, 7, 7, 3)))
    results["conv2d"] = grad_check(
        lambda: TT.sum_all(TT.square(conv(xc))), conv.parameters())

    bn = L.BatchNorm2d(6)
    results["batch_norm"] = grad_check(
        lambda: TT.sum_all(TT.square(bn(conv(xc), training=True))),
        conv.parameters() + bn.parameters())

    lstm = L.LSTMCell(5, 8, rng)
    xs = [TT.Tensor(rng.standard_normal((3, 5))) for _ in range(3)]

    def lstm_loss():
        h = c = None
        for xt in xs:
            h, c = lstm.step(xt, h, c)
        return TT.sum_all(TT.square(h))

    results["lstm_step"] = grad_check(lstm_loss, lstm.parameters())

    clstm = L.ConvLSTMCell(4, 6, rng)
    xcs = [TT.Tensor(rng.standard_normal((2, 5, 5, 4))) for _ in range(2)]

    def clstm_loss():
        h = c = None
        for xt in xcs:
            h, c = clstm.step(xt, h, c)
        return TT.mean_all(TT.square(h))

    results["conv_lstm_step"] = grad_check(clstm_loss, clstm.parameters())

    fc = L.Dense(6, 5, rng)
    target = np.zeros((2, 5))
    target[np.arange(2), [1, 3]] = 1.0

    def head_loss():
        # no relu here: finite differences are only valid away from its kinks,
        # and the kink-free relu checks live in the dense/conv chains above
        pooled = TT.avg_pool_global(conv(xc))
        logits = TT.matmul(pooled, fc.w)
        return TT.scale(TT.sum_all(TT.mul(TT.log_softmax(logits), TT.Tensor(target))), -1.0)

    results["softmax_nll"] = grad_check(head_loss, [fc.w] + conv.parameters())

    worst = max(results.values())
    for name, err in sorted(results.items()):
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:18s} max_rel_err={err:.3e}  {status}")
    print(f"worst={worst:.3e} tolerance={args.tolerance:g}")
    return 0 if worst < args.tolerance else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomlab",
        description="gridworld theory-of-mind laboratory "
                    f"(presets: {', '.join(preset_names())})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, data=False):
        p.add_argument("--config", required=True, help="config path or preset name")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", action="append", required=True,
                           help="checkpoint path (repeatable; LABEL=PATH where needed)")
        if data:
            p.add_argument("--data", default=None, help="dataset directory (default: --out)")

    common(sub.add_parser("gen", help="generate train/test datasets"))
    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p, data=True)
    p.add_argument("--progress", action="store_true")
    p = sub.add_parser("eval", help="run an evaluation experiment")
    p.add_argument("experiment", choices=[
        "posterior", "transfer", "goal", "greedy", "natural-sally-anne", "shuffle"])
    common(p, checkpoint=True, data=True)
    p.add_argument("--alphas", default="0.01,0.3,3.0")
    p = sub.add_parser("sally-anne", help="hand-crafted false-belief probe")
    common(p, checkpoint=True)
    p = sub.add_parser("embed", help="dump character embeddings")
    common(p, checkpoint=True, data=True)
    p = sub.add_parser("oracle", help="analytic curves (no model needed)")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--npast", type=int, default=1)
    p.add_argument("--kl-matrix", action="store_true")
    p.add_argument("--alphas", default="0.01,0.3,3.0")
    p.add_argument("--mc-samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    handlers = {
        "gen": cmd_gen,
        "train": cmd_train,
        "eval": cmd_eval,
        "sally-anne": cmd_sally_anne,
        "embed": cmd_embed,
        "oracle": cmd_oracle,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ContractViolation, ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

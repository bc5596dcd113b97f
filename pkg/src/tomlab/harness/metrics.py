"""Divergence measures and CSV output helpers shared by the experiments."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..gridworld import ContractViolation

LN2 = math.log(2.0)


def compute_djs(p, q) -> float:
    """Jensen-Shannon divergence, natural log: 0.5 KL(p||m) + 0.5 KL(q||m).

    Both inputs must be distributions on the same support (normalized within
    1e-6). Bounded by ln 2; zero iff p equals q.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ContractViolation(f"D_JS supports differ: {p.shape} vs {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if abs(d.sum() - 1.0) > 1e-6 or (d < -1e-12).any():
            raise ContractViolation(f"D_JS input {name} is not a distribution")
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0).sum()
        kl_qm = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0).sum()
    return float(0.5 * kl_pm + 0.5 * kl_qm)


def spearman_rank_correlation(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(path, manifest_id: str, header: list, rows: list) -> Path:
    """CSV with a leading ``# manifest=`` comment line and stable formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={manifest_id}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    rows = list(reader)
    return rows[0], rows[1:]

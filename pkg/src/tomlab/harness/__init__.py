from . import batches, dataset, experiments, metrics, training
from .metrics import compute_djs

__all__ = ["batches", "dataset", "experiments", "metrics", "training", "compute_djs"]

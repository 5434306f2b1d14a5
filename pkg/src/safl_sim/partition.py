"""Device shard construction with label skew and Gaussian-drawn shard sizes.

Each device k receives ``m_k = max(floor(x_k), 1)`` samples where
``x_k ~ Normal(mean_size, size_var)``, restricted to a label subset drawn
uniformly in size between 1 and ``max_labels_per_device``.  The first
``pure_count`` devices are forced to a single label (the biased-device
scenario).  Regression datasets have no labels to skew and are treated as a
single label class.

All randomness derives from ``PartitionSpec.seed`` alone, so a spec identifies
one partition regardless of caller threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Dataset


@dataclass(frozen=True)
class PartitionSpec:
    n: int
    mean_size: float
    size_var: float = 0.0
    max_labels_per_device: int = 1
    seed: int = 0
    pure_count: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("device count n must be >= 1")
        if self.mean_size <= 0:
            raise ValueError("mean_size must be > 0")
        if self.size_var < 0:
            raise ValueError("size_var must be >= 0")
        if self.max_labels_per_device < 1:
            raise ValueError("max_labels_per_device must be >= 1")
        if not (0 <= self.pure_count <= self.n):
            raise ValueError("pure_count must lie in [0, n]")


def _streams(spec: PartitionSpec):
    kids = np.random.SeedSequence(spec.seed).spawn(4)
    return tuple(np.random.default_rng(k) for k in kids)


def _draw_sizes(spec: PartitionSpec, rng: np.random.Generator) -> list[int]:
    draws = rng.normal(spec.mean_size, np.sqrt(spec.size_var), size=spec.n)
    return [max(int(np.floor(x)), 1) for x in draws]


def sample_sizes(spec: PartitionSpec) -> list[int]:
    """Shard sizes m_k = max(floor(x_k), 1), x_k ~ Normal(mean_size, size_var)."""
    sizes_rng, _, _, _ = _streams(spec)
    return _draw_sizes(spec, sizes_rng)


def partition(dataset: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Build the n label-restricted shards; ``|shard_k| == m_k`` exactly.

    Samples are drawn without replacement from the label-restricted pool when
    it is large enough, with replacement otherwise.
    """
    sizes_rng, labels_rng, draw_rng, _ = _streams(spec)
    sizes = _draw_sizes(spec, sizes_rng)

    if dataset.is_classification:
        label_values = dataset.labels()
        if spec.max_labels_per_device > label_values.size:
            raise ValueError("max_labels_per_device exceeds the number of labels present")
    else:
        label_values = None

    shards: list[Dataset] = []
    for k in range(spec.n):
        m_k = sizes[k]
        if label_values is None:
            pool = np.arange(len(dataset))
        else:
            pool = np.array([], dtype=np.intp)
            while pool.size == 0:
                if k < spec.pure_count:
                    n_lab = 1
                else:
                    n_lab = int(labels_rng.integers(1, spec.max_labels_per_device + 1))
                chosen = labels_rng.choice(label_values, size=n_lab, replace=False)
                pool = np.nonzero(np.isin(dataset.y, chosen))[0]
        if pool.size >= m_k:
            idx = draw_rng.choice(pool, size=m_k, replace=False)
        else:
            idx = draw_rng.choice(pool, size=m_k, replace=True)
        shards.append(dataset.subset(idx))
    return shards


def partition_with_holdout(
    dataset: Dataset,
    spec: PartitionSpec,
    holdout_fraction: float = 0.2,
) -> list[tuple[Dataset, Dataset]]:
    """Partition, then split each shard into (train, holdout) pieces.

    The holdout takes ``floor(m_k * holdout_fraction)`` samples (possibly
    zero), leaving at least one training sample.  The split is driven by the
    partition seed, so every run over the same spec sees the same split.
    """
    if not (0.0 <= holdout_fraction < 1.0):
        raise ValueError("holdout_fraction must lie in [0, 1)")
    _, _, _, split_rng = _streams(spec)
    out = []
    for shard in partition(dataset, spec):
        m = len(shard)
        n_hold = min(int(np.floor(m * holdout_fraction)), m - 1)
        perm = split_rng.permutation(m)
        out.append((shard.subset(perm[n_hold:]), shard.subset(perm[:n_hold])))
    return out

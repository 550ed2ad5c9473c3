"""Hold-out and k-fold dataset partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from coips.errors import ConfigError

HOLDOUT_NAMES = ("train", "test", "internal_test", "external_test")
# sOCTA-3x3-10k hold-out set sizes: training, testing, internal, external testing
TABLE3_COUNTS = (6915, 2965, 300, 300)


@dataclass(frozen=True)
class HoldoutScheme:
    """Either proportional ``ratios`` (any positive weights) or absolute ``counts``."""

    names: Tuple[str, ...] = HOLDOUT_NAMES
    ratios: Tuple[float, ...] = TABLE3_COUNTS
    counts: Tuple[int, ...] = ()


@dataclass(frozen=True)
class KFoldScheme:
    k: int = 5


@dataclass
class DatasetSplit:
    assignment: Dict[str, Union[str, int]] = field(default_factory=dict)

    def groups(self) -> Dict[Union[str, int], List[str]]:
        out: Dict[Union[str, int], List[str]] = {}
        for sid, part in self.assignment.items():
            out.setdefault(part, []).append(sid)
        return out

    def sizes(self) -> Dict[Union[str, int], int]:
        return {k: len(v) for k, v in self.groups().items()}


def proportional_sizes(total: int, weights: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of ``total`` items by ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or w.size == 0 or (w < 0).any() or w.sum() <= 0:
        raise ConfigError(f"cannot apportion {total} items over weights {list(weights)}")
    exact = total * w / w.sum()
    sizes = np.floor(exact).astype(int)
    remainder = exact - sizes
    # stable sort: equal remainders go to the earlier part
    for i in np.argsort(-remainder, kind="stable")[: total - int(sizes.sum())]:
        sizes[i] += 1
    return sizes.tolist()


def _shuffled(ids: Sequence[str], seed: int) -> List[str]:
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise ConfigError("ids must be unique")
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return [ordered[i] for i in perm]


def kfold(ids: Sequence[str], k: int, seed: int) -> List[List[str]]:
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    if len(ids) < k:
        raise ConfigError(f"cannot make {k} folds from {len(ids)} samples")
    order = _shuffled(ids, seed)
    base, extra = divmod(len(order), k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(sorted(order[start : start + size]))
        start += size
    return folds


def split_dataset(ids: Sequence[str], scheme: Union[HoldoutScheme, KFoldScheme], seed: int = 0) -> DatasetSplit:
    if not ids:
        raise ConfigError("cannot split an empty id list")
    if isinstance(scheme, KFoldScheme):
        folds = kfold(ids, scheme.k, seed)
        return DatasetSplit({sid: i for i, fold in enumerate(folds) for sid in fold})
    if scheme.counts:
        sizes = list(scheme.counts)
        if any(s < 0 for s in sizes) or sum(sizes) > len(ids):
            raise ConfigError(f"requested split sizes {sizes} exceed population {len(ids)}")
    else:
        sizes = proportional_sizes(len(ids), scheme.ratios)
    if len(sizes) != len(scheme.names):
        raise ConfigError("split names and sizes differ in length")
    order = _shuffled(ids, seed)
    assignment: Dict[str, Union[str, int]] = {}
    start = 0
    for name, size in zip(scheme.names, sizes):
        for sid in order[start : start + size]:
            assignment[sid] = name
        start += size
    for sid in order[start:]:
        assignment[sid] = "unused"
    return DatasetSplit(assignment)

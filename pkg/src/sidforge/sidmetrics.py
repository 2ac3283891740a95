"""Codebook-utilization and coding-rate diagnostics over encoded catalogs.

``cur`` counts distinct hierarchy-code prefixes against the configured
capacity; ``icr`` is the fraction of items whose code tuple is shared
with no other item. ``drift_report`` replays catalog growth against a
frozen codebook.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .quantizer import RqOpqCodebook, encode_batch
from .sids import Sid, SidCatalog


def cur(catalog: SidCatalog, prefix_len: int) -> float:
    """Distinct hierarchy prefixes of ``prefix_len`` over the prefix capacity."""
    n_levels = len(catalog.scheme.rq_sizes)
    if not 1 <= prefix_len <= n_levels:
        raise ValueError(f"prefix_len {prefix_len} outside [1, {n_levels}]")
    prefixes = {sid.rq[:prefix_len] for sid in catalog.entries.values()}
    return len(prefixes) / prod(catalog.scheme.rq_sizes[:prefix_len])


def icr(catalog: SidCatalog, use_opq: bool = True) -> float:
    """Fraction of items holding a code tuple shared with no other item."""
    if len(catalog) == 0:
        return 0.0
    counts = Counter(
        sid.digits if use_opq else sid.rq for sid in catalog.entries.values()
    )
    unique = sum(1 for sid in catalog.entries.values()
                 if counts[sid.digits if use_opq else sid.rq] == 1)
    return unique / len(catalog)


@dataclass(frozen=True)
class DriftStep:
    batch_index: int
    batch_size: int
    cumulative_size: int
    icr: float                 # cumulative ICR after appending the batch
    occupied_ratio: float      # fraction of the batch landing on already-taken codes


def drift_report(
    codebook: RqOpqCodebook,
    baseline: SidCatalog,
    batches: Sequence[np.ndarray],
    use_opq: bool = True,
) -> list[DriftStep]:
    """Encode each arriving batch against the frozen codebook and track
    cumulative ICR plus the share of batch items whose code was already
    occupied before the batch arrived."""
    if not batches:
        raise ValueError("need at least one arriving batch")

    def key(sid: Sid):
        return sid.digits if use_opq else sid.rq

    counts = Counter(key(sid) for sid in baseline.entries.values())
    total = len(baseline)
    steps: list[DriftStep] = []
    for b, batch in enumerate(batches):
        vecs = np.asarray(batch, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] == 0:
            raise ValueError(f"batch {b} must be a nonempty (n, d) array")
        if vecs.shape[1] != codebook.dim:
            raise ValueError(f"batch {b} has dim {vecs.shape[1]}, codebook dim is {codebook.dim}")
        sids = encode_batch(vecs, codebook)
        occupied_before = set(counts)
        hits = sum(1 for sid in sids if key(sid) in occupied_before)
        for sid in sids:
            counts[key(sid)] += 1
        total += len(sids)
        unique = sum(c for c in counts.values() if c == 1)
        steps.append(DriftStep(
            batch_index=b,
            batch_size=len(sids),
            cumulative_size=total,
            icr=unique / total,
            occupied_ratio=hits / len(sids),
        ))
    return steps

"""Per-image query accounting and the geometric neighbourhood audit.

The ledger is the attacks' proof of compliance: every oracle query is
entered against the id of the clean image it was derived from, together
with its l-infinity distance from that image, *before* the oracle is
called. Recording refuses (and counts a violation) when an image would
exceed its budget or a query leaves the epsilon ball.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import BudgetError, ProtocolError

# relative slack for rounding in (x + d) - x; a genuine escape is far larger
DISTANCE_RTOL = 1e-9


class QueryLedger:
    def __init__(self, budget, epsilon=None):
        if budget < 1:
            raise ValueError("budget must be at least 1")
        self.budget = int(budget)
        self.epsilon = epsilon
        self.counts = Counter()
        self.violations = 0
        self._ids = []
        self._dist = []
        self._n = 0

    def __len__(self):
        return self._n

    def record_batch(self, ids, distances, epsilon=None):
        """Atomically enter one query per element of ``ids``.

        Either every query is recorded or none is.
        """
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        distances = np.asarray(distances, dtype=np.float64).reshape(-1)
        if ids.shape != distances.shape:
            raise ValueError("one distance per queried id required")
        eps = self.epsilon if epsilon is None else epsilon
        if eps is not None:
            bad = np.flatnonzero(distances > eps * (1.0 + DISTANCE_RTOL))
            if len(bad):
                self.violations += 1
                k = bad[0]
                raise ProtocolError(
                    f"query for image {ids[k]} is {distances[k]:.6g} from its base, beyond epsilon {eps}",
                    int(ids[k]),
                )
        uniq, mult = np.unique(ids, return_counts=True)
        for i, m in zip(uniq.tolist(), mult.tolist()):
            if self.counts[i] + m > self.budget:
                self.violations += 1
                raise BudgetError(
                    f"image {i} would be queried {self.counts[i] + m} times, budget is {self.budget}",
                    i,
                )
        for i, m in zip(uniq.tolist(), mult.tolist()):
            self.counts[i] += m
        self._ids.append(ids)
        self._dist.append(distances)
        self._n += len(ids)

    @property
    def entries(self):
        """``(base_ids, query_indices, distances)`` as parallel arrays."""
        if not self._ids:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), np.zeros(0)
        ids = np.concatenate(self._ids)
        return ids, np.arange(len(ids)), np.concatenate(self._dist)

    def base_ids(self):
        return np.array(sorted(self.counts), dtype=np.int64)

    def summary(self):
        ids, _, dist = self.entries
        histogram = Counter(self.counts.values())
        return LedgerSummary(
            budget=self.budget,
            total_queries=int(len(ids)),
            distinct_images=len(self.counts),
            max_per_image=max(self.counts.values(), default=0),
            min_per_image=min(self.counts.values(), default=0),
            count_histogram={int(k): int(v) for k, v in sorted(histogram.items())},
            max_distance=float(dist.max()) if len(dist) else 0.0,
            violations=self.violations,
        )

    def save(self, path):
        ids, idx, dist = self.entries
        with open(path, "w") as fh:
            fh.write(json.dumps({"budget": self.budget, "epsilon": self.epsilon}) + "\n")
            for i, q, d in zip(ids.tolist(), idx.tolist(), dist.tolist()):
                fh.write(json.dumps({"base_id": i, "query_index": q, "distance": d}) + "\n")

    @classmethod
    def load(cls, path):
        """Rebuild a saved ledger; offending entries are counted as violations, not raised."""
        with open(path) as fh:
            head = json.loads(fh.readline())
            ledger = cls(head["budget"], head.get("epsilon"))
            ids, dist = [], []
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    ids.append(rec["base_id"])
                    dist.append(rec["distance"])
        if not ids:
            return ledger
        try:
            ledger.record_batch(ids, dist)
        except (BudgetError, ProtocolError):
            # replay entry by entry so every offending query is counted, not just the first
            ledger = cls(head["budget"], head.get("epsilon"))
            for i, d in zip(ids, dist):
                try:
                    ledger.record_batch([i], [d])
                except (BudgetError, ProtocolError):
                    pass
        return ledger


@dataclass
class LedgerSummary:
    budget: int
    total_queries: int
    distinct_images: int
    max_per_image: int
    min_per_image: int
    count_histogram: dict
    max_distance: float
    violations: int

    @property
    def clean(self):
        return self.violations == 0 and self.max_per_image <= self.budget

    def to_dict(self):
        return asdict(self)


def record_query(ledger, base_image_id, queried_point, base_point, epsilon=None):
    dist = float(np.abs(np.asarray(queried_point, float) - np.asarray(base_point, float)).max())
    ledger.record_batch([base_image_id], [dist], epsilon)


@dataclass
class NeighborhoodAudit:
    bases: int
    epsilon: float
    min_distance: float
    closest_pair: tuple
    flagged_pairs: list
    flagged_total: int

    @property
    def clean(self):
        return self.flagged_total == 0

    def to_dict(self):
        d = asdict(self)
        d["min_distance"] = None if not np.isfinite(self.min_distance) else self.min_distance
        d["clean"] = self.clean
        return d


def audit_neighborhoods(ledger, dataset, epsilon, capacity=1024):
    """Pairwise l-infinity check over every base image in ``ledger``.

    Per-image counting is only sufficient when no two queried bases can
    share a closed epsilon ball, i.e. when every pair is at least
    ``2 * epsilon`` apart. Pairs closer than that are flagged by id.
    """
    ids = ledger.base_ids()
    images = dataset.lookup(ids) if len(ids) else np.zeros((0, 1))
    best, i, j, flagged, total = _kernels.pairwise_linf(images, 2.0 * epsilon, capacity)
    pairs = [(int(ids[a]), int(ids[b])) for a, b in flagged]
    closest = (int(ids[i]), int(ids[j])) if i >= 0 else None
    return NeighborhoodAudit(len(ids), float(epsilon), best, closest, pairs, total)

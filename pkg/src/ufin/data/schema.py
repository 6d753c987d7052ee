"""Dataset schema types, label mapping, and the 80/10/10 split."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ufin.errors import DataError

SIDES = ("user", "item", "context")
KINDS = ("categorical", "text", "anonymous_id")


@dataclass(frozen=True)
class FieldSchema:
    """One feature field: name, which side it describes, and its kind.

    ``anonymous_id`` fields carry no semantics and are never rendered into
    prompts; they reach the model only through dedicated embedding tables.
    """

    name: str
    side: str
    kind: str
    vocabulary: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise DataError(f"field {self.name!r}: unknown side {self.side!r}")
        if self.kind not in KINDS:
            raise DataError(f"field {self.name!r}: unknown kind {self.kind!r}")


def validate_schema(fields: Sequence[FieldSchema]) -> None:
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DataError(f"duplicate field names in schema: {dupes}")


@dataclass
class InstanceRecord:
    """One labeled CTR event."""

    domain_id: int
    row_id: int
    label: int
    values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"row {self.row_id}: label must be 0 or 1, got {self.label!r}")


@dataclass
class DomainDataset:
    """Schema plus disjoint train/valid/test partitions for one domain.

    ``oracle_probs`` optionally maps row_id to the generating click
    probability; synthetic data carries it so tests can score against the
    Bayes ceiling.
    """

    domain_id: int
    schema: list[FieldSchema]
    train: list[InstanceRecord] = field(default_factory=list)
    valid: list[InstanceRecord] = field(default_factory=list)
    test: list[InstanceRecord] = field(default_factory=list)
    oracle_probs: Optional[dict[int, float]] = None

    def splits(self) -> dict[str, list[InstanceRecord]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def check_partitions(self) -> None:
        ids = [r.row_id for part in (self.train, self.valid, self.test) for r in part]
        if len(set(ids)) != len(ids):
            raise DataError(f"domain {self.domain_id}: partitions share row_ids")


def map_rating_to_label(rating: int) -> Optional[int]:
    """Map a 1..5 star rating to a binary label; rating 3 is dropped (None)."""
    if not isinstance(rating, (int, np.integer)) or not 1 <= rating <= 5:
        raise DataError(f"rating must be an integer in 1..5, got {rating!r}")
    if rating >= 4:
        return 1
    if rating <= 2:
        return 0
    return None


def split(
    records: Sequence[InstanceRecord], seed: int
) -> tuple[list[InstanceRecord], list[InstanceRecord], list[InstanceRecord]]:
    """Seeded shuffle, then 80/10/10 by count with remainders going to train."""
    n = len(records)
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [records[i] for i in order]
    n_valid = n // 10
    n_test = n // 10
    n_train = n - n_valid - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )

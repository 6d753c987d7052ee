"""Seeded multi-domain synthetic CTR benchmark with retained ground truth.

Each domain draws users with a latent topic preference and items with a
latent topic mixture.  Item text is built from shared topic word lists, so
any reasonable text encoder can recover the topic signal, while item
identifiers and name tokens are disjoint across domains.  The true click
probability of every generated row is kept on the dataset so tests can
score splits against the generating distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ufin.errors import DataError
from ufin.data.schema import DomainDataset, FieldSchema, InstanceRecord, split

TOPIC_STEMS = ("arcade", "botany", "cosmos", "drums", "ember", "fjord", "glacier", "harbor")
DAYPARTS = ("dawn", "noon", "dusk", "night")

CROSS_TERMS = ("user_item", "item_context", "user_context")


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; defaults are the desk-scale benchmark."""

    domains: int = 3
    users: int = 2000
    items: int = 1000
    interactions: int = 50000
    topics: int = 4
    vocab: int = 120  # total topic-word vocabulary, shared across domains
    tags_per_item: int = 4
    persona_blend: float = 0.15  # mass spread off the user's dominant topic
    mixture_blend: float = 0.25  # item mass on its secondary topic
    cross_terms: tuple[str, ...] = ("user_item", "item_context")
    affinity_weight: float = 6.0  # weight of the user_item term
    context_weight: float = 0.8  # weight of the *_context terms
    noise: float = 0.0  # std of extra Gaussian on the logit
    label_mode: str = "bernoulli"  # or "threshold"

    def validate(self) -> None:
        if self.topics < 2:
            raise DataError(f"topics must be >= 2, got {self.topics}")
        if self.vocab < self.topics:
            raise DataError(f"vocab {self.vocab} smaller than topic count {self.topics}")
        if self.domains < 1 or self.users < 1 or self.items < 1:
            raise DataError("domains, users and items must be positive")
        if self.interactions < 10:
            raise DataError(f"need at least 10 interactions per domain, got {self.interactions}")
        if self.label_mode not in ("bernoulli", "threshold"):
            raise DataError(f"unknown label_mode {self.label_mode!r}")
        for term in self.cross_terms:
            if term not in CROSS_TERMS:
                raise DataError(f"unknown cross term {term!r}")


def _topic_stem(t: int) -> str:
    return TOPIC_STEMS[t] if t < len(TOPIC_STEMS) else f"topic{t}"


def topic_words(config: SynthConfig) -> list[list[str]]:
    per_topic = config.vocab // config.topics
    return [
        [f"{_topic_stem(t)}{i:02d}" for i in range(per_topic)]
        for t in range(config.topics)
    ]


def domain_schema(domain_id: int, config: SynthConfig) -> list[FieldSchema]:
    personas = tuple(_topic_stem(t) for t in range(config.topics))
    return [
        FieldSchema("user_id", "user", "anonymous_id"),
        FieldSchema("persona", "user", "categorical", vocabulary=personas),
        FieldSchema("item_id", "item", "anonymous_id"),
        FieldSchema("title", "item", "text"),
        FieldSchema("tags", "item", "text"),
        FieldSchema("daypart", "context", "categorical", vocabulary=DAYPARTS),
    ]


def generate(config: SynthConfig, seed: int) -> list[DomainDataset]:
    """Build one DomainDataset per domain, deterministically from the seed."""
    config.validate()
    T = config.topics
    words = topic_words(config)
    # Context semantics are global: the same daypart nudges the same topics
    # in every domain, which is part of the transferable signal.
    ctx_rng = np.random.default_rng([seed, 10_000])
    ctx_vectors = {dp: ctx_rng.normal(size=T) for dp in DAYPARTS}

    datasets = []
    for d in range(config.domains):
        rng = np.random.default_rng([seed, d])
        user_topic = rng.integers(T, size=config.users)
        item_topic = rng.integers(T, size=config.items)
        item_second = (item_topic + 1 + rng.integers(T - 1, size=config.items)) % T

        beta, gamma = config.persona_blend, config.mixture_blend
        user_vecs = np.full((config.users, T), beta / T)
        user_vecs[np.arange(config.users), user_topic] += 1.0 - beta
        item_vecs = np.zeros((config.items, T))
        item_vecs[np.arange(config.items), item_topic] = 1.0 - gamma
        item_vecs[np.arange(config.items), item_second] += gamma

        n_primary = max(1, config.tags_per_item - 1)
        item_tags = []
        for i in range(config.items):
            primary = rng.choice(words[item_topic[i]], size=min(n_primary, len(words[item_topic[i]])), replace=False)
            secondary = rng.choice(words[item_second[i]], size=config.tags_per_item - len(primary), replace=True)
            item_tags.append(" ".join([*primary, *secondary]))
        item_title = [f"brand{d}x{i:04d}" for i in range(config.items)]

        u_idx = rng.integers(config.users, size=config.interactions)
        i_idx = rng.integers(config.items, size=config.interactions)
        dp_idx = rng.integers(len(DAYPARTS), size=config.interactions)

        u_lat = user_vecs[u_idx]
        i_lat = item_vecs[i_idx]
        c_lat = np.stack([ctx_vectors[DAYPARTS[j]] for j in dp_idx])
        raw = np.zeros(config.interactions)
        if "user_item" in config.cross_terms:
            raw += config.affinity_weight * np.sum(u_lat * i_lat, axis=1)
        if "item_context" in config.cross_terms:
            raw += config.context_weight * np.sum(i_lat * c_lat, axis=1)
        if "user_context" in config.cross_terms:
            raw += config.context_weight * np.sum(u_lat * c_lat, axis=1)
        if config.noise > 0:
            raw += config.noise * rng.normal(size=config.interactions)
        logits = raw - raw.mean()
        probs = 1.0 / (1.0 + np.exp(-logits))
        if config.label_mode == "threshold":
            labels = (probs > 0.5).astype(int)
        else:
            labels = (rng.random(config.interactions) < probs).astype(int)

        offset = d * config.interactions
        records = []
        oracle: dict[int, float] = {}
        for k in range(config.interactions):
            row_id = offset + k
            records.append(
                InstanceRecord(
                    domain_id=d,
                    row_id=row_id,
                    label=int(labels[k]),
                    values={
                        "user_id": f"u{u_idx[k]}",
                        "persona": _topic_stem(user_topic[u_idx[k]]),
                        "item_id": f"i{d}x{i_idx[k]}",
                        "title": item_title[i_idx[k]],
                        "tags": item_tags[i_idx[k]],
                        "daypart": DAYPARTS[dp_idx[k]],
                    },
                )
            )
            oracle[row_id] = float(probs[k])
        train, valid, test = split(records, seed=seed * 31 + d)
        datasets.append(
            DomainDataset(
                domain_id=d,
                schema=domain_schema(d, config),
                train=train,
                valid=valid,
                test=test,
                oracle_probs=oracle,
            )
        )
    return datasets


def oracle_scores(dataset: DomainDataset, records: Sequence[InstanceRecord]) -> np.ndarray:
    """True click probabilities for the given rows; the Bayes-ceiling scorer."""
    if dataset.oracle_probs is None:
        raise DataError(f"domain {dataset.domain_id} carries no oracle probabilities")
    return np.asarray([dataset.oracle_probs[r.row_id] for r in records])

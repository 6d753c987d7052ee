"""Full model assembly: featurization, forward pass, persistence, export.

``UfinModel`` owns all learnable state: the input LayerNorm over pooled
text vectors, the semantic-fusion experts and gate, the anonymous-id
tables, the universal-feature decoder, the TopK interaction mixture, and
(in ``t+f`` mode) the per-domain feature adaptor.  ``Featurizer`` turns
records into the dense index/matrix batch the model consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ufin.errors import ConfigError, DataError
from ufin.data.schema import DomainDataset, FieldSchema, InstanceRecord
from ufin.encoder import AnonymousTable, SemanticFusion, pooled_matrix
from ufin.interaction import FeatureAdaptor, InteractionMoE, UniversalDecoder, predict
from ufin.numeric import Tensor, layer_norm, load_checkpoint, save_checkpoint
from ufin.prompting import PromptTemplate, render

MODES = ("t", "t+f")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; defaults follow the reference configuration."""

    n_domains: int
    d_v: int = 64
    d: int = 16
    d_a: int = 16
    n_u: int = 7
    n_o: int = 7
    k: Optional[int] = None
    mode: str = "t"
    theorem_mode: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_domains < 1:
            raise ConfigError("n_domains must be positive")

    def resolved_k(self) -> int:
        """Explicit k, else min(5, L) raised to satisfy the overlap premise."""
        if self.k is not None:
            return self.k
        k = min(5, self.n_domains)
        if self.theorem_mode:
            k = max(k, (self.n_domains + 1) // 2 + 1) if self.n_domains > 1 else 1
        return min(k, self.n_domains)

    def to_dict(self) -> dict:
        return {
            "n_domains": self.n_domains,
            "d_v": self.d_v,
            "d": self.d,
            "d_a": self.d_a,
            "n_u": self.n_u,
            "n_o": self.n_o,
            "k": self.resolved_k(),
            "mode": self.mode,
            "theorem_mode": self.theorem_mode,
        }


def _anon_key(domain_id: int, value: str) -> str:
    # Id spaces are per-domain: the same raw string in two domains names
    # two different entities.
    return f"{domain_id}:{value}"


@dataclass
class FeatureSpace:
    """Vocabularies binding raw records to model input indices."""

    anon_vocabs: dict[str, dict[str, int]] = field(default_factory=dict)
    adaptor_fields: dict[int, dict[str, list[str]]] = field(default_factory=dict)

    @classmethod
    def build(cls, datasets: Sequence[DomainDataset]) -> "FeatureSpace":
        anon: dict[str, dict[str, int]] = {}
        adaptor: dict[int, dict[str, list[str]]] = {}
        for ds in datasets:
            cat_fields: dict[str, list[str]] = {}
            for f in ds.schema:
                if f.kind == "anonymous_id":
                    vocab = anon.setdefault(f.name, {})
                    for r in ds.train:
                        key = _anon_key(ds.domain_id, r.values.get(f.name, ""))
                        vocab.setdefault(key, len(vocab))
                elif f.kind == "categorical":
                    if f.vocabulary is not None:
                        cat_fields[f.name] = list(f.vocabulary)
                    else:
                        seen: dict[str, None] = {}
                        for r in ds.train:
                            seen.setdefault(r.values.get(f.name, ""), None)
                        cat_fields[f.name] = list(seen)
            adaptor[ds.domain_id] = cat_fields
        return cls(anon_vocabs=anon, adaptor_fields=adaptor)

    def to_json(self) -> dict:
        return {
            "anon_vocabs": self.anon_vocabs,
            "adaptor_fields": {str(d): f for d, f in self.adaptor_fields.items()},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureSpace":
        return cls(
            anon_vocabs={k: dict(v) for k, v in payload["anon_vocabs"].items()},
            adaptor_fields={int(d): dict(f) for d, f in payload["adaptor_fields"].items()},
        )


@dataclass
class FeatureBatch:
    """Dense arrays for one batch of records."""

    pooled: np.ndarray  # (B, d_V)
    anon: dict[str, np.ndarray]  # field -> (B,) indices, -1 for unseen
    slots: Optional[np.ndarray]  # (B, F) adaptor slot rows, None in t mode
    domain_ids: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx: np.ndarray) -> "FeatureBatch":
        return FeatureBatch(
            pooled=self.pooled[idx],
            anon={k: v[idx] for k, v in self.anon.items()},
            slots=self.slots[idx] if self.slots is not None else None,
            domain_ids=self.domain_ids[idx],
            labels=self.labels[idx],
            row_ids=self.row_ids[idx],
        )


class Featurizer:
    """Render, pool, and index records into FeatureBatch arrays."""

    def __init__(
        self,
        space: FeatureSpace,
        schemas: Mapping[int, Sequence[FieldSchema]],
        template: PromptTemplate,
        backend,
        adaptor: Optional[FeatureAdaptor] = None,
    ):
        self.space = space
        self.schemas = dict(schemas)
        self.template = template
        self.backend = backend
        self.adaptor = adaptor

    def prompt(self, record: InstanceRecord) -> str:
        schema = self.schemas.get(record.domain_id)
        if schema is None:
            raise DataError(f"no schema for domain {record.domain_id}")
        return render(record, schema, self.template)

    def featurize(self, records: Sequence[InstanceRecord]) -> FeatureBatch:
        texts = [self.prompt(r) for r in records]
        pooled = pooled_matrix(self.backend, records, texts)
        anon = {}
        for name, vocab in self.space.anon_vocabs.items():
            anon[name] = np.asarray(
                [vocab.get(_anon_key(r.domain_id, r.values.get(name, "")), -1) for r in records],
                dtype=np.int64,
            )
        domain_ids = np.asarray([r.domain_id for r in records], dtype=np.int64)
        slots = None
        if self.adaptor is not None:
            slots = self.adaptor.slot_rows(domain_ids, [r.values for r in records])
        return FeatureBatch(
            pooled=pooled,
            anon=anon,
            slots=slots,
            domain_ids=domain_ids,
            labels=np.asarray([r.label for r in records], dtype=np.int64),
            row_ids=np.asarray([r.row_id for r in records], dtype=np.uint64),
        )


@dataclass
class ForwardPass:
    logit: Tensor  # interaction mixture logit, the distillation target
    adaptor_logit: Optional[Tensor]
    prob: Tensor
    gate: np.ndarray  # applied sparse gate weights
    universal: list[Tensor]


class UfinModel:
    def __init__(self, cfg: ModelConfig, space: FeatureSpace, rng: np.random.Generator):
        self.cfg = cfg
        self.space = space
        self.input_gain = Tensor(np.ones((1, cfg.d_v)), requires_grad=True)
        self.input_shift = Tensor(np.zeros((1, cfg.d_v)), requires_grad=True)
        self.fusion = SemanticFusion(cfg.n_domains, cfg.d_v, rng)
        self.anon = AnonymousTable(space.anon_vocabs, cfg.d_v, cfg.d_a, rng)
        self.decoder = UniversalDecoder(cfg.n_u, cfg.d, cfg.d_v, rng)
        self.moe = InteractionMoE(
            cfg.n_domains,
            cfg.resolved_k(),
            cfg.n_o,
            cfg.n_u,
            cfg.d,
            cfg.d_v,
            rng,
            theorem_mode=cfg.theorem_mode,
        )
        self.adaptor = FeatureAdaptor(space.adaptor_fields) if cfg.mode == "t+f" else None

    def semantic(self, batch: FeatureBatch) -> Tensor:
        s = layer_norm(Tensor(batch.pooled), self.input_gain, self.input_shift)
        z, _ = self.fusion(s)
        return self.anon.fuse(z, batch.anon)

    def forward(self, batch: FeatureBatch) -> ForwardPass:
        zt = self.semantic(batch)
        universal = self.decoder(zt)
        logit, gate = self.moe(universal, zt)
        adaptor_logit = None
        if self.adaptor is not None:
            if batch.slots is None:
                raise DataError("t+f model needs adaptor slots in the batch")
            adaptor_logit = self.adaptor(batch.slots, batch.domain_ids)
        prob = predict(logit, adaptor_logit)
        return ForwardPass(logit, adaptor_logit, prob, gate, universal)

    def predict_proba(self, batch: FeatureBatch, chunk: int = 8192) -> np.ndarray:
        out = np.empty(len(batch))
        for lo in range(0, len(batch), chunk):
            idx = np.arange(lo, min(lo + chunk, len(batch)))
            out[idx] = self.forward(batch.take(idx)).prob.values[:, 0]
        return out

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "input.gain": self.input_gain,
            "input.shift": self.input_shift,
        }
        params.update(self.fusion.parameters())
        params.update(self.anon.parameters())
        params.update(self.decoder.parameters())
        params.update(self.moe.parameters())
        if self.adaptor is not None:
            params.update(self.adaptor.parameters())
        return params

    # -- persistence ------------------------------------------------------

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        """Write parameters as a UFNP checkpoint plus a JSON meta sidecar."""
        path = Path(path)
        save_checkpoint(path, self.parameters())
        meta = {
            "config": self.cfg.to_dict(),
            "feature_space": self.space.to_json(),
            "extra": extra_meta or {},
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )

    @classmethod
    def load(cls, path) -> tuple["UfinModel", dict]:
        path = Path(path)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        if not meta_path.exists():
            raise DataError(f"missing model meta file {meta_path}")
        meta = json.loads(meta_path.read_text())
        cfg = ModelConfig(**meta["config"])
        space = FeatureSpace.from_json(meta["feature_space"])
        model = cls(cfg, space, np.random.default_rng(0))
        stored = load_checkpoint(path)
        params = model.parameters()
        missing = sorted(set(params) - set(stored))
        surplus = sorted(set(stored) - set(params))
        if missing or surplus:
            raise DataError(f"checkpoint mismatch: missing {missing}, surplus {surplus}")
        for name, p in params.items():
            if stored[name].shape != p.values.shape:
                raise DataError(
                    f"checkpoint {name}: shape {stored[name].shape} != {p.values.shape}"
                )
            p.values[:] = stored[name]
        return model, meta.get("extra", {})


def gate_histogram(
    model: UfinModel,
    featurizer: Featurizer,
    datasets: Sequence[DomainDataset],
    split: str = "test",
    chunk: int = 8192,
) -> dict[int, np.ndarray]:
    """Per domain, how often each interaction expert survives the TopK cut."""
    out: dict[int, np.ndarray] = {}
    for ds in datasets:
        records = ds.splits()[split]
        counts = np.zeros(model.cfg.n_domains, dtype=np.int64)
        batch = featurizer.featurize(records)
        for lo in range(0, len(batch), chunk):
            idx = np.arange(lo, min(lo + chunk, len(batch)))
            fwd = model.forward(batch.take(idx))
            counts += (fwd.gate > 0).sum(axis=0)
        out[ds.domain_id] = counts
    return out


def export_universal(
    model: UfinModel,
    featurizer: Featurizer,
    records: Sequence[InstanceRecord],
    path,
    chunk: int = 4096,
) -> None:
    """Dump each record's universal feature rows to CSV for external tools."""
    n_u, d = model.cfg.n_u, model.cfg.d
    header = ["row_id", "domain_id"] + [f"e_{j}_{k}" for j in range(n_u) for k in range(d)]
    lines = [",".join(header)]
    for lo in range(0, len(records), chunk):
        part = records[lo : lo + chunk]
        batch = featurizer.featurize(part)
        fwd = model.forward(batch)
        stacked = np.stack([u.values for u in fwd.universal], axis=1)  # (B, n_u, d)
        flat = stacked.reshape(len(part), n_u * d)
        for r, values in zip(part, flat):
            cells = [str(r.row_id), str(r.domain_id)] + [f"{v!r}" for v in values]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")

"""Losses, per-domain teachers, and the multi-task training loop.

Teachers are classic id-embedding interaction models trained per domain
with cross-entropy only; they are frozen afterwards and provide guidance
logits.  The student is trained on the shuffled multi-domain mixture with
the unweighted sum of a squared logit-matching loss against its domain's
teacher and the usual binary cross-entropy, both summed over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ufin.errors import ConfigError, DataError, NumericError, ShapeError
from ufin.data.schema import DomainDataset, InstanceRecord
from ufin.evaluation import auc, logloss
from ufin.interaction import EulerExpert, FeatureAdaptor
from ufin.model import FeatureBatch, FeatureSpace, Featurizer, ModelConfig, UfinModel
from ufin.numeric import (
    AdamState,
    Tensor,
    adam_step,
    add,
    clamp,
    log,
    mul,
    rows,
    sigmoid,
    sub,
    tsum,
    zero_grads,
)
from ufin.prompting import PromptTemplate

PROB_EPS = 1e-7


@dataclass
class TrainConfig:
    seed: int
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 256
    epochs: int = 20
    patience: int = 5
    mode: str = "t+f"

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("training seed is mandatory")
        for name in ("lr", "weight_decay", "batch_size", "epochs", "patience"):
            if getattr(self, name) < 0 or (name in ("lr", "batch_size", "epochs") and getattr(self, name) <= 0):
                raise ConfigError(f"train config: {name} must be positive")


# -- losses -----------------------------------------------------------------


def kd_loss(teacher_logits, student_logits: Tensor) -> Tensor:
    """Sum of squared differences between guidance and student logits.

    Teacher values are constants: no gradient flows into them.
    """
    t = np.asarray(teacher_logits, dtype=np.float64).reshape(-1, 1)
    if t.shape != student_logits.shape:
        raise ShapeError(
            f"kd_loss: teacher {t.shape} vs student {student_logits.shape}"
        )
    diff = sub(Tensor(t), student_logits)
    return tsum(mul(diff, diff))


def ctr_loss(labels, preds: Tensor) -> Tensor:
    """Binary cross-entropy summed over the batch, with clamped predictions."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("ctr_loss: labels must be 0 or 1")
    if y.shape != preds.shape:
        raise ShapeError(f"ctr_loss: labels {y.shape} vs preds {preds.shape}")
    p = clamp(preds, PROB_EPS, 1.0 - PROB_EPS)
    y_t = Tensor(y)
    one_minus_y = Tensor(1.0 - y)
    ones = Tensor(np.ones_like(y))
    ll = add(mul(y_t, log(p)), mul(one_minus_y, log(sub(ones, p))))
    return -tsum(ll)


def total_loss(kd: Tensor, ctr: Tensor) -> Tensor:
    """Unweighted sum of the distillation and cross-entropy terms."""
    return add(kd, ctr)


# -- teachers ---------------------------------------------------------------


class TeacherModel:
    """Per-domain guidance network over raw id features.

    Every categorical or anonymous field gets an embedding table; a single
    interaction expert over those embeddings produces the guidance logit.
    """

    def __init__(
        self,
        domain_id: int,
        vocabs: Mapping[str, Mapping[str, int]],
        d: int = 16,
        n_orders: int = 7,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.domain_id = domain_id
        self.field_names = list(vocabs)
        if not self.field_names:
            raise DataError(f"domain {domain_id}: teacher needs at least one id field")
        self.d = d
        self.n_orders = n_orders
        self.vocabs = {name: dict(v) for name, v in vocabs.items()}
        # Embeddings feed the expert as phases, so they need O(1) magnitude.
        self.tables = {
            name: Tensor(
                rng.normal(0.0, 1.0, size=(max(1, len(self.vocabs[name])), d)),
                requires_grad=True,
            )
            for name in self.field_names
        }
        self.expert = EulerExpert(
            n_orders, len(self.field_names), d, rng, name=f"teacher{domain_id}"
        )

    @classmethod
    def from_dataset(
        cls,
        dataset: DomainDataset,
        d: int = 16,
        n_orders: int = 7,
        rng: Optional[np.random.Generator] = None,
    ) -> "TeacherModel":
        """Vocabularies from the schema when declared, else from train values."""
        vocabs: dict[str, dict[str, int]] = {}
        for f in dataset.schema:
            if f.kind not in ("categorical", "anonymous_id"):
                continue
            if f.vocabulary is not None:
                vocabs[f.name] = {v: i for i, v in enumerate(f.vocabulary)}
            else:
                seen: dict[str, int] = {}
                for r in dataset.train:
                    seen.setdefault(r.values.get(f.name, ""), len(seen))
                vocabs[f.name] = seen
        return cls(dataset.domain_id, vocabs, d=d, n_orders=n_orders, rng=rng)

    def index(self, records: Sequence[InstanceRecord]) -> dict[str, np.ndarray]:
        return {
            name: np.asarray(
                [self.vocabs[name].get(r.values.get(name, ""), -1) for r in records],
                dtype=np.int64,
            )
            for name in self.field_names
        }

    def forward(self, indices: Mapping[str, np.ndarray]) -> Tensor:
        fields = [rows(self.tables[name], indices[name]) for name in self.field_names]
        return self.expert(fields)

    def predict_logits(self, indices: Mapping[str, np.ndarray], chunk: int = 8192) -> np.ndarray:
        n = len(next(iter(indices.values())))
        out = np.empty(n)
        for lo in range(0, n, chunk):
            sl = {k: v[lo : lo + chunk] for k, v in indices.items()}
            out[lo : lo + min(chunk, n - lo)] = self.forward(sl).values[:, 0]
        return out

    def parameters(self) -> dict[str, Tensor]:
        params = {
            f"teacher{self.domain_id}.emb.{name}": self.tables[name]
            for name in self.field_names
        }
        params.update(self.expert.parameters())
        return params

    def freeze(self) -> None:
        for p in self.parameters().values():
            p.freeze()

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters().values())


# -- generic minibatch loop ---------------------------------------------------


def _snapshot(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.values.copy() for name, p in params.items()}


def _restore(params: Mapping[str, Tensor], snap: Mapping[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.values[:] = snap[name]


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo : lo + batch_size]


def pretrain_teachers(
    datasets: Sequence[DomainDataset],
    cfg: TrainConfig,
    d: int = 16,
    n_orders: int = 7,
) -> list[TeacherModel]:
    """Train one guidance network per domain with cross-entropy only.

    The best-validation-AUC parameters are kept and the teacher is frozen.
    """
    teachers = []
    for ds in datasets:
        if not ds.train:
            raise DataError(f"domain {ds.domain_id}: empty train split")
        teacher = TeacherModel.from_dataset(
            ds, d=d, n_orders=n_orders,
            rng=np.random.default_rng([cfg.seed, 303, ds.domain_id]),
        )
        params = teacher.parameters()
        state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        shuffle_rng = np.random.default_rng([cfg.seed, 404, ds.domain_id])
        train_idx = teacher.index(ds.train)
        labels = np.asarray([r.label for r in ds.train])
        valid_idx = teacher.index(ds.valid)
        valid_labels = np.asarray([r.label for r in ds.valid])

        best_auc, best_snap, stale = -np.inf, _snapshot(params), 0
        for epoch in range(cfg.epochs):
            for batch in _epoch_batches(len(ds.train), cfg.batch_size, shuffle_rng):
                sl = {k: v[batch] for k, v in train_idx.items()}
                prob = sigmoid(teacher.forward(sl))
                loss = ctr_loss(labels[batch], prob)
                if not math.isfinite(loss.item()):
                    raise NumericError(
                        f"teacher {ds.domain_id}: non-finite loss at epoch {epoch}"
                    )
                zero_grads(params)
                loss.backward()
                adam_step(params, state)
            val_auc = auc(valid_labels, _teacher_probs(teacher, valid_idx))
            if val_auc > best_auc:
                best_auc, best_snap, stale = val_auc, _snapshot(params), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        _restore(params, best_snap)
        teacher.freeze()
        teachers.append(teacher)
    return teachers


def _teacher_probs(teacher: TeacherModel, indices: Mapping[str, np.ndarray]) -> np.ndarray:
    logits = teacher.predict_logits(indices)
    return 1.0 / (1.0 + np.exp(-logits))


# -- student training ----------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float  # mean per-instance total loss
    val_auc: float  # over the mixed validation split
    domain_auc: dict[int, float] = field(default_factory=dict)
    domain_logloss: dict[int, float] = field(default_factory=dict)


def history_to_csv(history: Sequence[EpochStats], path) -> None:
    domains = sorted(history[0].domain_auc) if history else []
    header = ["epoch", "train_loss", "val_auc"]
    for d in domains:
        header += [f"val_auc_d{d}", f"val_logloss_d{d}"]
    lines = [",".join(header)]
    for h in history:
        cells = [str(h.epoch), f"{h.train_loss!r}", f"{h.val_auc!r}"]
        for d in domains:
            cells += [f"{h.domain_auc[d]!r}", f"{h.domain_logloss[d]!r}"]
        lines.append(",".join(cells))
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")


def train_ufin(
    datasets: Sequence[DomainDataset],
    teachers: Sequence[TeacherModel],
    template: PromptTemplate,
    backend,
    cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    init_from: Optional[UfinModel] = None,
) -> tuple[UfinModel, Featurizer, list[EpochStats]]:
    """Multi-task training over the shuffled multi-domain mixture.

    ``init_from`` warm-starts every parameter whose name and shape match;
    this is how a model pretrained on one platform transfers its text path
    to another, whose id vocabularies and adaptor slots differ.
    """
    teacher_by_domain = {t.domain_id: t for t in teachers}
    missing = [ds.domain_id for ds in datasets if ds.domain_id not in teacher_by_domain]
    if missing:
        raise DataError(f"no teacher for training domains {missing}")

    space = FeatureSpace.build(datasets)
    backend_dv = getattr(backend, "d_v", None)
    if model_cfg is None:
        model_cfg = ModelConfig(
            n_domains=len(datasets),
            mode=cfg.mode,
            **({"d_v": backend_dv} if backend_dv else {}),
        )
    elif model_cfg.mode != cfg.mode:
        raise ConfigError(
            f"model mode {model_cfg.mode!r} disagrees with train mode {cfg.mode!r}"
        )
    if backend_dv is not None and backend_dv != model_cfg.d_v:
        raise ConfigError(
            f"embedding backend is {backend_dv}-dimensional but the model expects d_v={model_cfg.d_v}"
        )
    model = UfinModel(model_cfg, space, np.random.default_rng([cfg.seed, 101]))
    if init_from is not None:
        donor = init_from.parameters()
        for name, p in model.parameters().items():
            if name in donor and donor[name].values.shape == p.values.shape:
                p.values[:] = donor[name].values
    schemas = {ds.domain_id: ds.schema for ds in datasets}
    featurizer = Featurizer(space, schemas, template, backend, adaptor=model.adaptor)

    train_records = [r for ds in datasets for r in ds.train]
    train_batch = featurizer.featurize(train_records)
    guide_logits = np.empty(len(train_records))
    pos = 0
    for ds in datasets:
        teacher = teacher_by_domain[ds.domain_id]
        idx = teacher.index(ds.train)
        guide_logits[pos : pos + len(ds.train)] = teacher.predict_logits(idx)
        pos += len(ds.train)

    valid_batches = {
        ds.domain_id: featurizer.featurize(ds.valid) for ds in datasets if ds.valid
    }

    params = model.parameters()
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 202])
    history: list[EpochStats] = []
    best_auc, best_snap, stale = -np.inf, _snapshot(params), 0

    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for step, batch_idx in enumerate(
            _epoch_batches(len(train_batch), cfg.batch_size, shuffle_rng)
        ):
            batch = train_batch.take(batch_idx)
            fwd = model.forward(batch)
            loss = total_loss(
                kd_loss(guide_logits[batch_idx], fwd.logit),
                ctr_loss(batch.labels, fwd.prob),
            )
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(domains {sorted(set(batch.domain_ids.tolist()))})"
                )
            epoch_loss += value
            zero_grads(params)
            loss.backward()
            adam_step(params, state)

        stats = EpochStats(epoch=epoch, train_loss=epoch_loss / len(train_batch), val_auc=0.0)
        all_labels, all_scores = [], []
        for d, vb in valid_batches.items():
            scores = model.predict_proba(vb)
            stats.domain_auc[d] = auc(vb.labels, scores)
            stats.domain_logloss[d] = logloss(vb.labels, scores)
            all_labels.append(vb.labels)
            all_scores.append(scores)
        stats.val_auc = auc(np.concatenate(all_labels), np.concatenate(all_scores))
        history.append(stats)

        if stats.val_auc > best_auc:
            best_auc, best_snap, stale = stats.val_auc, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    _restore(params, best_snap)
    return model, featurizer, history


def train_adaptor_baseline(
    space: FeatureSpace,
    datasets: Sequence[DomainDataset],
    cfg: TrainConfig,
) -> FeatureAdaptor:
    """Train the per-domain logistic regression alone (no text path)."""
    adaptor = FeatureAdaptor(space.adaptor_fields)
    records = [r for ds in datasets for r in ds.train]
    domain_ids = np.asarray([r.domain_id for r in records])
    slots = adaptor.slot_rows(domain_ids, [r.values for r in records])
    labels = np.asarray([r.label for r in records])

    valid = [r for ds in datasets for r in ds.valid]
    v_ids = np.asarray([r.domain_id for r in valid])
    v_slots = adaptor.slot_rows(v_ids, [r.values for r in valid])
    v_labels = np.asarray([r.label for r in valid])

    params = adaptor.parameters()
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 505])
    best_auc, best_snap, stale = -np.inf, _snapshot(params), 0
    for epoch in range(cfg.epochs):
        for batch in _epoch_batches(len(records), cfg.batch_size, shuffle_rng):
            prob = sigmoid(adaptor(slots[batch], domain_ids[batch]))
            loss = ctr_loss(labels[batch], prob)
            zero_grads(params)
            loss.backward()
            adam_step(params, state)
        scores = adaptor_scores(adaptor, v_slots, v_ids)
        val_auc = auc(v_labels, scores)
        if val_auc > best_auc:
            best_auc, best_snap, stale = val_auc, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _restore(params, best_snap)
    return adaptor


def adaptor_scores(adaptor: FeatureAdaptor, slots: np.ndarray, domain_ids: np.ndarray) -> np.ndarray:
    logits = adaptor(slots, domain_ids).values[:, 0]
    return 1.0 / (1.0 + np.exp(-logits))


# -- teacher persistence --------------------------------------------------------


def save_teacher(path, teacher: TeacherModel) -> None:
    import json
    from pathlib import Path

    from ufin.numeric import save_checkpoint

    path = Path(path)
    save_checkpoint(path, teacher.parameters())
    meta = {
        "domain_id": teacher.domain_id,
        "d": teacher.d,
        "n_orders": teacher.n_orders,
        "field_names": teacher.field_names,  # field order feeds the expert
        "vocabs": teacher.vocabs,
    }
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n"
    )


def load_teacher(path) -> TeacherModel:
    import json
    from pathlib import Path

    from ufin.numeric import load_checkpoint

    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    if not path.exists() or not meta_path.exists():
        raise DataError(f"missing teacher checkpoint {path} (or its meta file)")
    meta = json.loads(meta_path.read_text())
    vocabs = {name: meta["vocabs"][name] for name in meta["field_names"]}
    teacher = TeacherModel(
        meta["domain_id"], vocabs, d=meta["d"], n_orders=meta["n_orders"]
    )
    stored = load_checkpoint(path)
    for name, p in teacher.parameters().items():
        if name not in stored or stored[name].shape != p.values.shape:
            raise DataError(f"teacher checkpoint {path}: bad or missing blob {name}")
        p.values[:] = stored[name]
    teacher.freeze()
    return teacher

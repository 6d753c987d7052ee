import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ufin.data import SynthConfig, generate
from ufin.encoder import HashEncoder
from ufin.errors import DataError, NumericError, ShapeError
from ufin.evaluation import auc, logloss
from ufin.model import FeatureSpace
from ufin.numeric import Tensor, sigmoid, tsum
from ufin.prompting import PromptTemplate
from ufin.training import (
    TrainConfig,
    TeacherModel,
    adaptor_scores,
    ctr_loss,
    history_to_csv,
    kd_loss,
    pretrain_teachers,
    total_loss,
    train_adaptor_baseline,
    train_ufin,
)

from helpers import check_gradients

TINY = SynthConfig(domains=2, users=60, items=40, interactions=700, vocab=40)
FAST = TrainConfig(seed=9, epochs=3, batch_size=128, patience=2)


@pytest.fixture(scope="module")
def datasets():
    return generate(TINY, seed=21)


@pytest.fixture(scope="module")
def teachers(datasets):
    return pretrain_teachers(datasets, TrainConfig(seed=9, epochs=6, batch_size=128, patience=3))


# -- losses -------------------------------------------------------------------


def test_kd_loss_zero_iff_equal():
    s = Tensor(np.asarray([[0.3], [-1.2]]))
    assert kd_loss(np.asarray([0.3, -1.2]), s).item() == 0.0
    assert kd_loss(np.asarray([1.0, -1.2]), s).item() > 0.0


def test_kd_loss_unit_gap():
    assert kd_loss(np.asarray([1.0]), Tensor([[0.0]])).item() == 1.0


def test_kd_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        kd_loss(np.asarray([1.0, 2.0]), Tensor([[0.0]]))


def test_kd_loss_gradient_is_two_delta():
    s = Tensor(np.asarray([[0.4], [2.0]]), requires_grad=True)
    t = np.asarray([1.0, -1.0])
    loss = kd_loss(t, s)
    loss.backward()
    assert np.allclose(s.grad, 2.0 * (s.values - t.reshape(-1, 1)))
    check_gradients(lambda: kd_loss(t, s), [s])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
@settings(max_examples=40, deadline=None)
def test_kd_loss_nonnegative(vals):
    t = np.asarray(vals)
    s = Tensor(np.zeros((len(vals), 1)))
    assert kd_loss(t, s).item() >= 0.0


def test_ctr_loss_values():
    assert ctr_loss([1], Tensor([[0.5]])).item() == pytest.approx(np.log(2.0))
    assert ctr_loss([1], Tensor([[1.0 - 1e-12]])).item() == pytest.approx(0.0, abs=1e-6)
    assert ctr_loss([1], Tensor([[0.0]])).item() == pytest.approx(-np.log(1e-7))


def test_ctr_loss_rejects_bad_labels():
    with pytest.raises(DataError):
        ctr_loss([2], Tensor([[0.5]]))


def test_ctr_loss_gradient():
    logit = Tensor(np.asarray([[0.3], [-0.7], [1.4]]), requires_grad=True)
    labels = np.asarray([1, 0, 1])
    check_gradients(lambda: ctr_loss(labels, sigmoid(logit)), [logit])


def test_total_loss_sum_and_gradient_flow():
    a = Tensor(np.asarray([[0.5]]), requires_grad=True)
    b = Tensor(np.asarray([[0.3]]), requires_grad=True)
    loss = total_loss(tsum(a), tsum(b))
    assert loss.item() == pytest.approx(0.8)
    loss.backward()
    assert a.grad is not None and b.grad is not None


# -- teachers -----------------------------------------------------------------


def test_teacher_fields_exclude_text(datasets):
    teacher = TeacherModel.from_dataset(datasets[0])
    assert set(teacher.field_names) == {"user_id", "persona", "item_id", "daypart"}


def test_teacher_learns_separable_domain():
    cfg = SynthConfig(
        domains=1, users=40, items=25, interactions=1500, vocab=40, label_mode="threshold"
    )
    (ds,) = generate(cfg, seed=2)
    (teacher,) = pretrain_teachers(
        [ds], TrainConfig(seed=5, lr=1e-2, epochs=40, batch_size=128, patience=8)
    )
    scores = 1.0 / (1.0 + np.exp(-teacher.predict_logits(teacher.index(ds.valid))))
    labels = np.asarray([r.label for r in ds.valid])
    assert auc(labels, scores) >= 0.95


def test_pretrain_deterministic(datasets):
    cfg = TrainConfig(seed=9, epochs=2, batch_size=128, patience=2)
    a = pretrain_teachers(datasets, cfg)
    b = pretrain_teachers(datasets, cfg)
    for ta, tb in zip(a, b):
        for name, p in ta.parameters().items():
            assert np.array_equal(p.values, tb.parameters()[name].values)


def test_teachers_frozen(teachers):
    assert all(t.frozen for t in teachers)


def test_empty_domain_rejected(datasets):
    broken = generate(TINY, seed=21)
    broken[0].train = []
    with pytest.raises(DataError):
        pretrain_teachers(broken, FAST)


# -- student training ------------------------------------------------------------


def _train(datasets, teachers, cfg=FAST, **kwargs):
    return train_ufin(
        datasets,
        teachers,
        PromptTemplate(variant="base"),
        HashEncoder(d_v=32, seed=7),
        cfg,
        **kwargs,
    )


def test_missing_teacher_rejected(datasets, teachers):
    with pytest.raises(DataError, match="teacher"):
        _train(datasets, teachers[:1])


def test_training_runs_and_history_shape(datasets, teachers, tmp_path):
    model, featurizer, history = _train(datasets, teachers)
    assert len(history) >= 1
    assert set(history[0].domain_auc) == {0, 1}
    path = tmp_path / "history.csv"
    history_to_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("epoch,train_loss,val_auc")
    assert len(lines) == len(history) + 1


def test_training_deterministic(datasets, teachers):
    _, _, h1 = _train(datasets, teachers)
    _, _, h2 = _train(datasets, teachers)
    assert [h.train_loss for h in h1] == [h.train_loss for h in h2]
    assert [h.val_auc for h in h1] == [h.val_auc for h in h2]


def test_student_training_leaves_teachers_untouched(datasets, teachers):
    before = {
        name: p.values.copy()
        for t in teachers
        for name, p in t.parameters().items()
    }
    _train(datasets, teachers)
    for t in teachers:
        for name, p in t.parameters().items():
            assert np.array_equal(p.values, before[name])


def test_t_mode_trains_without_adaptor(datasets, teachers):
    cfg = TrainConfig(seed=9, epochs=2, batch_size=128, patience=2, mode="t")
    model, _, _ = _train(datasets, teachers, cfg=cfg)
    assert model.adaptor is None
    assert not any(name.startswith("adaptor") for name in model.parameters())


# -- adaptor baseline -----------------------------------------------------------


def test_adaptor_baseline_trains_and_scores(datasets):
    space = FeatureSpace.build(datasets)
    adaptor = train_adaptor_baseline(space, datasets, FAST)
    records = datasets[0].valid
    ids = np.asarray([r.domain_id for r in records])
    slots = adaptor.slot_rows(ids, [r.values for r in records])
    scores = adaptor_scores(adaptor, slots, ids)
    assert np.all((scores > 0) & (scores < 1))
    labels = np.asarray([r.label for r in records])
    assert np.isfinite(logloss(labels, scores))


def test_untrained_adaptor_scores_are_constant(datasets):
    from ufin.interaction import FeatureAdaptor

    space = FeatureSpace.build(datasets)
    fresh = FeatureAdaptor(space.adaptor_fields)
    records = datasets[1].valid[:50]
    ids = np.asarray([r.domain_id for r in records])
    slots = fresh.slot_rows(ids, [r.values for r in records])
    scores = adaptor_scores(fresh, slots, ids)
    assert np.all(scores == scores[0])


def test_teacher_save_load_roundtrip(tmp_path, datasets, teachers):
    from ufin.training import load_teacher, save_teacher

    path = tmp_path / "teacher0.ufnp"
    save_teacher(path, teachers[0])
    loaded = load_teacher(path)
    assert loaded.frozen
    idx = loaded.index(datasets[0].valid[:20])
    assert np.array_equal(
        loaded.predict_logits(idx), teachers[0].predict_logits(idx)
    )


def test_load_teacher_missing_file(tmp_path):
    from ufin.training import load_teacher

    with pytest.raises(DataError, match="missing teacher"):
        load_teacher(tmp_path / "absent.ufnp")

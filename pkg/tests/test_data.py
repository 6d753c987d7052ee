import numpy as np
import pytest

from ufin.data import (
    DomainDataset,
    FieldSchema,
    InstanceRecord,
    SynthConfig,
    generate,
    load_domain_dir,
    load_schema,
    load_tsv,
    map_rating_to_label,
    oracle_scores,
    split,
    write_domain_dir,
    write_schema,
    write_tsv,
)
from ufin.errors import DataError


def _records(n, domain=0):
    return [
        InstanceRecord(domain, i, i % 2, {"color": f"c{i}", "note": f"word{i}"})
        for i in range(n)
    ]


SCHEMA = [
    FieldSchema("color", "item", "categorical"),
    FieldSchema("note", "item", "text"),
]


# -- label mapping -----------------------------------------------------------


@pytest.mark.parametrize("rating,expected", [(5, 1), (4, 1), (2, 0), (1, 0)])
def test_rating_mapping(rating, expected):
    assert map_rating_to_label(rating) == expected


def test_rating_three_dropped():
    assert map_rating_to_label(3) is None


@pytest.mark.parametrize("rating", [0, 6, -1, "4"])
def test_rating_out_of_range(rating):
    with pytest.raises(DataError):
        map_rating_to_label(rating)


# -- splitting ---------------------------------------------------------------


def test_split_sizes_100():
    tr, va, te = split(_records(100), seed=1)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)


def test_split_sizes_103_remainder_to_train():
    tr, va, te = split(_records(103), seed=1)
    assert (len(tr), len(va), len(te)) == (83, 10, 10)


def test_split_deterministic():
    a = split(_records(50), seed=9)
    b = split(_records(50), seed=9)
    assert [[r.row_id for r in part] for part in a] == [[r.row_id for r in part] for part in b]


def test_split_disjoint_and_exhaustive():
    records = _records(57)
    tr, va, te = split(records, seed=3)
    ids = [r.row_id for r in tr + va + te]
    assert sorted(ids) == [r.row_id for r in records]
    assert len(set(ids)) == len(ids)


def test_split_too_small_rejected():
    with pytest.raises(DataError):
        split(_records(9), seed=0)


# -- synthetic generator -----------------------------------------------------

SMALL = SynthConfig(domains=2, users=50, items=30, interactions=400, vocab=40)


def test_synth_deterministic():
    a = generate(SMALL, seed=5)
    b = generate(SMALL, seed=5)
    for da, db in zip(a, b):
        assert [r.values for r in da.train] == [r.values for r in db.train]
        assert [r.label for r in da.test] == [r.label for r in db.test]
        assert da.oracle_probs == db.oracle_probs


def test_synth_threshold_noise_free_is_separable():
    cfg = SynthConfig(domains=1, users=50, items=30, interactions=2000, vocab=40, label_mode="threshold")
    (ds,) = generate(cfg, seed=11)
    recs = ds.train + ds.valid + ds.test
    probs = oracle_scores(ds, recs)
    labels = np.asarray([r.label for r in recs])
    # every positive sits strictly above every negative in p*
    assert probs[labels == 1].min() > probs[labels == 0].max()


def test_synth_click_rate_matches_mean_pstar():
    cfg = SynthConfig(domains=1, users=500, items=200, interactions=120_000, vocab=40)
    (ds,) = generate(cfg, seed=13)
    recs = ds.train + ds.valid + ds.test
    labels = np.asarray([r.label for r in recs])
    probs = oracle_scores(ds, recs)
    assert abs(labels.mean() - probs.mean()) < 0.02


def test_synth_item_vocabularies_disjoint_across_domains():
    datasets = generate(SMALL, seed=5)
    titles = [set(r.values["title"] for r in ds.train) for ds in datasets]
    assert not (titles[0] & titles[1])
    tags = [set(w for r in ds.train for w in r.values["tags"].split()) for ds in datasets]
    assert tags[0] & tags[1]  # topic words are shared


def test_synth_validation():
    with pytest.raises(DataError):
        generate(SynthConfig(topics=1), seed=0)
    with pytest.raises(DataError):
        generate(SynthConfig(topics=4, vocab=3), seed=0)
    with pytest.raises(DataError):
        generate(SynthConfig(interactions=5), seed=0)


# -- tsv round trips ---------------------------------------------------------


def test_tsv_roundtrip(tmp_path):
    path = tmp_path / "d.tsv"
    records = _records(12)
    write_tsv(path, records, SCHEMA)
    loaded, problems = load_tsv(path, SCHEMA)
    assert problems == []
    assert loaded == records


def test_tsv_header_mismatch_names_missing_column(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("domain_id\trow_id\tlabel\tcolor\n0\t1\t0\tred\n")
    with pytest.raises(DataError, match="note"):
        load_tsv(path, SCHEMA)


def test_tsv_bad_label_reports_line_number(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text(
        "domain_id\trow_id\tlabel\tcolor\tnote\n"
        "0\t1\t0\tred\tok\n"
        "0\t2\t7\tblue\tbad\n"
    )
    with pytest.raises(DataError, match=":3"):
        load_tsv(path, SCHEMA)
    loaded, problems = load_tsv(path, SCHEMA, lenient=True)
    assert len(loaded) == 1 and len(problems) == 1 and ":3" in problems[0]


def test_schema_roundtrip(tmp_path):
    path = tmp_path / "schema.json"
    fields = [
        FieldSchema("persona", "user", "categorical", vocabulary=("a", "b")),
        FieldSchema("title", "item", "text"),
        FieldSchema("user_id", "user", "anonymous_id"),
    ]
    write_schema(path, fields)
    assert load_schema(path) == fields


def test_domain_dir_roundtrip(tmp_path):
    datasets = generate(SMALL, seed=5)
    write_domain_dir(tmp_path / "data", datasets)
    loaded = load_domain_dir(tmp_path / "data")
    for orig, back in zip(datasets, loaded):
        assert back.schema == orig.schema
        assert back.train == orig.train
        assert back.valid == orig.valid
        assert back.test == orig.test
        assert back.oracle_probs == pytest.approx(orig.oracle_probs)


def test_domain_dataset_partition_check():
    ds = DomainDataset(0, SCHEMA, train=_records(5), valid=_records(5))
    with pytest.raises(DataError):
        ds.check_partitions()

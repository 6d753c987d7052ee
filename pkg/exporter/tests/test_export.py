import struct

import numpy as np
import pytest

from embed_export.cli import main
from embed_export.export import (
    ExportError,
    ExportJob,
    StubEncoder,
    export,
    make_encoder,
    read_prompt_dump,
)

# The training-side package is the authoritative reader of the UFEC
# contract; round-trip tests go through it.
ufin_encoder = pytest.importorskip("ufin.encoder")


def _dump(tmp_path, rows):
    path = tmp_path / "prompts.tsv"
    lines = ["row_id\tprompt"] + [f"{rid}\t{text}" for rid, text in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_prompt_dump_parsing(tmp_path):
    path = _dump(tmp_path, [(0, "hello world"), (7, "second prompt")])
    assert read_prompt_dump(path) == [(0, "hello world"), (7, "second prompt")]


def test_prompt_dump_requires_header(tmp_path):
    path = tmp_path / "prompts.tsv"
    path.write_text("0\thello\n")
    with pytest.raises(ExportError, match="header"):
        read_prompt_dump(path)


def test_prompt_dump_bad_row_id(tmp_path):
    path = tmp_path / "prompts.tsv"
    path.write_text("row_id\tprompt\nx\thello\n")
    with pytest.raises(ExportError, match="row id"):
        read_prompt_dump(path)


def test_stub_is_deterministic():
    a = StubEncoder(16).encode_batch(["same text twice"])
    b = StubEncoder(16).encode_batch(["same text twice"])
    assert np.array_equal(a, b)


def test_stub_sum_pooling_doubles():
    enc = StubEncoder(16)
    one = enc.encode_batch(["hello"])[0]
    two = enc.encode_batch(["hello hello"])[0]
    assert np.allclose(two, 2.0 * one)
    assert not np.allclose(one, 0.0)


def test_export_roundtrips_through_primary_reader(tmp_path):
    rows = [(0, "arcade07 noon"), (3, "botany12 dusk"), (123456789, "cosmos01")]
    prompts = _dump(tmp_path, rows)
    out = tmp_path / "cache.ufec"
    count = export(ExportJob(str(prompts), "stub:16", str(out), batch_size=2))
    assert count == 3

    cache = ufin_encoder.EmbeddingCache.load(out)
    assert cache.d_v == 16
    assert len(cache) == 3
    expected = StubEncoder(16).encode_batch([text for _, text in rows])
    for i, (rid, _) in enumerate(rows):
        assert np.array_equal(cache.get(rid), expected[i].astype(np.float32).astype(np.float64))


def test_export_header_bytes(tmp_path):
    prompts = _dump(tmp_path, [(5, "one prompt")])
    out = tmp_path / "cache.ufec"
    export(ExportJob(str(prompts), "stub:8", str(out)))
    raw = out.read_bytes()
    assert raw[:4] == b"UFEC"
    version, d_v = struct.unpack_from("<II", raw, 4)
    (count,) = struct.unpack_from("<Q", raw, 12)
    assert (version, d_v, count) == (1, 8, 1)
    assert len(raw) == 20 + (8 + 4 * 8)


def test_dv_mismatch_is_rejected(tmp_path):
    prompts = _dump(tmp_path, [(0, "hello")])
    with pytest.raises(ExportError, match="d_V"):
        export(ExportJob(str(prompts), "stub:16", str(tmp_path / "c.ufec"), expect_d_v=32))


def test_bad_stub_spec():
    with pytest.raises(ExportError, match="stub"):
        make_encoder("stub:banana")


def test_cli_success_and_exit_codes(tmp_path, capsys):
    prompts = _dump(tmp_path, [(0, "hello"), (1, "world")])
    out = tmp_path / "cache.ufec"
    assert main(["--prompts", str(prompts), "--model", "stub:16", "--out", str(out)]) == 0
    assert "wrote 2 embeddings" in capsys.readouterr().out

    assert main(["--prompts", str(tmp_path / "missing.tsv"), "--model", "stub:16",
                 "--out", str(out)]) == 2
    assert main(["--prompts", str(prompts), "--model", "stub:16", "--out", str(out),
                 "--expect-dv", "64"]) == 2
    assert main([]) == 1  # missing required flags


def test_cli_model_load_failure_exits_2(tmp_path, capsys):
    pytest.importorskip("transformers")
    prompts = _dump(tmp_path, [(0, "hello")])
    code = main([
        "--prompts", str(prompts),
        "--model", "this-model/does-not-exist-anywhere",
        "--out", str(tmp_path / "c.ufec"),
    ])
    assert code == 2
    assert "cannot load model" in capsys.readouterr().err


def test_end_to_end_with_training_pipeline(tmp_path):
    """Prompt dump from the training CLI -> exporter -> training cache reader."""
    ufin_cli = pytest.importorskip("ufin.cli")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "seed = 3\nsynth.domains = 1\nsynth.users = 20\nsynth.items = 15\n"
        "synth.interactions = 60\nsynth.vocab = 40\n"
    )
    data = tmp_path / "data"
    prompts = tmp_path / "prompts.tsv"
    assert ufin_cli.main(["synth", "--config", str(cfg), "--out", str(data)]) == 0
    assert ufin_cli.main([
        "render", "--config", str(cfg), "--data", str(data), "--out", str(prompts),
    ]) == 0

    out = tmp_path / "cache.ufec"
    assert main(["--prompts", str(prompts), "--model", "stub:24", "--out", str(out)]) == 0

    cache = ufin_encoder.EmbeddingCache.load(out)
    rows = read_prompt_dump(prompts)
    assert len(cache) == len(rows) == 60
    assert {rid for rid, _ in rows} == set(cache.entries)
    # the training-side validator accepts the exporter's cache
    assert ufin_cli.main([
        "encode", "--config", str(cfg), "--data", str(data), "--validate", str(out),
    ]) == 0

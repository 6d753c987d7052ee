"""Run a text encoder over a prompt dump and write the UFEC cache.

The pooled vector per prompt is the masked sum of the encoder's last
hidden states: padding tokens are excluded, and the sum is taken before
any normalization (the trainable LayerNorm lives on the consuming side).

Two encoder families are supported: ``stub:<d_v>`` is a deterministic
hash-based stand-in used for tests and plumbing checks; any other model
identifier is loaded through ``transformers`` (for encoder-decoder models
only the encoder is run).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from embed_export.ufec import write_ufec


class ExportError(Exception):
    """Unusable inputs: bad prompt dump, model load failure, size mismatch."""


@dataclass(frozen=True)
class ExportJob:
    prompts_path: str
    model_id: str
    out_path: str
    batch_size: int = 32
    device: str = "cpu"
    expect_d_v: int | None = None


def read_prompt_dump(path) -> list[tuple[int, str]]:
    """Parse the (row_id, prompt) TSV emitted by the training pipeline."""
    path = Path(path)
    if not path.exists():
        raise ExportError(f"prompt dump {path} does not exist")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "row_id\tprompt":
        raise ExportError(f"{path}: expected a 'row_id\\tprompt' header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t", 1)
        if len(cells) != 2:
            raise ExportError(f"{path}:{lineno}: expected two tab-separated columns")
        try:
            rows.append((int(cells[0]), cells[1]))
        except ValueError:
            raise ExportError(f"{path}:{lineno}: bad row id {cells[0]!r}") from None
    return rows


class StubEncoder:
    """Deterministic per-token vectors with masked sum pooling.

    Stands in for a language model so the binary contract and the pooling
    arithmetic can be verified without downloading weights.
    """

    def __init__(self, d_v: int):
        if d_v < 1:
            raise ExportError(f"stub encoder needs a positive width, got {d_v}")
        self.d_v = d_v
        self._memo: dict[str, np.ndarray] = {}

    def _token_state(self, token: str) -> np.ndarray:
        vec = self._memo.get(token)
        if vec is None:
            blocks = []
            need = 4 * self.d_v
            for block in range((need + 63) // 64):
                blocks.append(
                    hashlib.blake2b(
                        f"stub-lm:{block}:{token}".encode(), digest_size=64
                    ).digest()
                )
            raw = np.frombuffer(b"".join(blocks)[:need], dtype="<u4").astype(np.float64)
            vec = (raw / 2**31) - 1.0  # roughly uniform in [-1, 1)
            self._memo[token] = vec
        return vec

    def encode_batch(self, prompts: list[str]) -> np.ndarray:
        out = np.zeros((len(prompts), self.d_v))
        for i, prompt in enumerate(prompts):
            for token in prompt.split():
                out[i] += self._token_state(token)
        return out


class TransformerEncoder:
    """Pretrained encoder via transformers; pads are masked out of the sum."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ExportError(f"transformers backend unavailable: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise ExportError(f"cannot load model {model_id!r}: {exc}") from exc
        if getattr(model.config, "is_encoder_decoder", False):
            model = model.get_encoder()
        self._torch = torch
        self.model = model.to(device).eval()
        self.device = device
        self.d_v = int(getattr(model.config, "hidden_size", getattr(model.config, "d_model", 0)))
        if self.d_v <= 0:
            raise ExportError(f"cannot determine hidden size of {model_id!r}")

    def encode_batch(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        tokens = self.tokenizer(prompts, padding=True, truncation=True, return_tensors="pt")
        tokens = {k: v.to(self.device) for k, v in tokens.items()}
        with torch.no_grad():
            states = self.model(**tokens).last_hidden_state  # (B, T, d_V)
        mask = tokens["attention_mask"].unsqueeze(-1).to(states.dtype)
        pooled = (states * mask).sum(dim=1)
        return pooled.cpu().double().numpy()


def make_encoder(model_id: str, device: str = "cpu"):
    if model_id.startswith("stub:"):
        try:
            return StubEncoder(int(model_id.split(":", 1)[1]))
        except ValueError:
            raise ExportError(f"bad stub id {model_id!r}; use stub:<width>") from None
    return TransformerEncoder(model_id, device=device)


def _batches(rows: list, size: int) -> Iterator[list]:
    for lo in range(0, len(rows), size):
        yield rows[lo : lo + size]


def export(job: ExportJob) -> int:
    """Encode every prompt and write the cache; returns the entry count."""
    rows = read_prompt_dump(job.prompts_path)
    encoder = make_encoder(job.model_id, device=job.device)
    if job.expect_d_v is not None and encoder.d_v != job.expect_d_v:
        raise ExportError(
            f"model width {encoder.d_v} does not match the expected d_V {job.expect_d_v}"
        )
    entries: list[tuple[int, np.ndarray]] = []
    for batch in _batches(rows, job.batch_size):
        pooled = encoder.encode_batch([text for _, text in batch])
        entries.extend(
            (row_id, pooled[i].astype(np.float32)) for i, (row_id, _) in enumerate(batch)
        )
    return write_ufec(job.out_path, encoder.d_v, entries)

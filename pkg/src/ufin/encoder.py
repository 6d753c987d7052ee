"""From prompt text to the fused semantic representation.

The text side produces a pooled vector per record (the sum of token
vectors, cached pre-normalization); the model then applies a trainable
LayerNorm, mixes L per-domain expert subspaces through a softmax gate, and
additively fuses anonymous-id embeddings.

Two pooled-vector backends exist: a seeded token-hashing encoder that
needs no external model, and a binary cache of vectors produced offline
(the UFEC file format, shared with the export tool).
"""

from __future__ import annotations

import hashlib
import re
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ufin.errors import DataError, ShapeError
from ufin.numeric import (
    Tensor,
    add,
    matmul,
    relu,
    repeat_rows,
    rows,
    scale_rows,
    slice_cols,
    softmax,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

UFEC_MAGIC = b"UFEC"
UFEC_VERSION = 1


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashEncoder:
    """Deterministic offline stand-in for a text encoder.

    Each token is hashed into 3 signed buckets of a d_V-dimensional
    vector; a sentence pools to the sum of its token vectors.  Token
    vectors are memoized, so encoding cost is linear in distinct tokens.
    """

    PROBES = 3

    def __init__(self, d_v: int = 64, seed: int = 17):
        self.d_v = d_v
        self.seed = seed
        self._memo: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._memo.get(token)
        if vec is None:
            vec = np.zeros(self.d_v)
            for probe in range(self.PROBES):
                digest = hashlib.blake2b(
                    f"{self.seed}:{probe}:{token}".encode(), digest_size=8
                ).digest()
                h = int.from_bytes(digest, "little")
                bucket = (h >> 1) % self.d_v
                sign = 1.0 if h & 1 else -1.0
                vec[bucket] += sign
            self._memo[token] = vec
        return vec

    def pooled(self, text: str) -> np.ndarray:
        out = np.zeros(self.d_v)
        for token in tokenize(text):
            out += self.token_vector(token)
        return out

    def pooled_for(self, row_id: int, text: str) -> np.ndarray:
        return self.pooled(text)


class EmbeddingCache:
    """Pooled pre-normalization text vectors keyed by row id."""

    def __init__(self, d_v: int, entries: Mapping[int, np.ndarray] | None = None):
        self.d_v = d_v
        self.entries: dict[int, np.ndarray] = {}
        for rid, vec in (entries or {}).items():
            self.put(rid, vec)

    def put(self, row_id: int, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.d_v,):
            raise ShapeError(f"cache entry {row_id}: shape {vec.shape} != ({self.d_v},)")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"cache entry {row_id}: non-finite values")
        self.entries[int(row_id)] = vec

    def get(self, row_id: int) -> np.ndarray:
        try:
            return self.entries[int(row_id)]
        except KeyError:
            raise DataError(f"embedding cache has no entry for row_id {row_id}") from None

    def pooled_for(self, row_id: int, text: str) -> np.ndarray:
        return self.get(row_id)

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path) -> None:
        out = bytearray()
        out += UFEC_MAGIC
        out += struct.pack("<I", UFEC_VERSION)
        out += struct.pack("<I", self.d_v)
        out += struct.pack("<Q", len(self.entries))
        for rid, vec in self.entries.items():
            out += struct.pack("<Q", rid)
            out += vec.astype("<f4").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path) -> "EmbeddingCache":
        raw = Path(path).read_bytes()
        if raw[:4] != UFEC_MAGIC:
            raise DataError(f"{path}: not a UFEC cache (bad magic {raw[:4]!r})")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != UFEC_VERSION:
            raise DataError(f"{path}: unsupported UFEC version {version}")
        (d_v,) = struct.unpack_from("<I", raw, 8)
        (count,) = struct.unpack_from("<Q", raw, 12)
        cache = cls(d_v)
        off = 20
        entry = 8 + 4 * d_v
        if len(raw) != off + count * entry:
            raise DataError(f"{path}: truncated cache: {len(raw)} bytes for {count} entries")
        for _ in range(count):
            (rid,) = struct.unpack_from("<Q", raw, off)
            vec = np.frombuffer(raw, dtype="<f4", count=d_v, offset=off + 8)
            cache.entries[rid] = vec.astype(np.float64)
            off += entry
        return cache


def pooled_matrix(backend, records, texts: Iterable[str]) -> np.ndarray:
    """Stack each record's pooled vector into a (B, d_V) float64 matrix."""
    return np.stack(
        [backend.pooled_for(r.row_id, t) for r, t in zip(records, texts)]
    )


class SemanticFusion:
    """L expert subspaces combined by a softmax gate over all experts."""

    def __init__(self, n_experts: int, d_v: int, rng: np.random.Generator):
        if n_experts < 1:
            raise ShapeError(f"need at least one fusion expert, got {n_experts}")
        self.n_experts = n_experts
        self.d_v = d_v
        scale = 1.0 / np.sqrt(d_v)
        self.weights = [
            Tensor(rng.normal(0.0, scale, size=(d_v, d_v)), requires_grad=True)
            for _ in range(n_experts)
        ]
        self.biases = [
            Tensor(np.zeros((1, d_v)), requires_grad=True) for _ in range(n_experts)
        ]
        self.gate = Tensor(rng.normal(0.0, scale, size=(n_experts, d_v)), requires_grad=True)

    def __call__(self, s: Tensor) -> tuple[Tensor, Tensor]:
        """Mix experts of s (B, d_V); returns (z, gate probabilities)."""
        n = s.shape[0]
        gate_probs = softmax(matmul(s, self.gate.T))
        z = None
        for j in range(self.n_experts):
            expert = relu(add(matmul(s, self.weights[j].T), repeat_rows(self.biases[j], n)))
            weighted = scale_rows(expert, slice_cols(gate_probs, j, j + 1))
            z = weighted if z is None else add(z, weighted)
        return z, gate_probs

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for j in range(self.n_experts):
            params[f"fusion.expert{j}.weight"] = self.weights[j]
            params[f"fusion.expert{j}.bias"] = self.biases[j]
        params["fusion.gate"] = self.gate
        return params


class AnonymousTable:
    """Per-field id embeddings projected into the semantic space.

    Ids are pre-resolved to integer indices; index -1 (unseen) contributes
    a zero vector, which keeps the text-only path exact on new domains.
    """

    def __init__(
        self,
        field_vocabs: Mapping[str, Mapping[str, int]],
        d_v: int,
        d_a: int,
        rng: np.random.Generator,
    ):
        self.field_names = list(field_vocabs)
        self.vocabs = {name: dict(v) for name, v in field_vocabs.items()}
        self.d_v = d_v
        self.d_a = d_a
        self.tables: dict[str, Tensor] = {}
        self.projections: dict[str, Tensor] = {}
        for name in self.field_names:
            size = max(1, len(self.vocabs[name]))
            self.tables[name] = Tensor(rng.normal(0.0, 0.1, size=(size, d_a)), requires_grad=True)
            self.projections[name] = Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(d_a), size=(d_v, d_a)), requires_grad=True
            )

    def lookup_index(self, name: str, value: str) -> int:
        if name not in self.vocabs:
            raise DataError(f"unknown anonymous field {name!r}")
        return self.vocabs[name].get(value, -1)

    def fuse(self, z: Tensor, indices: Mapping[str, np.ndarray]) -> Tensor:
        """z + sum of projected id embeddings; empty index map returns z."""
        out = z
        for name, idx in indices.items():
            if name not in self.tables:
                raise DataError(f"unknown anonymous field {name!r}")
            h = rows(self.tables[name], idx)
            out = add(out, matmul(h, self.projections[name].T))
        return out

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for name in self.field_names:
            params[f"anon.{name}.table"] = self.tables[name]
            params[f"anon.{name}.proj"] = self.projections[name]
        return params

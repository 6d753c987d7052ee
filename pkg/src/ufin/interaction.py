"""Universal feature generation and adaptive interaction experts.

The decoder projects the fused semantic vector into n_u normalized
feature rows.  Each interaction expert lifts those rows into complex
vectors in log-polar form — phase from the feature values, modulus from a
learnable positive per-field parameter — so a product of features raised
to arbitrary real orders becomes a linear map of log-moduli and phases:

    prod_j z_j^{a_kj} = exp(sum_j a_kj * ln lam_j) * e^{i * sum_j a_kj * theta_j}

The expert's logit is a learned contraction of the real and imaginary
parts over all order vectors.  A TopK-gated mixture combines one expert
per domain; survivors of the TopK cut are deliberately not renormalized.
"""

from __future__ import annotations

from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from ufin.errors import DataError, NumericError, ShapeError
from ufin.numeric import (
    Tensor,
    add,
    concat,
    cos,
    exp,
    layer_norm,
    log,
    matmul,
    mul,
    repeat_rows,
    reshape,
    row,
    rows,
    scale_cols,
    sigmoid,
    sin,
    slice_cols,
    softmax,
    softplus,
    tile_cols,
)


class UniversalDecoder:
    """Project the semantic vector into n_u layer-normalized feature rows."""

    def __init__(self, n_u: int, d: int, d_v: int, rng: np.random.Generator):
        if n_u < 1:
            raise ShapeError(f"need at least one universal feature field, got {n_u}")
        self.n_u = n_u
        self.d = d
        self.d_v = d_v
        scale = 1.0 / np.sqrt(d_v)
        self.projections = [
            Tensor(rng.normal(0.0, scale, size=(d, d_v)), requires_grad=True)
            for _ in range(n_u)
        ]
        self.gains = [Tensor(np.ones((1, d)), requires_grad=True) for _ in range(n_u)]
        self.shifts = [Tensor(np.zeros((1, d)), requires_grad=True) for _ in range(n_u)]

    def __call__(self, zt: Tensor) -> list[Tensor]:
        """Decode (B, d_V) into n_u tensors of shape (B, d)."""
        return [
            layer_norm(matmul(zt, self.projections[j].T), self.gains[j], self.shifts[j])
            for j in range(self.n_u)
        ]

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for j in range(self.n_u):
            params[f"decoder.proj{j}"] = self.projections[j]
            params[f"decoder.gain{j}"] = self.gains[j]
            params[f"decoder.shift{j}"] = self.shifts[j]
        return params


class EulerExpert:
    """One adaptive-order interaction expert in complex log-polar space.

    ``orders`` holds n_o learnable real order vectors over the n_u input
    fields; ``mod_pre`` parameterizes strictly positive per-field moduli
    through a softplus.
    """

    def __init__(
        self,
        n_orders: int,
        n_fields: int,
        d: int,
        rng: np.random.Generator,
        name: str = "expert",
    ):
        self.n_orders = n_orders
        self.n_fields = n_fields
        self.d = d
        self.name = name
        self.orders = Tensor(rng.normal(0.0, 0.1, size=(n_orders, n_fields)), requires_grad=True)
        # softplus(mod_pre) == 1 at init: log-moduli start at 0, so the
        # amplitudes e^{A ln lam} start near 1 and cannot blow up early.
        self.mod_pre = Tensor(
            np.full((n_fields, d), np.log(np.e - 1.0)), requires_grad=True
        )
        self.w_re = Tensor(rng.normal(0.0, 0.1, size=(n_orders, d)), requires_grad=True)
        self.w_im = Tensor(rng.normal(0.0, 0.1, size=(n_orders, d)), requires_grad=True)
        self.bias = Tensor(np.zeros((1, 1)), requires_grad=True)

    def _lift(self, fields: Sequence[Tensor]) -> tuple[int, Tensor, Tensor]:
        """Phases (n_o, B*d) and amplitudes (n_o, d) of every order vector."""
        if len(fields) != self.n_fields:
            raise ShapeError(f"{self.name}: expected {self.n_fields} fields, got {len(fields)}")
        batch = fields[0].shape[0]
        flat = concat([reshape(f, (1, batch * self.d)) for f in fields], axis=0)
        phases = matmul(self.orders, flat)
        log_mod = log(softplus(self.mod_pre))  # (n_fields, d)
        log_amp = matmul(self.orders, log_mod)  # (n_o, d)
        if np.any(log_amp.values > 700.0):
            k = int(np.argmax(log_amp.values.max(axis=1)))
            raise NumericError(
                f"{self.name}: amplitude overflow at order vector {k} "
                f"(log-amplitude {log_amp.values[k].max():.1f}); orders blew up"
            )
        return batch, phases, exp(log_amp)

    def order_terms(self, fields: Sequence[Tensor]) -> list[tuple[Tensor, Tensor]]:
        """Per order vector, the (real, imaginary) parts of the interaction.

        Each element is a pair of (B, d) tensors holding
        prod_j z_j^{a_kj} with phases theta_j given by the field values.
        """
        batch, phases, amp = self._lift(fields)
        terms = []
        for k in range(self.n_orders):
            phase_k = reshape(row(phases, k), (batch, self.d))
            amp_k = row(amp, k)
            terms.append(
                (scale_cols(cos(phase_k), amp_k), scale_cols(sin(phase_k), amp_k))
            )
        return terms

    def __call__(self, fields: Sequence[Tensor]) -> Tensor:
        """Interaction logit of shape (B, 1).

        Contracts all order vectors at once: the output weights and
        amplitudes are tiled across the flattened batch so the whole
        mixture reduces to elementwise products and two ones-matmuls.
        """
        batch, phases, amp = self._lift(fields)
        amp_tiled = tile_cols(amp, batch)
        mixed = add(
            mul(mul(cos(phases), amp_tiled), tile_cols(self.w_re, batch)),
            mul(mul(sin(phases), amp_tiled), tile_cols(self.w_im, batch)),
        )  # (n_o, B*d)
        summed = matmul(Tensor(np.ones((1, self.n_orders))), mixed)
        per_dim = reshape(summed, (batch, self.d))
        logit = matmul(per_dim, Tensor(np.ones((self.d, 1))))
        return add(logit, repeat_rows(self.bias, batch))

    def parameters(self) -> dict[str, Tensor]:
        return {
            f"{self.name}.orders": self.orders,
            f"{self.name}.mod_pre": self.mod_pre,
            f"{self.name}.w_re": self.w_re,
            f"{self.name}.w_im": self.w_im,
            f"{self.name}.bias": self.bias,
        }


def topk_mask(gate_values: np.ndarray, k: int) -> np.ndarray:
    """0/1 mask keeping each row's k largest entries; ties go to lower index."""
    n = gate_values.shape[1]
    if not 1 <= k <= n:
        raise ShapeError(f"top-k: k={k} outside [1, {n}]")
    mask = np.zeros_like(gate_values)
    order = np.argsort(-gate_values, axis=1, kind="stable")
    np.put_along_axis(mask, order[:, :k], 1.0, axis=1)
    return mask


class InteractionMoE:
    """TopK-gated Euler experts, one per domain, routed by the semantic vector."""

    def __init__(
        self,
        n_experts: int,
        k: int,
        n_orders: int,
        n_fields: int,
        d: int,
        d_v: int,
        rng: np.random.Generator,
        theorem_mode: bool = True,
    ):
        if not 1 <= k <= n_experts:
            raise ShapeError(f"k={k} outside [1, {n_experts}]")
        if theorem_mode and k <= (n_experts + 1) // 2 and n_experts > 1:
            raise DataError(
                f"k={k} violates the shared-expert guarantee for {n_experts} experts; "
                f"need k > ceil(L/2) = {(n_experts + 1) // 2} (or disable theorem mode)"
            )
        self.n_experts = n_experts
        self.k = k
        self.experts = [
            EulerExpert(n_orders, n_fields, d, rng, name=f"interact{j}")
            for j in range(n_experts)
        ]
        self.gate = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(d_v), size=(n_experts, d_v)), requires_grad=True
        )

    def __call__(self, fields: Sequence[Tensor], zt: Tensor) -> tuple[Tensor, np.ndarray]:
        """Mixture logit (B, 1) plus the sparse gate weights actually applied."""
        probs = softmax(matmul(zt, self.gate.T))
        mask = topk_mask(probs.values, self.k)
        sparse = mul(probs, Tensor(mask))  # survivors keep their softmax mass
        logit = None
        for j in range(self.n_experts):
            weighted = mul(self.experts[j](fields), slice_cols(sparse, j, j + 1))
            logit = weighted if logit is None else add(logit, weighted)
        return logit, sparse.values

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for expert in self.experts:
            params.update(expert.parameters())
        params["interact.gate"] = self.gate
        return params


def verify_overlap(n_experts: int, k: int, selections: Sequence[Sequence[int]]) -> int:
    """Minimum pairwise intersection size over a list of k-subsets of [0, L).

    With a single selection the self-intersection (its size) is returned.
    """
    cleaned = []
    for sel in selections:
        s = set(int(i) for i in sel)
        if len(s) != k or any(not 0 <= i < n_experts for i in s):
            raise DataError(
                f"selection {sorted(s)} is not a {k}-subset of [0, {n_experts})"
            )
        cleaned.append(s)
    if not cleaned:
        raise DataError("no selections given")
    if len(cleaned) == 1:
        return k
    return min(len(a & b) for a, b in combinations(cleaned, 2))


class FeatureAdaptor:
    """Per-domain logistic-regression logit over one-hot raw categoricals.

    Every (domain, field, value) combination owns one weight slot; a
    record's logit is the sum of its active slots plus a per-domain bias.
    Weights start at zero, so an untrained adaptor scores a constant.
    """

    def __init__(self, domain_fields: Mapping[int, Mapping[str, Sequence[str]]]):
        self.slot_index: dict[tuple[int, str, str], int] = {}
        self.fields_by_domain: dict[int, list[str]] = {}
        for domain_id, fields in domain_fields.items():
            self.fields_by_domain[domain_id] = list(fields)
            for name, values in fields.items():
                for value in values:
                    self.slot_index[(domain_id, name, value)] = len(self.slot_index)
        self.max_fields = max((len(f) for f in self.fields_by_domain.values()), default=0)
        self.domain_ids = sorted(self.fields_by_domain)
        self._bias_row = {d: i for i, d in enumerate(self.domain_ids)}
        self.weights = Tensor(np.zeros((max(1, len(self.slot_index)), 1)), requires_grad=True)
        self.bias = Tensor(np.zeros((max(1, len(self.domain_ids)), 1)), requires_grad=True)

    def slot_rows(self, domain_ids: np.ndarray, values: Sequence[Mapping[str, str]]) -> np.ndarray:
        """(B, max_fields) slot indices, padded with -1; unknown values map to -1."""
        out = np.full((len(values), self.max_fields), -1, dtype=np.int64)
        for i, (d, vals) in enumerate(zip(domain_ids, values)):
            d = int(d)
            if d not in self.fields_by_domain:
                raise DataError(f"feature adaptor has no weights for domain {d}")
            for f, name in enumerate(self.fields_by_domain[d]):
                out[i, f] = self.slot_index.get((d, name, vals.get(name, "")), -1)
        return out

    def __call__(self, slot_rows: np.ndarray, domain_ids: np.ndarray) -> Tensor:
        """Adaptor logits (B, 1) from precomputed slot indices."""
        b, f = slot_rows.shape
        try:
            bias_rows = np.asarray([self._bias_row[int(d)] for d in domain_ids])
        except KeyError as exc:
            raise DataError(f"feature adaptor has no weights for domain {exc}") from None
        logit = rows(self.bias, bias_rows)
        if f:
            gathered = rows(self.weights, slot_rows.reshape(-1))  # (B*F, 1)
            per_field = reshape(gathered, (b, f))
            logit = add(logit, matmul(per_field, Tensor(np.ones((f, 1)))))
        return logit

    def record_logit(self, domain_id: int, values: Mapping[str, str]) -> float:
        slots = self.slot_rows(np.asarray([domain_id]), [values])
        return self(slots, np.asarray([domain_id])).item()

    def parameters(self) -> dict[str, Tensor]:
        return {"adaptor.weights": self.weights, "adaptor.bias": self.bias}


def predict(logit: Tensor, adaptor_logit: Tensor | None = None) -> Tensor:
    """Click probability from the interaction logit, plus the adaptor term if used."""
    if adaptor_logit is not None:
        logit = add(logit, adaptor_logit)
    return sigmoid(logit)

"""Feature textualization: render a record into a natural-language prompt.

The base variant summarizes user, item, and context features into one
sentence per side; sides are separated by a period and features by a
comma.  Three ablation variants are supported: ``prompt1`` flattens the
record into ``field: value;`` pairs, ``prompt2`` masks every field name
with the word "Field", and ``prompt3`` renders the base wording minus a
configured drop list.  Anonymous-id fields are never rendered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ufin.errors import ConfigError
from ufin.data.schema import FieldSchema, InstanceRecord

VARIANTS = ("base", "prompt1", "prompt2", "prompt3")

MASK_WORD = "Field"

_QUOTE_MAP = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'"})


@dataclass(frozen=True)
class SidePhrasing:
    """How one side's clauses are introduced and joined into a sentence."""

    intro: str | None = None  # e.g. "There is a user"
    clause: str = "{field} is {value}"
    first_prefix: str = ""  # prepended to the first clause, e.g. "whose "
    mid_joiner: str = ", "
    last_joiner: str = ", and "
    overrides: Mapping[str, str] = field(default_factory=dict)  # field -> clause template


DEFAULT_PHRASING: dict[str, SidePhrasing] = {
    "user": SidePhrasing(intro="There is a user", first_prefix="whose "),
    "item": SidePhrasing(intro="There is an item", clause="its {field} is {value}"),
    "context": SidePhrasing(clause="the {field} is {value}"),
}


@dataclass(frozen=True)
class PromptTemplate:
    variant: str = "base"
    drop_fields: tuple[str, ...] = ()
    phrasing: Mapping[str, SidePhrasing] = field(default_factory=lambda: dict(DEFAULT_PHRASING))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown prompt variant {self.variant!r}; expected one of {VARIANTS}")


def normalize_quotes(text: str) -> str:
    return text.translate(_QUOTE_MAP)


def _visible_fields(schema: Sequence[FieldSchema], template: PromptTemplate) -> list[FieldSchema]:
    dropped = set(template.drop_fields) if template.variant == "prompt3" else set()
    return [f for f in schema if f.kind != "anonymous_id" and f.name not in dropped]


def _sentence(side: str, pairs: list[tuple[str, str]], template: PromptTemplate, mask: bool) -> str:
    phr = template.phrasing.get(side, DEFAULT_PHRASING[side])
    clauses = []
    for name, value in pairs:
        tpl = phr.overrides.get(name, phr.clause)
        shown = MASK_WORD if mask else name
        clauses.append(tpl.format(field=shown, value=value))
    body = clauses[0] if len(clauses) == 1 else (
        phr.mid_joiner.join(clauses[:-1]) + phr.last_joiner + clauses[-1]
    )
    if phr.intro:
        sentence = f"{phr.intro}, {phr.first_prefix}{body}"
    else:
        sentence = phr.first_prefix + body
        sentence = sentence[0].upper() + sentence[1:]
    return sentence + "."


def render(record: InstanceRecord, schema: Sequence[FieldSchema], template: PromptTemplate) -> str:
    """Deterministically render one record under the template variant."""
    fields = _visible_fields(schema, template)
    pairs = [(f.name, record.values.get(f.name, "")) for f in fields]
    pairs = [(n, v) for n, v in pairs if v != ""]  # empty values drop their clause

    if template.variant == "prompt1":
        flat = "; ".join(f"{n}: {v}" for n, v in pairs)
        return normalize_quotes(flat + "." if flat else "")

    mask = template.variant == "prompt2"
    sentences = []
    for side in ("user", "item", "context"):
        side_names = {f.name for f in fields if f.side == side}
        side_pairs = [(n, v) for n, v in pairs if n in side_names]
        if side_pairs:
            sentences.append(_sentence(side, side_pairs, template, mask))
    return normalize_quotes(" ".join(sentences))


def render_all(
    records: Sequence[InstanceRecord],
    schema: Sequence[FieldSchema],
    template: PromptTemplate,
) -> list[str]:
    return [render(r, schema, template) for r in records]

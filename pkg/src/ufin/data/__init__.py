"""Dataset schema, splitting, synthetic generation, and TSV serialization."""

from ufin.data.schema import (
    DomainDataset,
    FieldSchema,
    InstanceRecord,
    map_rating_to_label,
    split,
    validate_schema,
)
from ufin.data.synth import SynthConfig, generate, oracle_scores, topic_words
from ufin.data.tsvio import (
    load_domain_dir,
    load_schema,
    load_tsv,
    write_domain_dir,
    write_schema,
    write_tsv,
)

__all__ = [
    "DomainDataset",
    "FieldSchema",
    "InstanceRecord",
    "SynthConfig",
    "generate",
    "load_domain_dir",
    "load_schema",
    "load_tsv",
    "map_rating_to_label",
    "oracle_scores",
    "split",
    "topic_words",
    "validate_schema",
    "write_domain_dir",
    "write_schema",
    "write_tsv",
]

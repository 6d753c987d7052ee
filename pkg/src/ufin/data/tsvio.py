"""TSV ingestion/serialization with a JSON schema sidecar.

Data files carry the columns ``domain_id, row_id, label`` followed by the
schema fields in declared order.  A dataset directory holds, per domain,
``domain{d}.schema.json``, ``domain{d}.{train,valid,test}.tsv`` and an
optional ``domain{d}.pstar.tsv`` with the generating probabilities, plus a
``manifest.json`` naming the domains.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

from ufin.errors import DataError
from ufin.data.schema import DomainDataset, FieldSchema, InstanceRecord, validate_schema

FIXED_COLUMNS = ("domain_id", "row_id", "label")


def write_schema(path, fields: Sequence[FieldSchema]) -> None:
    entries = []
    for f in fields:
        entry: dict = {"name": f.name, "side": f.side, "kind": f.kind}
        if f.vocabulary is not None:
            entry["vocabulary"] = list(f.vocabulary)
        entries.append(entry)
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def load_schema(path) -> list[FieldSchema]:
    try:
        entries = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read schema: {exc}") from exc
    fields = []
    for entry in entries:
        vocab = entry.get("vocabulary")
        fields.append(
            FieldSchema(
                name=entry["name"],
                side=entry["side"],
                kind=entry["kind"],
                vocabulary=tuple(vocab) if vocab is not None else None,
            )
        )
    validate_schema(fields)
    return fields


def write_tsv(path, records: Sequence[InstanceRecord], schema: Sequence[FieldSchema]) -> None:
    names = [f.name for f in schema]
    lines = ["\t".join([*FIXED_COLUMNS, *names])]
    for r in records:
        cells = [str(r.domain_id), str(r.row_id), str(r.label)]
        for name in names:
            value = r.values.get(name, "")
            if "\t" in value or "\n" in value:
                raise DataError(f"row {r.row_id}: field {name!r} contains a tab or newline")
            cells.append(value)
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_tsv(
    path,
    schema: Sequence[FieldSchema],
    lenient: bool = False,
    ratings: bool = False,
) -> tuple[list[InstanceRecord], list[str]]:
    """Parse one TSV; returns (records, skipped-row report).

    Malformed rows raise unless ``lenient`` is set, in which case they are
    reported with their line numbers and skipped.  With ``ratings`` the
    label column holds 1..5 star ratings: 4-5 map to 1, 1-2 to 0, and
    rating-3 rows are silently dropped.
    """
    from ufin.data.schema import map_rating_to_label

    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    names = [f.name for f in schema]
    expected = [*FIXED_COLUMNS, *names]
    header = lines[0].split("\t")
    if header != expected:
        missing = [c for c in expected if c not in header]
        if missing:
            raise DataError(f"{path}: header is missing columns {missing}")
        raise DataError(f"{path}: header order mismatch: {header} != {expected}")

    records: list[InstanceRecord] = []
    problems: list[str] = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        try:
            if len(cells) != len(expected):
                raise DataError(f"expected {len(expected)} columns, got {len(cells)}")
            if ratings:
                label = map_rating_to_label(int(cells[2]))
                if label is None:
                    continue
            elif cells[2] in ("0", "1"):
                label = int(cells[2])
            else:
                raise DataError(f"bad label {cells[2]!r}")
            records.append(
                InstanceRecord(
                    domain_id=int(cells[0]),
                    row_id=int(cells[1]),
                    label=label,
                    values=dict(zip(names, cells[3:])),
                )
            )
        except (DataError, ValueError) as exc:
            message = f"{path}:{lineno}: {exc}"
            if not lenient:
                raise DataError(message) from exc
            problems.append(message)
    return records, problems


def _pstar_path(directory: Path, domain_id: int) -> Path:
    return directory / f"domain{domain_id}.pstar.tsv"


def write_domain_dir(directory, datasets: Sequence[DomainDataset]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        d = ds.domain_id
        write_schema(directory / f"domain{d}.schema.json", ds.schema)
        for part, records in ds.splits().items():
            write_tsv(directory / f"domain{d}.{part}.tsv", records, ds.schema)
        if ds.oracle_probs is not None:
            lines = ["row_id\tp_star"]
            lines += [f"{rid}\t{p!r}" for rid, p in sorted(ds.oracle_probs.items())]
            _pstar_path(directory, d).write_text("\n".join(lines) + "\n")
    manifest = {"domains": sorted(ds.domain_id for ds in datasets)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_domain_dir(directory, domains: Optional[Sequence[int]] = None) -> list[DomainDataset]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{directory}: no manifest.json; not a dataset directory")
    manifest = json.loads(manifest_path.read_text())
    wanted = list(domains) if domains is not None else manifest["domains"]
    datasets = []
    for d in wanted:
        if d not in manifest["domains"]:
            raise DataError(f"{directory}: domain {d} not in manifest {manifest['domains']}")
        schema = load_schema(directory / f"domain{d}.schema.json")
        parts = {}
        for part in ("train", "valid", "test"):
            records, _ = load_tsv(directory / f"domain{d}.{part}.tsv", schema)
            parts[part] = records
        oracle = None
        pstar = _pstar_path(directory, d)
        if pstar.exists():
            oracle = {}
            for line in pstar.read_text().splitlines()[1:]:
                rid, p = line.split("\t")
                oracle[int(rid)] = float(p)
        ds = DomainDataset(domain_id=d, schema=schema, oracle_probs=oracle, **parts)
        ds.check_partitions()
        datasets.append(ds)
    return datasets

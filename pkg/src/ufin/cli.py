"""Command-line pipeline: synth -> encode -> pretrain-teachers -> train -> evaluate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.  Every output-producing command refuses to clobber an existing
target unless --overwrite is given.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ufin.config import RunConfig, resolve
from ufin.data import (
    SynthConfig,
    generate,
    load_domain_dir,
    load_schema,
    load_tsv,
    split,
    write_domain_dir,
)
from ufin.data.schema import DomainDataset
from ufin.encoder import EmbeddingCache, HashEncoder
from ufin.errors import ConfigError, DataError, NumericError
from ufin.evaluation import evaluate
from ufin.model import Featurizer, ModelConfig, UfinModel, export_universal
from ufin.prompting import PromptTemplate, render
from ufin.training import (
    TrainConfig,
    history_to_csv,
    load_teacher,
    pretrain_teachers,
    save_teacher,
    train_ufin,
)

SPLITS = ("train", "valid", "test")


def _check_output(path, overwrite: bool) -> Path:
    path = Path(path)
    if path.exists() and not overwrite:
        raise DataError(f"output {path} already exists; pass --overwrite to replace it")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _domains_arg(raw) -> list[int] | None:
    if raw is None:
        return None
    try:
        return [int(d) for d in str(raw).split(",") if d != ""]
    except ValueError:
        raise ConfigError(f"--domains expects a comma-separated integer list, got {raw!r}") from None


def _template(cfg: RunConfig) -> PromptTemplate:
    return PromptTemplate(variant=cfg.prompt_variant, drop_fields=cfg.drop_fields())


def _synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        domains=cfg.synth_domains,
        users=cfg.synth_users,
        items=cfg.synth_items,
        interactions=cfg.synth_interactions,
        topics=cfg.synth_topics,
        vocab=cfg.synth_vocab,
        persona_blend=cfg.synth_persona_blend,
        mixture_blend=cfg.synth_mixture_blend,
        affinity_weight=cfg.synth_affinity_weight,
        context_weight=cfg.synth_context_weight,
        noise=cfg.synth_noise,
        label_mode=cfg.synth_label_mode,
    )


def _train_config(cfg: RunConfig, mode: str | None = None, teacher: bool = False) -> TrainConfig:
    if teacher:
        return TrainConfig(
            seed=cfg.seed,
            lr=cfg.train_teacher_lr,
            weight_decay=cfg.train_weight_decay,
            batch_size=cfg.train_batch_size,
            epochs=cfg.train_teacher_epochs,
            patience=cfg.train_teacher_patience,
        )
    return TrainConfig(
        seed=cfg.seed,
        lr=cfg.train_lr,
        weight_decay=cfg.train_weight_decay,
        batch_size=cfg.train_batch_size,
        epochs=cfg.train_epochs,
        patience=cfg.train_patience,
        mode=mode or cfg.model_mode,
    )


def _all_records(datasets, splits=SPLITS):
    for ds in datasets:
        for name in splits:
            yield ds, ds.splits()[name]


def _backend_from_meta(cfg: RunConfig, extra: dict, cache_path):
    pipeline = extra.get("pipeline", {})
    if cache_path:
        return EmbeddingCache.load(cache_path)
    backend = pipeline.get("backend", cfg.encoder_backend)
    if backend == "hash":
        return HashEncoder(
            d_v=pipeline.get("d_v", cfg.model_d_v),
            seed=pipeline.get("hash_seed", cfg.encoder_hash_seed),
        )
    raise DataError("model was trained from a cache backend; pass --cache FILE")


def _template_from_meta(extra: dict) -> PromptTemplate:
    pipeline = extra.get("pipeline", {})
    return PromptTemplate(
        variant=pipeline.get("variant", "base"),
        drop_fields=tuple(pipeline.get("drop_fields", ())),
    )


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed})
    out = Path(args.out)
    if (out / "manifest.json").exists() and not args.overwrite:
        raise DataError(f"dataset directory {out} already exists; pass --overwrite")
    datasets = generate(_synth_config(cfg), seed=cfg.seed)
    write_domain_dir(out, datasets)
    total = sum(len(ds.train) + len(ds.valid) + len(ds.test) for ds in datasets)
    print(f"wrote {len(datasets)} domains, {total} rows to {out}")
    return 0


def cmd_prepare(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed})
    schema = load_schema(args.schema)
    records, problems = load_tsv(args.input, schema, lenient=args.lenient, ratings=args.ratings)
    for message in problems:
        print(message, file=sys.stderr)
    out = Path(args.out)
    if (out / "manifest.json").exists() and not args.overwrite:
        raise DataError(f"dataset directory {out} already exists; pass --overwrite")
    by_domain: dict[int, list] = {}
    for r in records:
        by_domain.setdefault(r.domain_id, []).append(r)
    datasets = []
    for d in sorted(by_domain):
        train, valid, test = split(by_domain[d], seed=cfg.seed * 31 + d)
        datasets.append(DomainDataset(d, list(schema), train, valid, test))
    write_domain_dir(out, datasets)
    sizes = {ds.domain_id: (len(ds.train), len(ds.valid), len(ds.test)) for ds in datasets}
    print(f"prepared {len(datasets)} domains: {sizes}")
    return 0


def cmd_render(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed, "prompt_variant": args.variant,
                                "prompt_drop_fields": args.drop_fields})
    datasets = load_domain_dir(args.data, _domains_arg(args.domains))
    template = _template(cfg)
    out = _check_output(args.out, args.overwrite)
    splits = SPLITS if args.split == "all" else (args.split,)
    lines = ["row_id\tprompt"]
    for ds, records in _all_records(datasets, splits):
        for r in records:
            lines.append(f"{r.row_id}\t{render(r, ds.schema, template)}")
    out.write_text("\n".join(lines) + "\n")
    print(f"rendered {len(lines) - 1} prompts to {out}")
    return 0


def cmd_encode(args) -> int:
    cfg = resolve(args.config, {
        "seed": args.seed, "model_d_v": args.d_v, "encoder_hash_seed": args.hash_seed,
        "prompt_variant": args.variant, "prompt_drop_fields": args.drop_fields,
    })
    datasets = load_domain_dir(args.data, _domains_arg(args.domains))
    if args.validate:
        cache = EmbeddingCache.load(args.validate)
        missing = [
            r.row_id
            for ds, records in _all_records(datasets)
            for r in records
            if r.row_id not in cache.entries
        ]
        if missing:
            raise DataError(
                f"cache {args.validate} lacks {len(missing)} rows (first missing: {missing[0]})"
            )
        print(f"cache ok: d_v={cache.d_v}, {len(cache)} entries cover all rows")
        return 0
    out = _check_output(args.out, args.overwrite)
    template = _template(cfg)
    encoder = HashEncoder(d_v=cfg.model_d_v, seed=cfg.encoder_hash_seed)
    cache = EmbeddingCache(cfg.model_d_v)
    count = 0
    for ds, records in _all_records(datasets):
        for r in records:
            cache.put(r.row_id, encoder.pooled(render(r, ds.schema, template)).astype(np.float32))
            count += 1
    cache.save(out)
    print(f"encoded {count} rows at d_v={cfg.model_d_v} into {out}")
    return 0


def cmd_pretrain_teachers(args) -> int:
    cfg = resolve(args.config, {
        "seed": args.seed, "train_teacher_lr": args.teacher_lr,
        "train_teacher_epochs": args.teacher_epochs,
    })
    datasets = load_domain_dir(args.data, _domains_arg(args.domains))
    out = Path(args.out)
    if (out / "teachers.json").exists() and not args.overwrite:
        raise DataError(f"teacher directory {out} already exists; pass --overwrite")
    out.mkdir(parents=True, exist_ok=True)
    teachers = pretrain_teachers(datasets, _train_config(cfg, teacher=True), d=cfg.model_d, n_orders=cfg.model_n_o)
    for teacher in teachers:
        save_teacher(out / f"teacher{teacher.domain_id}.ufnp", teacher)
    import json

    (out / "teachers.json").write_text(
        json.dumps({"domains": [t.domain_id for t in teachers]}, indent=2) + "\n"
    )
    print(f"saved {len(teachers)} teachers to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve(args.config, {
        "seed": args.seed, "model_mode": args.mode, "train_lr": args.lr,
        "train_epochs": args.epochs, "train_batch_size": args.batch_size,
        "prompt_variant": args.variant, "prompt_drop_fields": args.drop_fields,
        "model_d_v": args.d_v, "model_k": args.k,
    })
    domains = _domains_arg(args.domains)
    datasets = load_domain_dir(args.data, domains)
    teacher_dir = Path(args.teachers)
    teachers = [load_teacher(teacher_dir / f"teacher{ds.domain_id}.ufnp") for ds in datasets]

    if args.cache:
        backend = EmbeddingCache.load(args.cache)
        d_v = backend.d_v
    else:
        d_v = cfg.model_d_v
        backend = HashEncoder(d_v=d_v, seed=cfg.encoder_hash_seed)

    init_model = None
    if args.init_model:
        init_model, _ = UfinModel.load(args.init_model)

    out = _check_output(args.out, args.overwrite)
    model_cfg = ModelConfig(
        n_domains=len(datasets),
        d_v=d_v,
        d=cfg.model_d,
        d_a=cfg.model_d_a,
        n_u=cfg.model_n_u,
        n_o=cfg.model_n_o,
        k=cfg.model_k,
        mode=cfg.model_mode,
        theorem_mode=cfg.model_theorem_mode,
    )
    template = _template(cfg)
    model, _, history = train_ufin(
        datasets, teachers, template, backend,
        _train_config(cfg), model_cfg=model_cfg, init_from=init_model,
    )
    pipeline = {
        "backend": "cache" if args.cache else "hash",
        "hash_seed": cfg.encoder_hash_seed,
        "d_v": d_v,
        "variant": cfg.prompt_variant,
        "drop_fields": list(cfg.drop_fields()),
        "train_domains": [ds.domain_id for ds in datasets],
    }
    model.save(out, extra_meta={"pipeline": pipeline})
    if args.history:
        history_to_csv(history, _check_output(args.history, args.overwrite))
    best = max(h.val_auc for h in history)
    print(f"trained {cfg.model_mode} model for {len(history)} epochs; best val AUC {best:.4f}")
    print(f"checkpoint: {out}")
    return 0


def _load_model_and_featurizer(args, cfg, datasets):
    model, extra = UfinModel.load(args.model)
    backend = _backend_from_meta(cfg, extra, getattr(args, "cache", None))
    template = _template_from_meta(extra)
    schemas = {ds.domain_id: ds.schema for ds in datasets}
    featurizer = Featurizer(model.space, schemas, template, backend, adaptor=model.adaptor)
    return model, featurizer


def cmd_evaluate(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed})
    datasets = load_domain_dir(args.data, _domains_arg(args.domains))
    model, featurizer = _load_model_and_featurizer(args, cfg, datasets)
    report = evaluate(model, featurizer, datasets, split=args.split, mode=args.mode)
    print(report.format_table())
    if args.gate_histogram:
        from ufin.model import gate_histogram

        print("expert selection counts per domain:")
        for d, counts in gate_histogram(model, featurizer, datasets, split=args.split).items():
            print(f"  domain {d}: {counts.tolist()}")
    if args.report:
        _check_output(args.report, args.overwrite).write_text(report.to_json() + "\n")
    return 0


def cmd_zeroshot(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed})
    domains = _domains_arg(args.domains)
    if not domains:
        raise ConfigError("zeroshot requires --domains with the held-out domain ids")
    datasets = load_domain_dir(args.data, domains)
    model, featurizer = _load_model_and_featurizer(args, cfg, datasets)
    trained_on = set(model.space.adaptor_fields)
    overlap = trained_on & {ds.domain_id for ds in datasets}
    if overlap:
        print(f"warning: domains {sorted(overlap)} were seen in training", file=sys.stderr)
    report = evaluate(model, featurizer, datasets, split=args.split, mode="zero-shot")
    print(report.format_table())
    if args.report:
        _check_output(args.report, args.overwrite).write_text(report.to_json() + "\n")
    return 0


def cmd_export_features(args) -> int:
    cfg = resolve(args.config, {"seed": args.seed})
    datasets = load_domain_dir(args.data, _domains_arg(args.domains))
    model, featurizer = _load_model_and_featurizer(args, cfg, datasets)
    records = [r for ds in datasets for r in ds.splits()[args.split]]
    out = _check_output(args.out, args.overwrite)
    export_universal(model, featurizer, records, out)
    print(f"exported {len(records)} universal-feature rows to {out}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="root seed (default 42)")
    p.add_argument("--overwrite", action="store_true", help="replace existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ufin",
        description="Multi-domain CTR prediction from text-derived universal features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the seeded synthetic benchmark")
    p.add_argument("--out", required=True, help="dataset directory to create")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="split a raw TSV into train/valid/test")
    p.add_argument("--input", required=True, help="raw TSV (domain_id,row_id,label,fields...)")
    p.add_argument("--schema", required=True, help="JSON schema sidecar")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--ratings", action="store_true", help="label column holds 1..5 ratings")
    p.add_argument("--lenient", action="store_true", help="skip malformed rows with a report")
    _add_common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("render", help="dump prompt text for every row")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all", choices=["all", *SPLITS])
    p.add_argument("--domains", help="comma-separated domain ids")
    p.add_argument("--variant", choices=["base", "prompt1", "prompt2", "prompt3"])
    p.add_argument("--drop-fields", dest="drop_fields", help="comma-separated fields for prompt3")
    _add_common(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("encode", help="build or validate a UFEC embedding cache")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="UFEC cache to write (hash backend)")
    p.add_argument("--validate", help="existing UFEC cache to check instead of encoding")
    p.add_argument("--domains")
    p.add_argument("--d-v", dest="d_v", type=int)
    p.add_argument("--hash-seed", dest="hash_seed", type=int)
    p.add_argument("--variant", choices=["base", "prompt1", "prompt2", "prompt3"])
    p.add_argument("--drop-fields", dest="drop_fields")
    _add_common(p)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("pretrain-teachers", help="train one guidance network per domain")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="teacher directory")
    p.add_argument("--domains")
    p.add_argument("--teacher-lr", dest="teacher_lr", type=float)
    p.add_argument("--teacher-epochs", dest="teacher_epochs", type=int)
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain_teachers)

    p = sub.add_parser("train", help="train the multi-domain model")
    p.add_argument("--data", required=True)
    p.add_argument("--teachers", required=True, help="directory from pretrain-teachers")
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--history", help="CSV of per-epoch losses and metrics")
    p.add_argument("--cache", help="UFEC cache; default is the hash backend")
    p.add_argument("--domains")
    p.add_argument("--mode", choices=["t", "t+f"])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--d-v", dest="d_v", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--variant", choices=["base", "prompt1", "prompt2", "prompt3"])
    p.add_argument("--drop-fields", dest="drop_fields")
    p.add_argument("--init-model", dest="init_model", help="warm-start checkpoint (cross-platform)")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--mode", default="in-domain", choices=["in-domain", "cross-platform"])
    p.add_argument("--domains")
    p.add_argument("--cache")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument(
        "--gate-histogram", dest="gate_histogram", action="store_true",
        help="print per-domain expert selection counts",
    )
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("zeroshot", help="score a text-only model on unseen domains")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--domains", required=True, help="held-out domain ids")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--cache")
    p.add_argument("--report")
    _add_common(p)
    p.set_defaults(fn=cmd_zeroshot)

    p = sub.add_parser("export-features", help="dump universal feature rows to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--domains")
    p.add_argument("--cache")
    _add_common(p)
    p.set_defaults(fn=cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

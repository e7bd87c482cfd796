"""Command-line pipeline: discover -> generate -> validate -> mine -> evaluate.

Every subcommand reads a YAML config, takes its inputs as files, writes its
outputs into ``--out-dir`` and leaves a run manifest next to them. Exit
codes: 0 success, 1 configuration error, 2 data validation error,
3 backend or transport error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import discovery, evaluation, generation, rules, stats
from . import table as tbl
from .errors import (
    AlignmentError, ConfigError, DegenerateTableError, EncodingError, ParseError, SchemaError,
    SettingsError, TemplateError, TransportError, ValidationError,
)

log = logging.getLogger("llmfeat")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3
_EXIT_FOR = (
    ((ConfigError, SettingsError, TemplateError, FileNotFoundError, IsADirectoryError), EXIT_CONFIG),
    ((SchemaError, ParseError, ValidationError, EncodingError, DegenerateTableError,
      AlignmentError), EXIT_DATA),
    ((TransportError,), EXIT_BACKEND),
)
SECRET_KEYS = {"api_key"}


# --------------------------------------------------------------------------- #
# config


def load_config(path) -> dict:
    """Read the YAML config; relative file paths resolve against its folder."""
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg["_base"] = str(path.resolve().parent)
    llm = cfg.setdefault("llm", {})
    # environment overrides for the live backend
    for key, env in (("endpoint", "LLMFEAT_ENDPOINT"), ("model", "LLMFEAT_MODEL")):
        if os.environ.get(env):
            llm[key] = os.environ[env]
    mode = llm.get("mode", "mock")
    if mode not in ("mock", "live"):
        raise ConfigError(f"llm.mode must be 'mock' or 'live', got {mode!r}")
    if mode == "mock" and llm.get("endpoint") and llm.get("mock_fixture"):
        log.info("llm.mode is mock; ignoring llm.endpoint")
    return cfg


def _section(cfg, name) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sec


def _path(cfg, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def _require(sec, key, where):
    if key not in sec or sec[key] in (None, ""):
        raise ConfigError(f"config {where}.{key} is required")
    return sec[key]


def _snapshot(cfg) -> dict:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items() if k not in SECRET_KEYS and k != "_base"}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj
    return clean(cfg)


# --------------------------------------------------------------------------- #
# manifest and output helpers


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    from . import __version__
    return {"llmfeat": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir: Path, command: str, cfg: dict, inputs: dict, settings: dict,
                   outputs) -> Path:
    manifest = {
        "command": command,
        "inputs": {role: {"file": Path(p).name, "sha256": _sha256(p)}
                   for role, p in sorted(inputs.items()) if p is not None},
        "settings": settings,
        "config": _snapshot(cfg),
        "outputs": sorted(Path(o).name for o in outputs),
        "versions": _versions(),
    }
    path = out_dir / f"manifest.{command}.json"
    _write_json(path, manifest)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema_path(data: Path) -> Path:
    return data.with_name(data.stem + ".schema.json")


def _load_data(cfg, data_path, *, augmented=False) -> tbl.AugmentedTable:
    """Raw data uses the dataset section; augmented tables carry their own schema file."""
    data_path = Path(data_path)
    ds = _section(cfg, "dataset")
    schema_file = _schema_path(data_path)
    if schema_file.exists():
        schema = json.loads(schema_file.read_text(encoding="utf-8"))
        return tbl.load_csv(data_path, schema, target=schema.get("__target__"),
                            id_column=schema.get("__id__", "row_id" if augmented else None))
    target = _require(ds, "target_column", "dataset")
    schema = dict(ds.get("schema") or {})
    text_col = ds.get("text_column")
    if text_col and text_col not in schema:
        schema[text_col] = "text"
    id_column = ds.get("id_column") or ("row_id" if augmented else None)
    return tbl.load_csv(data_path, schema, target=target, id_column=id_column)


def _write_table(table, path: Path) -> list[Path]:
    tbl.write_csv(table, path)
    schema = tbl.schema_of(table)
    schema["__id__"] = "row_id"
    _write_json(_schema_path(path), schema)
    return [path, _schema_path(path)]


def _backend(cfg, fixture_key="mock_fixture"):
    llm = _section(cfg, "llm")
    if llm.get("mode", "mock") == "live":
        return generation.HttpBackend(llm.get("endpoint"), api_key_env=llm.get("api_key_env",
                                                                              "OPENAI_API_KEY"))
    fixture = llm.get(fixture_key) or llm.get("mock_fixture")
    if not fixture:
        raise ConfigError(f"mock mode needs llm.{fixture_key}")
    return generation.MockBackend.from_file(_path(cfg, fixture))


def _model_settings(cfg) -> dict:
    llm = _section(cfg, "llm")
    return {
        "model": str(llm.get("model", "mock-model")),
        "temperature": float(llm.get("temperature", 0.0)),
        "top_p": float(llm.get("top_p", 0.9)),
        "parallelism": int(llm.get("parallelism", 4)),
    }


# --------------------------------------------------------------------------- #
# commands


def cmd_discover(args, cfg) -> int:
    out = _out_dir(args)
    ds = _section(cfg, "dataset")
    dsec = _section(cfg, "discovery")
    text_col = _require(ds, "text_column", "dataset")
    table = _load_data(cfg, args.data)
    texts = table.column(text_col).values
    targets = table.column(table.target).values
    rows = tuple((t, y) for t, y in zip(texts, targets) if t is not None and y is not None)
    meta = discovery.DatasetMeta(
        name=str(ds.get("name", Path(args.data).stem)),
        description=str(ds.get("description", "")),
        text_column=text_col, target_column=table.target,
        target_definition=str(ds.get("target_definition", "")), example_rows=rows,
    )
    sample_size = args.sample_size if args.sample_size is not None else int(dsec.get("sample_size", 40))
    seed = args.seed if args.seed is not None else int(dsec.get("seed", 0))
    template = dsec.get("template")
    prompt = discovery.build_discovery_prompt(
        meta, sample_size, seed,
        template=_path(cfg, template).read_text(encoding="utf-8") if template else None,
    )
    ms = _model_settings(cfg)
    messages = []
    if prompt.system_message:
        messages.append(("system", prompt.system_message))
    messages.append(("user", prompt.body))
    req = generation.LlmRequest("discovery", ms["model"], tuple(messages), ms["temperature"],
                                ms["top_p"], deterministic=ms["temperature"] == 0)
    (resp,) = generation.submit([req], _backend(cfg, "discovery_fixture"), parallelism=1)
    if resp.status != "ok":
        raise TransportError(f"discovery request failed: {resp.status} ({resp.error})")
    specs = discovery.parse_feature_specs(resp.content)
    max_cat = int(dsec.get("max_categories", discovery.MAX_CATEGORIES))
    specs = [discovery.cap_categories(s, max_cat) for s in specs]
    if len(specs) < discovery.RECOMMENDED_FEATURE_COUNT:
        log.warning("model proposed %d features (fewer than %d)", len(specs),
                    discovery.RECOMMENDED_FEATURE_COUNT)
    features = out / "features.json"
    discovery.save_specs(specs, features)
    (out / "discovery_prompt.txt").write_text(prompt.body, encoding="utf-8")
    write_manifest(out, "discover", cfg, {"data": args.data},
                   {"sample_size": sample_size, "seed": seed, "sample_rows": prompt.metadata["sample_rows"],
                    "feature_count": len(specs), **ms},
                   [features, out / "discovery_prompt.txt"])
    print(f"wrote {len(specs)} features to {features}")
    return EXIT_OK


def cmd_generate(args, cfg) -> int:
    out = _out_dir(args)
    ds = _section(cfg, "dataset")
    gsec = _section(cfg, "generation")
    llm = _section(cfg, "llm")
    text_col = _require(ds, "text_column", "dataset")
    workflow = args.workflow or gsec.get("workflow", "auto")
    policy = args.policy or gsec.get("policy", "strict")
    mode = args.mode or llm.get("mode", "mock")
    table = _load_data(cfg, args.data)
    specs = discovery.load_specs(args.features)
    single_kwargs = {k: gsec[k] for k in ("subject", "source", "source_label") if k in gsec}
    prompts = generation.build_prompts(table, specs, text_col, workflow,
                                       **(single_kwargs if workflow == "user" else {}))
    ms = _model_settings(cfg)
    requests = [generation.make_request(p, ms["model"], ms["temperature"], ms["top_p"])
                for p in prompts]
    settings = {"workflow": workflow, "mode": mode, "policy": policy, "requests": len(requests), **ms}
    inputs = {"data": args.data, "features": args.features}

    if mode == "batch-emit":
        cap = int(llm.get("max_requests_per_file", generation.DEFAULT_MAX_REQUESTS_PER_FILE))
        paths = generation.emit_batch_files(requests, out / "batches", cap)
        settings.update(max_requests_per_file=cap, batch_files=len(paths))
        write_manifest(out, "generate", cfg, inputs, settings, paths)
        print(f"wrote {len(requests)} requests to {len(paths)} batch files in {out / 'batches'}")
        return EXIT_OK

    malformed = []
    if mode == "batch-ingest":
        if not args.results:
            raise ConfigError("batch-ingest needs --results")
        responses = []
        for k, p in enumerate(args.results):
            got, bad = generation.ingest_batch_results(p)
            responses.extend(got)
            malformed.extend({"file": Path(p).name, "line": n, "reason": r} for n, r in bad)
            inputs[f"results_{k}"] = p
    elif mode in ("mock", "live"):
        if mode == "live":
            cfg["llm"]["mode"] = "live"
        backend = _backend(cfg)
        responses = generation.submit(requests, backend, parallelism=ms["parallelism"])
    else:
        raise ConfigError(f"unknown generation mode {mode!r}")

    augmented, report = generation.validate_and_attach(responses, specs, table, policy)
    files = _write_table(augmented, out / "augmented.csv")
    rep = report.to_dict()
    rep["malformed_lines"] = malformed
    rep["responses"] = {s: sum(r.status == s for r in responses) for s in generation.STATUSES}
    _write_json(out / "report.json", rep)
    files.append(out / "report.json")
    write_manifest(out, "generate", cfg, inputs, settings, files)
    print(f"augmented table: {augmented.n_rows} of {table.n_rows} rows "
          f"({report.rows_invalid} invalid, policy {policy})")
    return EXIT_OK


def _smog_column(table, text_col):
    out = []
    for t in table.column(text_col).values:
        try:
            out.append(stats.smog_index(t or ""))
        except ValueError:
            out.append(None)
    return out


def cmd_validate(args, cfg) -> int:
    out = _out_dir(args)
    vsec = _section(cfg, "validation")
    table = _load_data(cfg, args.data, augmented=True)
    alpha = float(vsec.get("alpha", 0.05))
    reps = int(vsec.get("bootstrap_reps", 2500))
    seed = args.seed if args.seed is not None else int(vsec.get("seed", 0))
    names = vsec.get("features") or [c.name for c in table.feature_columns()]
    results, skipped = [], []
    for name in names:
        try:
            results.append(stats.bootstrap_test(table, name, reps=reps, alpha=alpha, seed=seed))
        except DegenerateTableError as exc:
            log.warning("skipping %s: %s", name, exc)
            skipped.append({"feature": name, "reason": str(exc)})
    correlations = []
    text_col = _section(cfg, "dataset").get("text_column")
    for entry in vsec.get("correlations") or []:
        method = entry.get("method", "pearson")
        x = stats.column_as_numbers(table, entry["feature"])
        ref = entry["reference"]
        if ref == "smog":
            if not text_col:
                raise ConfigError("smog correlation needs dataset.text_column")
            y = _smog_column(table, text_col)
        else:
            y = stats.column_as_numbers(table, ref)
        r = stats.correlate(x, y, method)
        correlations.append({"feature": entry["feature"], "reference": ref, "method": method,
                             "r": round(r, 6)})
    csv_path, json_path = out / "validation.csv", out / "validation.json"
    csv_path.write_text(stats.report_csv(results), encoding="utf-8")
    body = json.loads(stats.report_json(results))
    _write_json(json_path, {"alpha": alpha, "bootstrap_reps": reps, "seed": seed,
                            "features": body, "skipped": skipped, "correlations": correlations})
    write_manifest(out, "validate", cfg, {"data": args.data},
                   {"alpha": alpha, "bootstrap_reps": reps, "seed": seed}, [csv_path, json_path])
    print(stats.report_csv(results), end="")
    return EXIT_OK


def _experiment(cfg, exp_id):
    msec = _section(cfg, "mining")
    experiments = msec.get("experiments") or []
    if not experiments:
        raise ConfigError("mining.experiments is empty")
    if exp_id is None:
        if len(experiments) != 1:
            raise ConfigError("several experiments configured; pick one with --experiment")
        return experiments[0]
    for e in experiments:
        if str(e.get("id")) == str(exp_id):
            return e
    raise ConfigError(f"no mining experiment with id {exp_id!r}")


def cmd_mine(args, cfg) -> int:
    out = _out_dir(args)
    exp = _experiment(cfg, args.experiment)
    table = _load_data(cfg, args.data, augmented=True)
    target = exp.get("target", table.target)
    if target != table.target:
        table = replace(table, target=target)
    if exp.get("target_binning"):
        table = tbl.bin_target(table, tbl.TargetBinning.from_bins(exp["target_binning"]))
    settings = rules.MiningSettings.from_config({**exp, "target": target})
    report = rules.mine_action_rules(table, settings, dominant=not args.no_dominant)
    body = report.to_dict()
    body["experiment"] = exp.get("id")
    rules_json, rules_txt = out / "rules.json", out / "rules.txt"
    _write_json(rules_json, body)
    rules_txt.write_text(rules.format_report(report), encoding="utf-8")
    write_manifest(out, "mine", cfg, {"data": args.data},
                   {"experiment": exp.get("id"), "dominant": not args.no_dominant},
                   [rules_json, rules_txt])
    print(rules.format_report(report), end="")
    return EXIT_OK


def _representation(kind, train, test, text_col):
    if kind == "llm":
        xtr, _ = evaluation.llm_code_matrix(train)
        xte, _ = evaluation.llm_code_matrix(test)
        if xtr.shape[1] == 0:
            raise SchemaError("table has no categorical LLM features")
        return xtr, xte
    if not text_col:
        raise ConfigError(f"representation {kind!r} needs dataset.text_column")
    texts_tr = [t or "" for t in train.column(text_col).values]
    texts_te = [t or "" for t in test.column(text_col).values]
    model = evaluation.fit_tfidf(texts_tr)
    xtr, xte = evaluation.transform(model, texts_tr), evaluation.transform(model, texts_te)
    if kind == "tfidf":
        return xtr, xte
    if kind == "fused":
        ftr, _ = evaluation.fuse_features(train, xtr, train.row_ids)
        fte, _ = evaluation.fuse_features(test, xte, test.row_ids)
        return ftr, fte
    raise ConfigError(f"unknown representation {kind!r}")


def cmd_evaluate(args, cfg) -> int:
    out = _out_dir(args)
    esec = _section(cfg, "evaluation")
    ssec = _section(cfg, "split")
    ds = _section(cfg, "dataset")
    table = _load_data(cfg, args.data, augmented=True)
    target_col = table.column(table.target)
    ordinal = bool(esec.get("ordinal", False))
    if ordinal and target_col.kind != "ordinal":
        raise SchemaError(f"ordinal metrics requested but target {table.target!r} is {target_col.kind}")
    order = target_col.categories if ordinal else None
    seed = args.seed if args.seed is not None else int(esec.get("seed", 0))
    inputs = {"data": args.data}
    settings = {"representation": args.representation, "classifier": args.classifier, "seed": seed}

    if args.classifier.startswith("external:"):
        pred_path = Path(args.classifier.split(":", 1)[1])
        if not pred_path.exists():
            pred_path = _path(cfg, pred_path)
        preds = evaluation.join_predictions(evaluation.read_predictions(pred_path), table)
        inputs["predictions"] = pred_path
        settings["classifier"] = "external"
    else:
        spec = tbl.SplitSpec(float(ssec.get("train_fraction", 0.8)), int(ssec.get("seed", 42)))
        settings["split"] = {"train_fraction": spec.train_fraction, "seed": spec.seed}
        # rows without a target cannot be scored or learned from
        keep = [i for i, v in enumerate(target_col.values) if v is not None]
        train, test = tbl.split(table.take(keep), spec)
        ytr = list(train.column(train.target).values)
        yte = list(test.column(test.target).values)
        if args.classifier in ("naive-mf", "naive-uniform"):
            mode = "most_frequent" if args.classifier == "naive-mf" else "uniform"
            labels = evaluation.naive_classifier(ytr, mode, seed).predict(len(yte))
        elif args.classifier == "nb":
            xtr, xte = _representation(args.representation, train, test, ds.get("text_column"))
            labels = evaluation.naive_bayes_fit(xtr, ytr).predict(xte)
        else:
            raise ConfigError(f"unknown classifier {args.classifier!r}")
        preds = [evaluation.Prediction(r, p, t) for r, p, t in zip(test.row_ids, labels, yte)]
    report = evaluation.evaluate(preds, ordinal=ordinal, order=order)
    metrics = out / "metrics.json"
    metrics.write_text(evaluation.metrics_json(report, {"settings": settings}), encoding="utf-8")
    files = [metrics]
    if not args.classifier.startswith("external:"):
        evaluation.write_predictions(preds, out / "predictions.csv")
        files.append(out / "predictions.csv")
    write_manifest(out, "evaluate", cfg, inputs, settings, files)
    print(report.to_text(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="llmfeat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_help):
        sp.add_argument("--config", required=True, help="YAML pipeline config")
        sp.add_argument("--data", required=True, help=data_help)
        sp.add_argument("--out-dir", default=".", help="output folder (default: current)")

    d = sub.add_parser("discover", help="propose features from dataset metadata and examples")
    common(d, "raw data CSV")
    d.add_argument("--sample-size", type=int)
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_discover)

    g = sub.add_parser("generate", help="extract feature values per row")
    common(g, "raw data CSV")
    g.add_argument("--features", required=True, help="features.json")
    g.add_argument("--workflow", choices=("user", "auto"))
    g.add_argument("--mode", choices=("live", "mock", "batch-emit", "batch-ingest"))
    g.add_argument("--policy", choices=("strict", "coerce"))
    g.add_argument("--results", nargs="*", help="batch result JSONL files (batch-ingest)")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="chi-squared, bootstrap and Cramer's V per feature")
    common(v, "augmented CSV")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("mine", help="mine action rules for one experiment")
    common(m, "augmented CSV")
    m.add_argument("--experiment")
    m.add_argument("--no-dominant", action="store_true", help="skip dominant-rule reduction")
    m.set_defaults(func=cmd_mine)

    e = sub.add_parser("evaluate", help="score a classifier on a feature representation")
    common(e, "augmented CSV")
    e.add_argument("--representation", choices=("llm", "tfidf", "fused"), default="llm")
    e.add_argument("--classifier", default="nb",
                   help="naive-mf, naive-uniform, nb or external:<predictions.csv>")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except Exception as exc:  # map to documented exit codes
        for types, code in _EXIT_FOR:
            if isinstance(exc, types):
                print(f"llmfeat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: ``synth``, ``pretrain``, ``select-arch``, ``fit``, ``suite``,
``evaluate``, ``timecourse``, ``export-words``. Every run validates its
inputs, writes outputs only under ``--out``, and drops a ``manifest.json``
(resolved config plus input hashes) next to them. Progress goes to standard
error; standard output stays clean.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 file format
violation, 1 anything else. Failures print one line:
``error: <ErrorClass>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, autoencoder, encoding, metrics, synth
from .checkpoint import file_digest
from .data import (FormatError, filter_artifacts, load_counts, load_embeddings,
                   load_erp, load_token_features)
from .features import FeatureSpec, assemble, build_sentence_tokens


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest(out_dir: Path, command: str, config: dict, inputs: dict[str, list]) -> None:
    hashed = {}
    for label, paths in inputs.items():
        hashed[label] = [
            {"path": str(p), "sha256": file_digest(p)} for p in paths
        ]
    _write_json(out_dir / "manifest.json", {
        "command": command,
        "config": config,
        "inputs": hashed,
        "version": __version__,
    })


def _erp_files(base) -> list[Path]:
    base = Path(base)
    return [base.parent / (base.name + s) for s in (".erp.json", ".erp.bin", ".meta.tsv")]


def _ckpt_files(base) -> list[Path]:
    base = Path(base)
    return [base.parent / (base.name + s) for s in (".ckpt.json", ".ckpt.bin")]


def _load_tables(args):
    """Optional feature tables shared by fit/suite/evaluate-style commands."""
    counts = load_counts(args.counts) if args.counts else None
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    token_features = load_token_features(args.features) if args.features else None
    return counts, embeddings, token_features


def _table_inputs(args) -> dict[str, list]:
    inputs = {}
    if args.counts:
        inputs["counts"] = [args.counts]
    if args.embeddings:
        inputs["embeddings"] = [args.embeddings]
    if args.features:
        inputs["token_features"] = [args.features]
    return inputs


def _add_table_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", help="token feature table (.feat.tsv)")
    p.add_argument("--counts", help="frequency counts TSV")
    p.add_argument("--embeddings", help="embedding text file")


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dev-fraction", type=float, default=None, dest="dev_fraction")


def _hyper(args, defaults: dict) -> dict:
    out = dict(defaults)
    for key, attr in (("epochs", "epochs"), ("batch_size", "batch"),
                      ("lr", "lr"), ("dev_fraction", "dev_fraction")):
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    config_dict = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        config_dict["seed"] = args.seed
    config = synth.SynthConfig.from_json_dict(config_dict)
    _progress(f"generating synthetic dataset ({config.n_trials} trials, seed {config.seed})")
    data = synth.generate(config)
    out = Path(args.out)
    synth.write_dataset_dir(data, out)
    _manifest(out, "synth", config.to_json_dict(), {"config": [args.config]})
    _progress(f"wrote dataset under {out}")
    return 0


def _cmd_pretrain(args) -> int:
    dataset, meta = load_erp(args.data)
    dataset, meta = filter_artifacts(dataset, meta, include_first_word=True)
    spec = autoencoder.AutoencoderSpec(
        args.arch, args.intercepts, dataset.n_channels, dataset.n_timepoints)
    hyper = _hyper(args, {"epochs": 200, "batch_size": 128, "lr": 0.001,
                          "dev_fraction": 0.1})
    _progress(f"pretraining {args.arch} autoencoder on {dataset.n_trials} trials")
    params, history = autoencoder.pretrain(spec, dataset, meta, seed=args.seed, **hyper)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    autoencoder.save_autoencoder(out / "autoencoder", params)
    _write_json(out / "history.json", history.to_json_dict())
    recon_mse = autoencoder.reconstruction_mse(params, dataset, meta)
    _write_json(out / "pretrain_report.json", {
        "architecture": args.arch,
        "intercepts": args.intercepts,
        "best_epoch": history.best_epoch,
        "best_dev_mse": min(history.dev_mse),
        "reconstruction_mse": recon_mse,
        "r2": 1.0 - recon_mse / float(dataset.data.var()),
    })
    _manifest(out, "pretrain",
              {"arch": args.arch, "intercepts": args.intercepts, "seed": args.seed, **hyper},
              {"data": _erp_files(args.data)})
    _progress(f"best dev MSE {min(history.dev_mse):.6g} at epoch {history.best_epoch}")
    return 0


def _cmd_select_arch(args) -> int:
    dataset, meta = load_erp(args.data)
    dataset, meta = filter_artifacts(dataset, meta, include_first_word=True)
    hyper = _hyper(args, {"epochs": 200, "batch_size": 128, "lr": 0.001,
                          "dev_fraction": 0.1})
    candidates = None
    if args.intercepts:
        # cross each architecture with and without subject/electrode intercepts
        candidates = [
            autoencoder.AutoencoderSpec(arch, icpt, dataset.n_channels,
                                        dataset.n_timepoints)
            for arch in autoencoder.ARCHITECTURES for icpt in (False, True)
        ]
    _progress(f"cross-validating architectures on {dataset.n_trials} trials")
    report = autoencoder.select_architecture(
        dataset, meta, candidates, k=args.folds, seed=args.seed, **hyper)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    for name, entry in report["candidates"].items():
        _progress(f"  {name}: mean MSE {entry['mean_mse']:.6g}, "
                  f"mean R2 {entry['mean_r2']:.4f}")
    _progress(f"winner: {report['winner']}")
    _manifest(out, "select-arch",
              {"folds": args.folds, "seed": args.seed,
               "intercepts": args.intercepts, **hyper},
              {"data": _erp_files(args.data)})
    return 0


def _parse_sources(text: str) -> tuple[str, ...]:
    sources = tuple(s.strip() for s in text.split(",") if s.strip())
    FeatureSpec(sources)  # validate early
    return sources


def _cmd_fit(args) -> int:
    decoder = autoencoder.load_autoencoder(args.decoder)
    dataset, meta = load_erp(args.data)
    sentence_tokens = build_sentence_tokens(meta)
    dataset, meta = filter_artifacts(dataset, meta, include_first_word=False)
    sources = _parse_sources(args.sources)
    counts, embeddings, token_features = _load_tables(args)
    fm = assemble(FeatureSpec(sources), meta, counts_table=counts,
                  token_features=token_features, embeddings=embeddings,
                  sentence_tokens=sentence_tokens)
    hyper = _hyper(args, {"epochs": 200, "batch_size": 128, "lr": 0.001,
                          "dev_fraction": 0.1})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    wd_table = None
    if args.wd_search:
        _progress("searching weight decay over the default grid")
        wd, wd_table = encoding.weight_decay_search(
            decoder, dataset, meta, fm, sources, k=args.folds, seed=args.seed, **hyper)
        _progress(f"chosen weight decay: {wd:g}")
    else:
        wd = args.wd if args.wd is not None else 0.0

    _progress(f"fitting encoding model ({'+'.join(sources)}) on {dataset.n_trials} trials")
    model, history = encoding.train(
        decoder, dataset, meta, fm, sources, weight_decay=wd, seed=args.seed, **hyper)
    encoding.save_encoding_model(out / "model", model)
    _write_json(out / "history.json", history.to_json_dict())
    report = {
        "sources": list(sources),
        "weight_decay": wd,
        "best_epoch": history.best_epoch,
        "best_dev_mse": min(history.dev_mse),
        "train_mse": encoding.model_mse(model, dataset, meta, fm),
    }
    if wd_table is not None:
        report["wd_table"] = wd_table
    _write_json(out / "fit_report.json", report)
    _manifest(out, "fit",
              {"sources": list(sources), "weight_decay": wd,
               "wd_search": bool(args.wd_search), "seed": args.seed,
               "folds": args.folds, **hyper},
              {"decoder": _ckpt_files(args.decoder), "data": _erp_files(args.data),
               **_table_inputs(args)})
    _progress(f"best dev MSE {min(history.dev_mse):.6g} at epoch {history.best_epoch}")
    return 0


def _cmd_suite(args) -> int:
    config = json.loads(Path(args.config).read_text())
    for key in ("data", "decoder"):
        if key not in config:
            raise FormatError(f"{args.config}: suite config missing {key!r}")
    decoder = autoencoder.load_autoencoder(config["decoder"])
    dataset, meta = load_erp(config["data"])
    sentence_tokens = build_sentence_tokens(meta)
    dataset, meta = filter_artifacts(dataset, meta, include_first_word=False)
    counts = load_counts(config["counts"]) if config.get("counts") else None
    embeddings = load_embeddings(config["embeddings"]) if config.get("embeddings") else None
    token_features = (load_token_features(config["token_features"])
                      if config.get("token_features") else None)
    roster = None
    if config.get("roster"):
        roster = [(e["name"], tuple(e["sources"])) for e in config["roster"]]
    hyper = _hyper(args, {"epochs": config.get("epochs", 200),
                          "batch_size": config.get("batch", 128),
                          "lr": config.get("lr", 0.001),
                          "dev_fraction": config.get("dev_fraction", 0.1)})
    k = args.folds if args.folds is not None else config.get("folds", 5)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    wd = args.wd if args.wd is not None else config.get("weight_decay")

    _progress(f"running model suite on {dataset.n_trials} trials, {k} folds")
    result = encoding.run_model_suite(
        decoder, dataset, meta, roster, counts_table=counts,
        token_features=token_features, embeddings=embeddings,
        sentence_tokens=sentence_tokens, k=k, seed=seed, weight_decay=wd,
        ceiling_mse=config.get("ceiling_mse"), **hyper)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = encoding.suite_summary_rows(result)
    lines = ["# model comparison suite: r2_mod x fold mean with bootstrap CI",
             f"# shared fold digest: {result['fold_digest']}",
             "\t".join(["model", "sources", "weight_decay", "r2_mod",
                        "ci_low", "ci_high", "mse_model"])]
    for row in rows:
        lines.append("\t".join([
            row["model"], row["sources"], repr(float(row["weight_decay"])),
            repr(row["r2_mod"]), repr(row["ci_low"]), repr(row["ci_high"]),
            repr(row["mse_model"])]))
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    for name, entry in result["entries"].items():
        safe = name.replace("+", "_")
        entry["report"].write(out / f"report_{safe}.json")
    _write_json(out / "suite.json", {
        "fold_digest": result["fold_digest"],
        "k": result["k"],
        "entries": {n: {"sources": e["sources"], "weight_decay": e["weight_decay"],
                        "r2_mod": e["report"].r2_mod}
                    for n, e in result["entries"].items()},
        "skipped": result["skipped"],
    })
    inputs = {"config": [args.config], "decoder": _ckpt_files(config["decoder"]),
              "data": _erp_files(config["data"])}
    for key in ("counts", "embeddings", "token_features"):
        if config.get(key):
            inputs[key] = [config[key]]
    _manifest(out, "suite", {"folds": k, "seed": seed, "weight_decay": wd, **hyper},
              inputs)
    for row in rows:
        _progress(f"  {row['model']}: r2_mod {row['r2_mod']:.4f} "
                  f"[{row['ci_low']:.4f}, {row['ci_high']:.4f}]")
    return 0


def _load_model_and_features(args, decoder):
    dataset, meta = load_erp(args.data)
    sentence_tokens = build_sentence_tokens(meta)
    dataset, meta = filter_artifacts(dataset, meta, include_first_word=False)
    model = encoding.load_encoding_model(args.model, decoder)
    counts, embeddings, token_features = _load_tables(args)
    fm = assemble(FeatureSpec(model.sources), meta, counts_table=counts,
                  token_features=token_features, embeddings=embeddings,
                  sentence_tokens=sentence_tokens)
    return dataset, meta, model, fm


def _cmd_evaluate(args) -> int:
    ae_params = autoencoder.load_autoencoder(args.autoencoder)
    dataset, meta, model, fm = _load_model_and_features(args, ae_params)
    intercept = encoding.load_encoding_model(args.intercept, ae_params)
    fm_intercept = assemble(FeatureSpec(intercept.sources), meta)
    mse_model = encoding.model_mse(model, dataset, meta, fm)
    mse_intercept = encoding.model_mse(intercept, dataset, meta, fm_intercept)
    mse_ae = autoencoder.reconstruction_mse(ae_params, dataset, meta)
    report = metrics.EvalReport(
        model_name="+".join(model.sources),
        mse_model=mse_model,
        mse_intercept=mse_intercept,
        mse_autoencoder=mse_ae,
        r2_mod=metrics.r2_mod(mse_model, mse_intercept, mse_ae),
        metadata={"n_trials": dataset.n_trials,
                  "pooling": "trials x channels jointly"},
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json")
    _manifest(out, "evaluate", {"seed": args.seed},
              {"autoencoder": _ckpt_files(args.autoencoder),
               "model": _ckpt_files(args.model),
               "intercept": _ckpt_files(args.intercept),
               "data": _erp_files(args.data), **_table_inputs(args)})
    _progress(f"r2_mod {report.r2_mod:.4f} "
              f"(model {mse_model:.6g}, intercept {mse_intercept:.6g}, "
              f"autoencoder {mse_ae:.6g})")
    return 0


def _cmd_timecourse(args) -> int:
    ae_params = autoencoder.load_autoencoder(args.autoencoder)
    dataset, meta, model, fm = _load_model_and_features(args, ae_params)
    intercept = encoding.load_encoding_model(args.intercept, ae_params)
    fm_intercept = assemble(FeatureSpec(intercept.sources), meta)
    subj = [m.subject_id for m in meta] if ae_params.spec.intercepts else None
    preds = encoding.predict_erp(model, fm, subj)
    preds_int = encoding.predict_erp(intercept, fm_intercept, subj)
    series = metrics.timepoint_correlation_increase(
        preds, preds_int, dataset.data, ms_axis=dataset.time_axis_ms())
    smoothed = metrics.moving_average_smooth(series, args.window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_timecourse_tsv(out / "timecourse.tsv", series, smoothed)
    _manifest(out, "timecourse", {"window": args.window, "seed": args.seed},
              {"autoencoder": _ckpt_files(args.autoencoder),
               "model": _ckpt_files(args.model),
               "intercept": _ckpt_files(args.intercept),
               "data": _erp_files(args.data), **_table_inputs(args)})
    _progress(f"peak increase {smoothed.values.max():.4f} at {smoothed.peak_ms():.0f} ms")
    return 0


def _cmd_export_words(args) -> int:
    ae_params = autoencoder.load_autoencoder(args.autoencoder)
    dataset, meta, model, fm = _load_model_and_features(args, ae_params)
    subj = [m.subject_id for m in meta] if ae_params.spec.intercepts else None
    preds = encoding.predict_erp(model, fm, subj)
    table = metrics.per_word_correlations(
        preds, dataset.data, meta, model_name="+".join(model.sources),
        sources=model.sources)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_tsv(out / "words.tsv")
    _write_json(out / "word_class_summary.json", metrics.content_function_summary(table))
    _manifest(out, "export-words", {"seed": args.seed},
              {"autoencoder": _ckpt_files(args.autoencoder),
               "model": _ckpt_files(args.model),
               "data": _erp_files(args.data), **_table_inputs(args)})
    summary = metrics.content_function_summary(table)
    _progress(f"mean r: content {summary['content']['mean_r']:.4f}, "
              f"function {summary['function']['mean_r']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erpcoder",
        description="Convolutional autoencoders and word-feature encoding models "
                    "for ERP epochs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain an autoencoder")
    p.add_argument("--data", required=True, help="ERP dataset base path")
    p.add_argument("--arch", choices=autoencoder.ARCHITECTURES, default="beta")
    p.add_argument("--intercepts", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("select-arch", help="cross-validate candidate architectures")
    p.add_argument("--data", required=True)
    p.add_argument("--intercepts", action="store_true",
                   help="also evaluate intercept variants of each architecture")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select_arch)

    p = sub.add_parser("fit", help="fit an encoding model against a frozen decoder")
    p.add_argument("--decoder", required=True, help="autoencoder checkpoint base path")
    p.add_argument("--data", required=True)
    p.add_argument("--sources", required=True,
                   help="comma-separated feature sources, e.g. frequency,surprisal")
    _add_table_flags(p)
    p.add_argument("--wd", type=float, default=None)
    p.add_argument("--wd-search", action="store_true", dest="wd_search")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("suite", help="run the model-comparison suite")
    p.add_argument("--config", required=True)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--wd", type=float, default=None)
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("evaluate", help="score a fitted model against its anchors")
    p.add_argument("--model", required=True)
    p.add_argument("--intercept", required=True, help="intercept model checkpoint")
    p.add_argument("--autoencoder", required=True)
    p.add_argument("--data", required=True)
    _add_table_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("timecourse", help="per-timepoint correlation increase")
    p.add_argument("--model", required=True)
    p.add_argument("--intercept", required=True)
    p.add_argument("--autoencoder", required=True)
    p.add_argument("--data", required=True)
    _add_table_flags(p)
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_timecourse)

    p = sub.add_parser("export-words", help="per-word correlation table")
    p.add_argument("--model", required=True)
    p.add_argument("--autoencoder", required=True)
    p.add_argument("--data", required=True)
    _add_table_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_words)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: MissingFile: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"error: FormatViolation: {e}", file=sys.stderr)
        return 4
    except (ValueError, KeyError) as e:
        print(f"error: InvalidInput: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"error: RunFailure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

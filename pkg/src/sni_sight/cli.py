"""Command-line entry point: extract, synth, train, eval, compare.

Every subcommand writes a run manifest with the fully resolved configuration
and the toolkit version, so any output can be reproduced bit for bit by
re-running with the recorded settings.  Exit codes: 0 success, 1 runtime
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, corpus, pipeline, synth, tls_sni

log = logging.getLogger("sni_sight")

DEFAULT_TRAIN_FRACTION = 0.85


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime errors are exit 1, with a clean message
        log.error("%s", exc)
        return 1


def _setup_logging() -> None:
    level = os.environ.get("SNI_SIGHT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sni-sight")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract chronological SNI traces from pcap files")
    p.add_argument("inputs", nargs="+", help="pcap files or directories (searched for *.pcap)")
    p.add_argument("--out", required=True, help="output directory for trace JSONL files")
    p.add_argument("--strict", action="store_true", help="abort the batch on the first bad file")
    p.add_argument("--dedup-window", type=float, default=tls_sni.DEFAULT_DEDUP_WINDOW,
                   help="seconds within which same-flow same-SNI retransmits collapse")
    p.add_argument("--tee-manifest")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--config", required=True, help="corpus config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--tee-manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier on a trace corpus")
    p.add_argument("--dataset", required=True, help="directory with traces.jsonl (+ manifest.json)")
    p.add_argument("--model", required=True, choices=["lstm", "fc"])
    p.add_argument("--out", required=True, help="output directory for the checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--universe", help="site list file when the dataset has no manifest")
    p.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=50, help="fc epochs")
    p.add_argument("--patience", type=int, default=5, help="lstm early-stopping patience")
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--max-steps", type=int, default=20000)
    p.add_argument("--hidden", type=int, default=256, help="lstm hidden size")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--step-limit", type=int, help="pause after this many total steps/epochs")
    p.add_argument("--tee-manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--scrub", action="store_true",
                   help="also evaluate with name-leaking events removed")
    p.add_argument("--threshold", type=float, help="override the stored decision threshold")
    p.add_argument("--tee-manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired t-test between two evaluation reports")
    p.add_argument("--report-a", required=True)
    p.add_argument("--report-b", required=True)
    p.add_argument("--out", required=True, help="output JSON file")
    p.add_argument("--tee-manifest")
    p.set_defaults(func=cmd_compare)
    return parser


def _write_manifest(out_dir: Path, command: str, resolved: dict, tee=None) -> None:
    manifest = {"command": command, "version": __version__, "config": resolved}
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out_dir / "run_manifest.json").write_text(text, encoding="utf-8")
    if tee:
        Path(tee).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    paths: list[Path] = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.rglob("*.pcap")))
        else:
            paths.append(p)
    if not paths:
        log.error("no pcap files found under %s", args.inputs)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in paths:
        try:
            events = tls_sni.extract_trace(path, dedup_window=args.dedup_window)
        except Exception as exc:
            failures.append((path, exc))
            log.error("%s: %s", path, exc)
            if args.strict:
                break
            continue
        trace = tls_sni.Trace(label=[], events=events, trace_id=path.stem)
        tls_sni.write_traces(out_dir / f"{path.stem}.jsonl", [trace])

    _write_manifest(out_dir, "extract", {
        "inputs": [str(p) for p in paths],
        "out": str(out_dir),
        "strict": args.strict,
        "dedup_window": args.dedup_window,
        "failures": [str(p) for p, _ in failures],
    }, args.tee_manifest)
    if failures:
        for path, exc in failures:
            print(f"FAILED {path}: {exc}", file=sys.stderr)
        return 1
    return 0


def _load_corpus_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_labels(cfg: dict, universe: corpus.WebsiteUniverse, seed: int):
    labels = cfg.get("labels", "pair-cover")
    if labels == "pair-cover":
        return corpus.pair_cover_triples(universe)
    if labels == "random":
        return corpus.random_triples(universe, int(cfg["random_count"]), seed)
    explicit = [tuple(lb) for lb in labels]
    if not explicit:
        raise ValueError("the label list is empty")
    return explicit


def _resolve_synth_config(cfg: dict, universe: corpus.WebsiteUniverse, seed: int) -> synth.SynthConfig:
    profile = cfg.get("profile", "default")
    options = dict(cfg.get("profile_options", {}))
    if profile == "default":
        config = synth.default_config(universe, seed, **options)
    elif profile == "separable":
        config = synth.separable_config(universe, seed, **options)
    elif profile == "order-signal":
        config = synth.order_signal_config(universe, seed, **options)
    elif profile == "custom":
        config = synth.SynthConfig.from_json(json.dumps(cfg["synth"]))
        config.seed = seed
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return config


def cmd_synth(args) -> int:
    cfg = _load_corpus_config(args.config)
    universe = corpus.WebsiteUniverse(cfg["universe"])
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    labels = _resolve_labels(cfg, universe, seed)
    config = _resolve_synth_config(cfg, universe, seed)
    traces_per_label = int(cfg.get("traces_per_label", 1))

    out_dir = Path(args.out)
    synth.write_corpus(out_dir, config, labels, traces_per_label)
    _write_manifest(out_dir, "synth", {
        "config_file": str(args.config),
        "resolved": cfg,
        "seed": seed,
        "label_count": len(labels),
        "traces_per_label": traces_per_label,
        "out": str(out_dir),
    }, args.tee_manifest)
    print(f"wrote {len(labels) * traces_per_label} traces to {out_dir}")
    return 0


def _load_dataset(dataset_dir, universe_file=None):
    dataset_dir = Path(dataset_dir)
    traces = tls_sni.read_traces(dataset_dir / "traces.jsonl")
    manifest_path = dataset_dir / "manifest.json"
    if manifest_path.exists():
        universe = corpus.WebsiteUniverse(json.loads(manifest_path.read_text())["universe"])
    elif universe_file:
        sites = [line.strip() for line in Path(universe_file).read_text().splitlines() if line.strip()]
        universe = corpus.WebsiteUniverse(sites)
    else:
        raise ValueError("dataset has no manifest.json; pass --universe")
    return traces, universe


def cmd_train(args) -> int:
    traces, universe = _load_dataset(args.dataset, args.universe)
    train_set, test_set = corpus.split(traces, args.train_fraction, args.seed)

    resume_meta = None
    if args.resume:
        state, resume_meta = pipeline.load_state(args.resume)
        vocab = corpus.Vocabulary.from_list(resume_meta["vocabulary"])
    else:
        state = None
        vocab = corpus.build_vocabulary(train_set)

    if args.model == "lstm":
        spec = pipeline.LstmModelSpec(hidden=args.hidden, window=args.window, lr=args.lr,
                                      patience=args.patience, eval_every=args.eval_every,
                                      threshold=args.threshold, max_steps=args.max_steps)
        state = pipeline.train_lstm(train_set, vocab, universe, spec, args.seed,
                                    state=state, step_limit=args.step_limit)
        spec_dict = spec.__dict__ | {"kind": "lstm"}
    else:
        spec = pipeline.FcModelSpec(epochs=args.epochs, lr=args.lr, threshold=args.threshold)
        state = pipeline.train_fc(train_set, vocab, universe, spec, args.seed,
                                  state=state, epoch_limit=args.step_limit)
        spec_dict = {k: list(v) if isinstance(v, tuple) else v for k, v in spec.__dict__.items()}
        spec_dict["kind"] = "fc"

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = resume_meta or {
        "model": args.model,
        "spec": spec_dict,
        "seed": args.seed,
        "window": args.window,
        "threshold": args.threshold,
        "universe": list(universe.sites),
        "vocabulary": vocab.to_list(),
        "vocab_hash": pipeline.vocab_fingerprint(vocab),
        "split": {"train": [t.trace_id for t in train_set],
                  "test": [t.trace_id for t in test_set]},
    }
    ckpt = out_dir / "checkpoint.snim"
    pipeline.save_state(ckpt, state, metadata)
    corpus.save_manifest(out_dir / "dataset.json", corpus.dataset_manifest(
        universe, args.seed, args.window, vocab, train_set, test_set,
        [str(Path(args.dataset) / "traces.jsonl")]))
    _write_manifest(out_dir, "train", {
        "dataset": str(args.dataset), "model": args.model, "seed": args.seed,
        "train_fraction": args.train_fraction, "spec": spec_dict,
        "resume": args.resume, "step_limit": args.step_limit, "out": str(out_dir),
    }, args.tee_manifest)
    status = "finished" if state.finished else f"paused at step {state.step}"
    print(f"{args.model} training {status}; checkpoint at {ckpt}")
    return 0


def _model_from_checkpoint(checkpoint_path, threshold_override=None):
    state, meta = pipeline.load_state(checkpoint_path)
    vocab = corpus.Vocabulary.from_list(meta["vocabulary"])
    universe = corpus.WebsiteUniverse(meta["universe"])
    threshold = threshold_override if threshold_override is not None else meta["threshold"]
    model = state.model(universe.n, meta["window"], threshold, meta["vocab_hash"])
    return model, vocab, universe, meta


def cmd_eval(args) -> int:
    model, vocab, universe, meta = _model_from_checkpoint(args.checkpoint, args.threshold)
    traces, _ = _load_dataset(args.dataset)
    if args.split != "all":
        wanted = set(meta["split"][args.split])
        traces = [t for t in traces if t.trace_id in wanted]
    if not traces:
        raise pipeline.EmptySet(f"no traces in the {args.split!r} split")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = pipeline.evaluate(model, traces, vocab, universe,
                               dump_path=out_dir / "predictions.jsonl")
    report.save_json(out_dir / "report.json")
    report.save_csv(out_dir / "report.csv")

    scrub_summary = None
    if args.scrub:
        ablation = pipeline.ablate_scrub(model, traces, vocab, universe,
                                         dump_path=out_dir / "predictions_scrubbed.jsonl")
        ablation["scrubbed"].save_json(out_dir / "report_scrubbed.json")
        ablation["scrubbed"].save_csv(out_dir / "report_scrubbed.csv")
        scrub_summary = {
            "delta_accuracy": ablation["delta_accuracy"],
            "traces_emptied_by_scrub": ablation["traces_emptied_by_scrub"],
            "scrubbed_accuracy": ablation["scrubbed"].accuracy,
        }
        (out_dir / "scrub_delta.json").write_text(
            json.dumps(scrub_summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    _write_manifest(out_dir, "eval", {
        "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "split": args.split, "scrub": args.scrub,
        "threshold": model.threshold, "out": str(out_dir),
    }, args.tee_manifest)
    print(f"accuracy {report.accuracy:.4f} over {report.sample_count} samples "
          f"({report.trace_count} traces)")
    if scrub_summary:
        print(f"scrubbed accuracy {scrub_summary['scrubbed_accuracy']:.4f}")
    return 0


def cmd_compare(args) -> int:
    with open(args.report_a, encoding="utf-8") as fh:
        report_a = pipeline.EvalReport.from_dict(json.load(fh))
    with open(args.report_b, encoding="utf-8") as fh:
        report_b = pipeline.EvalReport.from_dict(json.load(fh))
    result = pipeline.compare_reports(report_a, report_b)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if out.parent.is_dir():
        _write_manifest(out.parent, "compare", {
            "report_a": str(args.report_a), "report_b": str(args.report_b), "out": str(out),
        }, args.tee_manifest)
    print(f"t={result['t']:.4f} p={result['p']:.6g} df={result['df']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

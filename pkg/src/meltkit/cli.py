"""Command-line entry point orchestrating every pipeline stage.

Each subcommand reads and writes only its declared artifacts and exits 0
on success; runtime failures print one machine-readable JSON object to
stderr and exit 1. Argument errors keep argparse's usual exit code 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import acoustics, analytics, annotator, corpus, gateway, mos
from .labels import LABELS

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def cmd_ingest(args: argparse.Namespace) -> int:
    merged = corpus.Corpus(())
    for split, manifest in (("train", args.train), ("test", args.test)):
        if manifest is None:
            continue
        merged = merged.merge(corpus.ingest(manifest, split, audio_root=args.audio_root))
    if not len(merged) and not merged.rejects:
        raise corpus.CorpusError("no manifests given; pass --train and/or --test")
    out_dir = Path(args.out_dir)
    corpus.save_corpus(merged, out_dir / "corpus.jsonl")
    corpus.save_rejects(merged, out_dir / "rejects.jsonl")
    summary = {
        split: {
            "n_utterances": s.n_utterances,
            "n_speakers": s.n_speakers,
            "avg_duration_s": s.avg_duration_s,
        }
        for split, s in corpus.summarize(merged).items()
    }
    payload = {"summary": summary, "n_rejects": len(merged.rejects)}
    _write_json(out_dir / "ingest_summary.json", payload)
    print(json.dumps(payload))
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    loaded = corpus.load_corpus(args.corpus)
    roster = corpus.load_roster(args.roster)
    filtered = corpus.filter_speakers(
        corpus.filter_short(loaded, min_duration_s=args.min_duration), roster
    )
    out_dir = Path(args.out_dir)
    corpus.save_corpus(filtered, out_dir / "corpus.jsonl")
    summary = {
        split: {
            "n_utterances": s.n_utterances,
            "n_speakers": s.n_speakers,
            "avg_duration_s": s.avg_duration_s,
        }
        for split, s in corpus.summarize(filtered).items()
    }
    payload = {"summary": summary, "n_before": len(loaded), "n_after": len(filtered)}
    _write_json(out_dir / "filter_summary.json", payload)
    print(json.dumps(payload))
    return 0


def _build_gateway(args: argparse.Namespace) -> gateway.Gateway:
    config = gateway.ModelConfig(
        model_id=args.model if not args.mock else "mock",
        temperature=args.temperature,
        requests_per_minute=args.requests_per_minute,
    )
    if args.mock:
        return gateway.MockGateway(seed=args.seed, config=config)
    cache_dir = Path(args.cache_dir) if args.cache_dir else None
    return gateway.LiveGateway(config=config, cache_dir=cache_dir)


def cmd_annotate(args: argparse.Namespace) -> int:
    loaded = corpus.load_corpus(args.corpus)
    if args.dry_run:
        from .prompt import build_prompt

        tokens = sum(gateway.estimate_tokens(build_prompt(u).body) for u in loaded)
        payload = {
            "requests": len(loaded),
            "estimated_prompt_tokens": tokens,
            "estimated_cost_usd": gateway.estimate_cost_usd(len(loaded), tokens),
        }
        print(json.dumps(payload))
        return 0

    gw = _build_gateway(args)
    policy = annotator.RetryPolicy(max=args.retry_max)
    records, failures, report = annotator.annotate_corpus(
        loaded, gw, policy=policy, concurrency=args.concurrency
    )
    out_dir = Path(args.out_dir)
    annotator.save_records(records, out_dir / "records.jsonl")
    annotator.save_failures(failures, out_dir / "failures.jsonl")
    _write_json(out_dir / "run_report.json", report.to_record())
    print(json.dumps(report.to_record()))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    loaded = corpus.load_corpus(args.corpus)
    records = annotator.load_records(args.annotations)
    new_labels = annotator.records_label_map(records)
    out_dir = Path(args.out_dir)
    report: dict = {"splits": {}}
    lines = []
    for split in loaded.splits():
        old = {u.key: u.source_label for u in loaded.split(split)}
        new = {k: v for k, v in new_labels.items() if k[0] == split}
        old_dist = analytics.distribution(old, split)
        new_dist = analytics.distribution(new, split)
        change = analytics.change_rate(old, new, split=split)
        matrix = analytics.transitions(old, new)
        (out_dir / "transitions").mkdir(parents=True, exist_ok=True)
        (out_dir / "transitions" / f"{split}_counts.csv").write_text(
            matrix.to_csv(), encoding="utf-8"
        )
        (out_dir / "transitions" / f"{split}_row_normalized.csv").write_text(
            matrix.to_csv(normalized=True), encoding="utf-8"
        )
        if args.heatmap:
            _plot_heatmap(matrix, out_dir / "transitions" / f"{split}_heatmap.png", split)
        report["splits"][split] = {
            "source_distribution": old_dist.to_record(),
            "annotation_distribution": new_dist.to_record(),
            "change_rate": change.to_record(),
            "transitions": matrix.to_record(),
        }
        lines.append(f"{split}: delta_pct={change.delta_pct:.2f} n={change.n_total}")

    dists = [report["splits"][s]["annotation_distribution"] for s in report["splits"]]
    if len(dists) == 2:
        train = next(s for s in report["splits"].values() if s["change_rate"]["split"] == "train")
        test = next(s for s in report["splits"].values() if s["change_rate"]["split"] == "test")
        report["balance_ratio"] = analytics.balance_ratio(
            _dist_from_record(train["annotation_distribution"]),
            _dist_from_record(test["annotation_distribution"]),
        )
    _write_json(out_dir / "stats.json", report)
    for line in lines:
        print(line)
    return 0


def _dist_from_record(record: dict) -> analytics.LabelDistribution:
    counts = {label: record["counts"][label.value] for label in LABELS}
    return analytics.LabelDistribution(
        split=record["split"], counts=counts, total=record["total"]
    )


def _plot_heatmap(matrix: analytics.TransitionMatrix, path: Path, split: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    counts = [list(row) for row in matrix.counts]
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(counts, cmap="viridis")
    names = [label.value for label in matrix.labels]
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("new label")
    ax.set_ylabel("old label")
    ax.set_title(f"label transitions ({split})")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_verify_acoustics(args: argparse.Namespace) -> int:
    loaded = corpus.load_corpus(args.corpus)
    records = annotator.load_records(args.annotations)
    by_key = loaded.by_key()

    values: dict[str, dict] = {"pitch": {}, "loudness": {}}
    if args.egemaps:
        table = acoustics.load_egemaps_csv(args.egemaps)
        for u in loaded:
            row = table.get(u.clip_name)
            if row is not None:
                values["pitch"][u.key] = row["pitch"]
                values["loudness"][u.key] = row["loudness"]
    else:
        audio_root = Path(args.audio_dir)
        for u in loaded:
            path = audio_root / u.split / u.clip_name
            if not path.exists():
                continue
            features = acoustics.extract_file(path)
            values["pitch"][u.key] = features.f0_mean_hz
            values["loudness"][u.key] = features.loudness_db

    report: dict = {"splits": {}}
    for split in loaded.splits():
        split_report: dict = {}
        for axis in acoustics.AXES:
            axis_values = {k: v for k, v in values[axis].items() if k[0] == split}
            if not axis_values:
                continue
            bins, undefined = acoustics.bin_values(axis_values)
            captions = {
                r.utterance_key: getattr(r.annotation, axis)
                for r in records
                if r.utterance_key[0] == split and r.utterance_key in by_key
            }
            mapped, unmappable = acoustics.map_captions(captions, axis)
            scored = acoustics.agreement(bins, mapped, average=args.f1_average)
            scored["n_undefined_measurement"] = len(undefined)
            scored["n_unmappable_captions"] = len(unmappable)
            split_report[axis] = scored
        if split_report:
            report["splits"][split] = split_report

    out_path = Path(args.out) if args.out else None
    if out_path:
        _write_json(out_path, report)
    print(json.dumps(report))
    return 0


def cmd_build_study(args: argparse.Namespace) -> int:
    records = annotator.load_records(args.melt)
    loaded = corpus.load_corpus(args.corpus)
    sampling = mos.StudySampling(seed=args.seed, limit=args.limit)
    items = mos.build_study(records, loaded, Path(args.clips), sampling=sampling)
    mos.save_study(items, sampling, Path(args.out))
    print(json.dumps({"n_items": len(items), "study": str(args.out)}))
    return 0


def cmd_serve_mos(args: argparse.Namespace) -> int:
    items, seed = mos.load_study(args.study)
    operator_key = args.operator_key or os.environ.get(mos.OPERATOR_KEY_ENV)
    service = mos.StudyService(
        items=items,
        store=mos.StudyStore(Path(args.store)),
        media_dir=Path(args.media),
        seed=seed,
        session_ttl_s=args.session_ttl,
        operator_key=operator_key,
    )
    app = mos.create_app(service)
    import uvicorn

    logger.info("serving study with %d items on %s:%d", len(items), args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    store = mos.StudyStore(Path(args.store))
    print(json.dumps(mos.aggregate(store.load_judgments(), axis=args.axis), indent=2))
    return 0


def _split_config(argv: Sequence[str]) -> tuple[Optional[Path], list[str]]:
    """Pull --config PATH (or --config=PATH) out of argv before parsing."""
    remaining: list[str] = []
    config: Optional[Path] = None
    i = 0
    while i < len(argv):
        token = argv[i]
        if token == "--config":
            if i + 1 >= len(argv):
                raise ValueError("--config needs a file path")
            config = Path(argv[i + 1])
            i += 2
            continue
        if token.startswith("--config="):
            config = Path(token.split("=", 1)[1])
            i += 1
            continue
        remaining.append(token)
        i += 1
    return config, remaining


def _tokens_from_config(path: Path, command: str) -> list[str]:
    """Turn one command's config section into argv tokens.

    The tokens are inserted ahead of the user's own flags, so anything
    given explicitly on the command line wins.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {command!r} must be an object")
    tokens: list[str] = []
    for key, value in section.items():
        if value is None or value is False:
            continue
        flag = "--" + str(key).replace("_", "-")
        if value is True:
            tokens.append(flag)
        else:
            tokens.extend([flag, str(value)])
    return tokens


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meltkit",
        description="Emotion re-annotation pipeline: ingest, annotate, analyze, verify, study.",
    )
    parser.add_argument(
        "--config",
        type=Path,
        metavar="PATH",
        help="JSON file of per-command flag defaults ({command: {flag: value}}); "
        "explicit flags win",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read split manifests into a corpus snapshot")
    p.add_argument("--train", type=Path, help="train split manifest CSV")
    p.add_argument("--test", type=Path, help="test split manifest CSV")
    p.add_argument("--audio-root", type=Path, help="directory of {split}/dia*_utt*.wav clips")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("filter", help="apply duration and speaker filters")
    p.add_argument("--corpus", type=Path, required=True, help="corpus.jsonl from ingest")
    p.add_argument("--roster", type=Path, help="speaker roster JSON (default: bundled)")
    p.add_argument("--min-duration", type=float, default=1.0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("annotate", help="annotate a corpus through the model gateway")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--mock", action="store_true", help="use the deterministic offline provider")
    p.add_argument("--seed", type=int, default=0, help="mock provider seed")
    p.add_argument("--model", default="gpt-4o-2024-08-06")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--cache-dir", type=Path, help="completion cache directory (live mode)")
    p.add_argument("--concurrency", type=int, default=8)
    p.add_argument("--retry-max", type=int, default=2)
    p.add_argument("--requests-per-minute", type=int, default=60)
    p.add_argument("--dry-run", action="store_true", help="print request count and cost estimate")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("stats", help="distributions, change rate, transition matrices")
    p.add_argument("--corpus", type=Path, required=True, help="filtered corpus snapshot")
    p.add_argument("--annotations", type=Path, required=True, help="records.jsonl")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--heatmap", action="store_true", help="also render PNG heatmaps")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify-acoustics", help="pitch/loudness caption agreement")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--egemaps", type=Path, help="externally computed eGeMAPS CSV")
    source.add_argument("--audio-dir", type=Path, help="measure clips with the built-in estimator")
    p.add_argument("--f1-average", choices=("macro", "weighted"), default="macro")
    p.add_argument("--out", type=Path, help="write the JSON report here too")
    p.set_defaults(func=cmd_verify_acoustics)

    p = sub.add_parser("build-study", help="pair annotations into a blinded study file")
    p.add_argument("--melt", type=Path, required=True, help="re-annotation records.jsonl")
    p.add_argument("--corpus", type=Path, required=True, help="corpus snapshot with source labels")
    p.add_argument("--clips", type=Path, required=True, help="media directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_study)

    p = sub.add_parser("serve-mos", help="serve the blinded preference study")
    p.add_argument("--study", type=Path, required=True)
    p.add_argument("--media", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True, help="judgment log directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--operator-key", help=f"defaults to ${mos.OPERATOR_KEY_ENV}")
    p.add_argument("--session-ttl", type=float, default=mos.DEFAULT_SESSION_TTL_S)
    p.set_defaults(func=cmd_serve_mos)

    p = sub.add_parser("report", help="aggregate the judgment log offline")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--axis", choices=(mos.SOURCE_MELT, mos.SOURCE_MELD), default=mos.SOURCE_MELT)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("MELTKIT_LOG", "WARNING"))
    parser = build_parser()
    raw = list(sys.argv[1:] if argv is None else argv)
    try:
        config_path, remaining = _split_config(raw)
        if config_path is not None and remaining and not remaining[0].startswith("-"):
            injected = _tokens_from_config(config_path, remaining[0])
            remaining = [remaining[0], *injected, *remaining[1:]]
        args = parser.parse_args(remaining)
        return args.func(args)
    except Exception as exc:  # surfaced as machine-readable JSON
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: ``gen-data`` (synthetic corpus), ``train`` (detector or an
ablation variant), ``detect`` (audio to detection JSONL), ``eval``
(detections + alignments to a metrics report with figures), ``baseline``
(sliding-window classifier detections).

Every pipeline config key is exposed as a ``--<key> <value>`` flag.  Exit
codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import WindowPlanError, plan_windows, windows_to_detections
from .config import (
    ConfigError,
    PipelineConfig,
    apply_overrides,
    config_field_names,
    load_config,
    serialize_config,
)
from .dataset import DataError, KeywordSet, SynthSpec, generate_synthetic_corpus, load_corpus
from .decoder import detection_record, read_detections_jsonl, write_detections_jsonl
from .features import AudioError, read_wav, wav_duration_s
from .metrics import evaluate_detections, rtf as compute_rtf
from .model import ArchError, CheckpointError, ShapeError, load_checkpoint, save_checkpoint
from .pipeline import (
    detect_utterances,
    ground_truths_from_utterances,
    scored_detections_from_records,
)
from .report import write_report, write_training_curve
from .train import NumericFailure, train_detector, train_window_classifier


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with code 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for name in config_field_names():
        group.add_argument(f"--{name}", dest=f"cfg_{name}", metavar="V", default=None)


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for name in config_field_names():
        value = getattr(args, f"cfg_{name}", None)
        if value is not None:
            overrides[name] = value
    return apply_overrides(cfg, overrides) if overrides else cfg


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _corpus_input_hashes(corpus_dir: Path) -> dict[str, str]:
    hashes = {}
    for rel in ("alignments.tsv", "keywords.txt", "splits/train.txt", "splits/dev.txt", "splits/test.txt"):
        path = corpus_dir / rel
        if path.exists():
            hashes[rel] = _hash_file(path)
    return hashes


def _write_manifest(
    out_dir: Path,
    command: str,
    args,
    cfg: PipelineConfig | None,
    inputs: dict[str, str],
    outputs: list[str],
) -> None:
    manifest = {
        "tool": "wordspot",
        "version": __version__,
        "command": command,
        "argv": getattr(args, "_argv", sys.argv[1:]),
        "seed": getattr(args, "seed", None),
        "config": serialize_config(cfg) if cfg is not None else None,
        "input_hashes": inputs,
        "outputs": outputs,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    parser_error = args._parser.error
    if args.classes < 1:
        parser_error("--classes must be >= 1")
    if args.utterances < 1:
        parser_error("--utterances must be >= 1")
    try:
        fractions = tuple(float(f) for f in args.fractions.split(","))
    except ValueError:
        parser_error(f"--fractions must be comma-separated numbers, got {args.fractions!r}")
    spec = SynthSpec(
        num_keywords=args.classes,
        num_utterances=args.utterances,
        words_per_utterance=args.words_per_utterance,
        keyword_prob=args.keyword_prob,
        utterance_s=args.duration,
        snr_db=args.snr_db,
        split_fractions=fractions,
    )
    out_dir = Path(args.out)
    generate_synthetic_corpus(spec, args.seed, out_dir)
    _write_manifest(
        out_dir, "gen-data", args, None, _corpus_input_hashes(out_dir),
        ["audio/", "alignments.tsv", "keywords.txt", "splits/", "corpus.json"],
    )
    print(f"wrote corpus with {args.utterances} utterances to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _dump_targets(utt, cfg, out_dir: Path) -> None:
    """Debug aid: encode one utterance and write its target tensors as CSV."""
    from .encoder import encode_targets

    out_dir.mkdir(parents=True, exist_ok=True)
    tgt = encode_targets(utt.words, cfg)
    np.savetxt(out_dir / "heat.csv", tgt.heat, delimiter=",")
    np.savetxt(out_dir / "length.csv", tgt.length, delimiter=",")
    np.savetxt(out_dir / "offset.csv", tgt.offset, delimiter=",")
    np.savetxt(out_dir / "mask.csv", tgt.mask.astype(int), fmt="%d", delimiter=",")


def _split_or_die(splits: dict, name: str):
    utts = splits.get(name) or []
    if not utts:
        raise DataError(f"corpus split {name!r} is empty or missing")
    return utts


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    corpus_dir = Path(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.ablation == "no-unknown":
        updates = {"use_unknown_class": False}
        if getattr(args, "cfg_max_detections", None) is None:
            updates["max_detections"] = 3
        cfg = dataclasses.replace(cfg, **updates)
        cfg.validate()

    keywords, splits = load_corpus(corpus_dir, cfg)
    if keywords.num_keywords != cfg.num_keywords:
        cfg = dataclasses.replace(cfg, num_keywords=keywords.num_keywords)
        cfg.validate()
    train_utts = _split_or_die(splits, "train")

    if args.dump_targets:
        _dump_targets(train_utts[0], cfg, Path(args.dump_targets))

    if args.ablation == "cls-head":
        detector, accuracy = train_window_classifier(
            train_utts, cfg, args.seed, epochs=args.cls_epochs, quiet=args.quiet
        )
        ckpt = out_dir / "model.npz"
        save_checkpoint(
            ckpt, detector, cfg,
            extra={"ablation": "cls-head", "window_accuracy": accuracy},
        )
        if not args.quiet:
            print(f"window classifier held-out accuracy: {accuracy:.3f}")
        result_outputs = ["model.npz"]
    else:
        result = train_detector(
            train_utts, cfg, args.seed, out_dir,
            epochs=None, resume=args.resume, quiet=args.quiet,
        )
        write_training_curve(result.log_path, out_dir / "loss_curve.png")
        result_outputs = ["model.npz", "checkpoints/", "train_log.jsonl", "loss_curve.png"]

    inputs = _corpus_input_hashes(corpus_dir)
    if args.resume:
        inputs["resume_checkpoint"] = _hash_file(Path(args.resume))
    _write_manifest(out_dir, "train", args, cfg, inputs, result_outputs)
    return 0


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


def cmd_detect(args) -> int:
    detector, cfg, _, extra = load_checkpoint(args.checkpoint)
    if extra.get("ablation") == "cls-head":
        raise DataError(
            "this checkpoint holds a window classifier; use the 'baseline' command"
        )
    # Decode-time keys may be overridden on top of the checkpoint's config;
    # anything touching the model identity must match the checkpoint.
    overrides = {
        name: getattr(args, f"cfg_{name}")
        for name in config_field_names()
        if getattr(args, f"cfg_{name}", None) is not None
    }
    if args.config or overrides:
        base = load_config(args.config) if args.config else cfg
        cfg = apply_overrides(base, overrides)
        _ = load_checkpoint(args.checkpoint, expected_cfg=cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.audio:
        from .dataset import Utterance

        utts = []
        for wav in args.audio:
            wav = Path(wav)
            utts.append(Utterance(wav.stem, wav, wav_duration_s(wav), []))
        keywords = KeywordSet.from_file(Path(args.corpus) / "keywords.txt") if args.corpus else None
        if keywords is None:
            keywords = KeywordSet(tuple(f"kw{i}" for i in range(cfg.num_keywords)))
        input_hashes = {str(u.audio_path): _hash_file(u.audio_path) for u in utts}
    else:
        if not args.corpus:
            args._parser.error("detect needs --corpus (with --split) or explicit --audio files")
        keywords, splits = load_corpus(Path(args.corpus), cfg)
        utts = _split_or_die(splits, args.split)
        input_hashes = _corpus_input_hashes(Path(args.corpus))
    input_hashes["checkpoint"] = _hash_file(Path(args.checkpoint))

    min_score = args.min_score if args.min_score is not None else cfg.detect_min_score
    results, process_s, audio_s = detect_utterances(detector, utts, cfg, min_score)

    records = []
    for utt in utts:
        for det in results[utt.utt_id]:
            records.append(detection_record(utt.utt_id, det, keywords.name_of(det.cls)))
    det_path = out_dir / "detections.jsonl"
    write_detections_jsonl(det_path, records)
    (out_dir / "timing.json").write_text(
        json.dumps({"process_s": process_s, "audio_s": audio_s}, indent=2) + "\n",
        encoding="utf-8",
    )
    _write_manifest(out_dir, "detect", args, cfg, input_hashes, ["detections.jsonl", "timing.json"])
    print(f"wrote {len(records)} detections for {len(utts)} utterances to {det_path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    corpus_dir = Path(args.corpus)
    keywords, splits = load_corpus(corpus_dir, cfg)
    if keywords.num_keywords != cfg.num_keywords:
        cfg = dataclasses.replace(cfg, num_keywords=keywords.num_keywords)
        cfg.validate()
    utts = _split_or_die(splits, args.split)
    gts = ground_truths_from_utterances(utts, cfg)

    records = read_detections_jsonl(args.detections)
    known_ids = {u.utt_id for u in utts}
    unknown_ids = sorted({r["utterance_id"] for r in records} - known_ids)
    if unknown_ids:
        raise DataError(
            f"id mismatch: detections reference utterances outside split {args.split!r}: "
            f"{unknown_ids[:3]}"
        )
    dets = scored_detections_from_records(records, keywords)
    audio_hours = sum(u.duration_s for u in utts) / 3600.0

    rtf_value = None
    if args.timing:
        timing = json.loads(Path(args.timing).read_text(encoding="utf-8"))
        rtf_value = compute_rtf(timing["process_s"], timing["audio_s"])

    report = evaluate_detections(
        dets, gts, audio_hours, match_iou=cfg.frr_match_iou, rtf_value=rtf_value
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = write_report(
        report, out_dir, model_name=args.model_name, keywords=keywords,
        figures=not args.no_figures,
    )
    inputs = _corpus_input_hashes(corpus_dir)
    inputs["detections"] = _hash_file(Path(args.detections))
    _write_manifest(out_dir, "eval", args, cfg, inputs, [p.name for p in paths.values()])
    print((out_dir / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------


def _baseline_window_scores(detector, samples, plan, cfg):
    from .train import window_features

    w_samples = round(cfg.cls_window_s * cfg.sample_rate_hz)
    feats = []
    for start_s, _end_s in plan.windows:
        a = int(round(start_s * cfg.sample_rate_hz))
        a = max(0, min(a, max(0, len(samples) - w_samples)))
        window = samples[a : a + w_samples]
        if len(window) < w_samples:
            reps = -(-w_samples // max(1, len(window)))
            window = np.tile(window, reps)[:w_samples]
        feats.append(window_features(window, cfg))
    probs, _ = detector.classification_forward(np.stack(feats))
    return probs


def _baseline_detect_split(detector, utts, cfg, step_s, max_kw_s, theta):
    per_utt = {}
    audio_s = 0.0
    started = time.perf_counter()
    for utt in utts:
        clip = read_wav(utt.audio_path)
        audio_s += clip.duration_s
        plan = plan_windows(clip.duration_s, cfg.cls_window_s, step_s, max_kw_s)
        scores = _baseline_window_scores(detector, clip.samples, plan, cfg)
        per_utt[utt.utt_id] = windows_to_detections(
            scores, plan, theta, cfg.num_keywords, cfg.frames_per_second
        )
    return per_utt, time.perf_counter() - started, audio_s


def _max_keyword_seconds(utts, cfg) -> float:
    fps = cfg.frames_per_second
    longest = 0.0
    for utt in utts:
        for w in utt.words:
            if w.cls < cfg.num_keywords:
                longest = max(longest, w.length / fps)
    if longest <= 0:
        raise DataError("no keywords found in the corpus; cannot size baseline windows")
    return longest


def cmd_baseline(args) -> int:
    cfg = _resolve_config(args)
    corpus_dir = Path(args.corpus)
    keywords, splits = load_corpus(corpus_dir, cfg)
    if keywords.num_keywords != cfg.num_keywords:
        cfg = dataclasses.replace(cfg, num_keywords=keywords.num_keywords)
        cfg.validate()
    train_utts = _split_or_die(splits, "train")
    test_utts = _split_or_die(splits, args.split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.checkpoint:
        detector, ckpt_cfg, _, extra = load_checkpoint(args.checkpoint)
        if extra.get("ablation") != "cls-head":
            raise DataError("baseline needs a window-classifier checkpoint (train --ablation cls-head)")
        accuracy = extra.get("window_accuracy")
        cfg = ckpt_cfg
    else:
        detector, accuracy = train_window_classifier(
            train_utts, cfg, args.seed, epochs=args.cls_epochs, quiet=args.quiet
        )

    max_kw_s = _max_keyword_seconds(train_utts, cfg)

    chosen_step = args.step
    grid = {}
    if chosen_step is None:
        from .baseline import grid_search_step
        from .metrics import mean_ap

        dev_utts = splits.get("dev") or train_utts[: max(1, len(train_utts) // 5)]
        dev_gts = ground_truths_from_utterances(dev_utts, cfg)

        def evaluate_step(step_s: float) -> float:
            per_utt, _, _ = _baseline_detect_split(
                detector, dev_utts, cfg, step_s, max_kw_s, args.merge_threshold
            )
            from .metrics import ScoredDetection

            dets = []
            for utt_id, dlist in per_utt.items():
                for d in dlist:
                    lo, hi = d.interval_s()
                    dets.append(ScoredDetection(d.cls, d.score, lo, hi, group=utt_id))
            return mean_ap(dets, dev_gts)[0]

        chosen_step, grid = grid_search_step(
            evaluate_step, tuple(args.grid_steps), cfg.cls_window_s, max_kw_s
        )
        if not args.quiet:
            print(f"grid search chose step {chosen_step:g}s from {grid}")

    per_utt, process_s, audio_s = _baseline_detect_split(
        detector, test_utts, cfg, chosen_step, max_kw_s, args.merge_threshold
    )
    records = []
    for utt in test_utts:
        for det in per_utt[utt.utt_id]:
            records.append(detection_record(utt.utt_id, det, keywords.name_of(det.cls)))
    det_path = out_dir / "detections.jsonl"
    write_detections_jsonl(det_path, records)
    (out_dir / "timing.json").write_text(
        json.dumps({"process_s": process_s, "audio_s": audio_s}, indent=2) + "\n",
        encoding="utf-8",
    )
    meta = {
        "window_s": cfg.cls_window_s,
        "step_s": chosen_step,
        "max_keyword_s": max_kw_s,
        "merge_threshold": args.merge_threshold,
        "window_accuracy": accuracy,
        "grid_search": {f"{k:g}": v for k, v in grid.items()},
    }
    (out_dir / "baseline_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    ckpt_path = out_dir / "classifier.npz"
    save_checkpoint(ckpt_path, detector, cfg, extra={"ablation": "cls-head", "window_accuracy": accuracy})
    _write_manifest(
        out_dir, "baseline", args, cfg, _corpus_input_hashes(corpus_dir),
        ["detections.jsonl", "timing.json", "baseline_meta.json", "classifier.npz"],
    )
    print(f"wrote {len(records)} baseline detections to {det_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="wordspot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file (key = value lines)")
    common.add_argument("--seed", type=int, default=0)
    _add_config_flags(common)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--utterances", type=int, default=360)
    p.add_argument("--words-per-utterance", type=int, default=12)
    p.add_argument("--keyword-prob", type=float, default=0.25)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--duration", type=float, default=5.11)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the detector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=("none", "no-unknown", "cls-head"), default="none")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--cls-epochs", type=int, default=12, help="epochs for the cls-head ablation")
    p.add_argument("--dump-targets", default=None, metavar="DIR",
                   help="debug: write one utterance's encoded targets as CSV")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="run detection over audio")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--audio", nargs="*", default=None, help="explicit WAV files instead of a split")
    p.add_argument("--out", required=True)
    p.add_argument("--min-score", type=float, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="evaluate detections against alignments")
    p.add_argument("--detections", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--timing", default=None, help="timing.json from detect (enables RTF)")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--model-name", default="detector")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", parents=[common], help="sliding-window classification baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", default=None, help="existing cls-head checkpoint")
    p.add_argument("--step", type=float, default=None, help="fixed step size (skips grid search)")
    p.add_argument("--grid-steps", type=float, nargs="*", default=(0.1, 0.2, 0.3, 0.4))
    p.add_argument("--merge-threshold", type=float, default=0.5)
    p.add_argument("--cls-epochs", type=int, default=12)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._parser = parser
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except (ConfigError, DataError, AudioError, CheckpointError, ArchError, ShapeError,
            WindowPlanError, FileNotFoundError) as exc:
        print(f"wordspot: error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"wordspot: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())

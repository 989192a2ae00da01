"""``multivox`` command line.

Every relative path is resolved against ``--workdir``. Failures print one line,
``error: <Category>: <message>``, to stderr and exit 1; usage errors exit 2.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..audio import load_wav, save_wav
from ..augment import augment, format_record
from ..errors import EmptyTrials, MultivoxError
from ..evaluation import (
    DetectorReport,
    TrialScore,
    baseline_detector_score,
    baseline_detector_train,
    compute_dsr,
    compute_eer,
    compute_wdsr,
    format_eer_table,
    format_summary,
    read_scores,
    write_scores,
)
from ..speaker import load_speaker_encoder, train_speaker_encoder
from ..synthesizer import train_synthesizer
from ..vocoder import train_vocoder
from .config import RunConfig, load_config
from .manifest import by_speaker, load_row_audio, parse_manifest
from .synth import load_models, synthesize
from .toy import generate_toy_corpus

CHECKPOINTS = {"encoder": "encoder.ckpt", "synth": "synth.ckpt", "vocoder": "vocoder.ckpt"}


class Context:
    def __init__(self, args):
        self.workdir = Path(args.workdir)
        self.config = load_config(self.path(args.config)) if args.config else RunConfig()

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.workdir / p

    def checkpoint(self, name, override=None):
        if override:
            return self.path(override)
        return self.path(self.config.run.checkpoint_dir) / CHECKPOINTS[name]

    def prepare_checkpoint_dir(self, name):
        ckpt = self.checkpoint(name)
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        self.config.dump(ckpt.with_suffix(".config.txt"))
        return ckpt

    def manifest(self, path, limit=None):
        rows = parse_manifest(self.path(path))
        return rows[:limit] if limit else rows


def cmd_toy_data(ctx, args):
    rows = generate_toy_corpus(ctx.path(args.out), args.speakers, args.per_speaker, args.seed)
    print(f"wrote {len(rows)} utterances to {ctx.path(args.out) / 'manifest.tsv'}")


def cmd_train_encoder(ctx, args):
    cfg = ctx.config
    rows = ctx.manifest(args.manifest, args.limit)
    ckpt = ctx.prepare_checkpoint_dir("encoder")
    spec = None if args.no_augment else cfg.augment_spec(ctx.workdir)
    res = train_speaker_encoder(rows, cfg.encoder_config, cfg.train_encoder, cfg.mel, spec,
                                ckpt, ckpt.with_suffix(".log.tsv"), args.resume)
    print(f"encoder: {len(res.log.rows)} steps, train accuracy {res.train_accuracy:.4f}, checkpoint {ckpt}")


def cmd_train_synth(ctx, args):
    cfg = ctx.config
    rows = ctx.manifest(args.manifest, args.limit)
    spk_params, spk_config = load_speaker_encoder(ctx.checkpoint("encoder", args.encoder), cfg.encoder_config)
    ckpt = ctx.prepare_checkpoint_dir("synth")
    res = train_synthesizer(rows, spk_params, spk_config, cfg.synth_config, cfg.train_synth, cfg.mel,
                            ckpt, ckpt.with_suffix(".log.tsv"), args.resume)
    total = res.log.column("total")
    last = total[-10:].mean() if total.size else float("nan")
    print(f"synthesizer: {len(res.log.rows)} steps, recent total loss {last:.4f}, checkpoint {ckpt}")


def cmd_train_vocoder(ctx, args):
    cfg = ctx.config
    rows = ctx.manifest(args.manifest, args.limit)
    ckpt = ctx.prepare_checkpoint_dir("vocoder")
    res = train_vocoder(rows, cfg.vocoder_config, cfg.train_vocoder, cfg.mel,
                        ckpt, ckpt.with_suffix(".log.tsv"), args.resume)
    loss = res.log.column("loss")
    last = loss[-10:].mean() if loss.size else float("nan")
    print(f"vocoder: {len(res.log.rows)} steps, recent loss {last:.4f}, checkpoint {ckpt}")


def _references(ctx, args):
    if args.reference:
        return [load_wav(ctx.path(p)) for p in args.reference]
    if not (args.speaker and args.manifest):
        raise argparse.ArgumentTypeError("give --reference files or --speaker with --manifest")
    groups = by_speaker(ctx.manifest(args.manifest))
    if args.speaker not in groups:
        raise EmptyTrials(f"speaker {args.speaker!r} has no utterances in the manifest")
    rows = groups[args.speaker][: args.n_refs] if args.n_refs else groups[args.speaker]
    return [load_row_audio(r) for r in rows]


def cmd_synthesize(ctx, args):
    models = load_models(ctx.config, ctx.checkpoint("encoder"), ctx.checkpoint("synth"), ctx.checkpoint("vocoder"))
    wav, _, record = synthesize(args.text, _references(ctx, args), models, args.seed, args.mode, args.max_steps)
    out = ctx.path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_wav(wav, out)
    meta = json.dumps(record.as_dict(), sort_keys=True)
    Path(str(out) + ".json").write_text(meta + "\n", encoding="utf-8")
    print(meta)


def cmd_augment(ctx, args):
    spec = ctx.config.augment_spec(ctx.workdir)
    if spec is None:
        raise argparse.ArgumentTypeError("set augment.noise_list and/or augment.rir_list in the config")
    wav, record = augment(load_wav(ctx.path(args.input)), spec, np.random.default_rng(args.seed))
    save_wav(wav, ctx.path(args.out))
    print(format_record(record))


def _halves(items):
    if len(items) < 2:
        raise EmptyTrials(f"need at least 2 items per class for a train/test split, got {len(items)}")
    return items[0::2], items[1::2]


def cmd_evaluate(ctx, args):
    if args.scores:
        eer, threshold = compute_eer(read_scores(ctx.path(args.scores)))
        print(f"EER {eer:.4f}")
        print(f"threshold {threshold:.6g}")
        return
    if not (args.manifest and args.fake):
        raise argparse.ArgumentTypeError("give --scores, or --manifest with --fake files")
    mel = ctx.config.mel
    genuine = [(r.utt_id, load_row_audio(r)) for r in ctx.manifest(args.manifest)]
    fakes = [(Path(p).stem, load_wav(ctx.path(p))) for p in args.fake]
    g_train, g_test = _halves(genuine)
    f_train, f_test = _halves(fakes)
    examples = [(w, "genuine") for _, w in g_train] + [(w, "spoof") for _, w in f_train]
    ev = ctx.config.eval
    params = baseline_detector_train(examples, mel, ev.detector_steps, ev.detector_lr, ev.seed)
    trials = [TrialScore(u, "genuine", baseline_detector_score(w, params, mel)) for u, w in g_test]
    trials += [TrialScore(u, "spoof", baseline_detector_score(w, params, mel)) for u, w in f_test]
    if args.scores_out:
        write_scores(trials, ctx.path(args.scores_out))
    eer, threshold = compute_eer(trials)
    dsr = compute_dsr([t.score for t in trials if t.label == "spoof"], threshold)
    report = DetectorReport("baseline", eer, threshold, dsr)
    text = "\n".join([
        format_eer_table([("baseline", args.dataset, args.method, eer)]),
        "",
        format_summary([report], compute_wdsr({"baseline": dsr}, {"baseline": 1.0})),
    ])
    if args.report_out:
        ctx.path(args.report_out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _parse_row(text):
    parts = text.split(",", 3)
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"--row wants DETECTOR,DATASET,METHOD,SCORES, got {text!r}")
    return parts


def _parse_weight(text):
    name, sep, value = text.partition("=")
    try:
        if not sep:
            raise ValueError(text)
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--weight wants DETECTOR=NUMBER, got {text!r}") from None


def cmd_report(ctx, args):
    rows, reports = [], {}
    for detector, dataset, method, path in args.row:
        trials = read_scores(ctx.path(path))
        eer, threshold = compute_eer(trials)
        rows.append((detector, dataset, method, eer))
        fake = [t.score for t in trials if t.label == "spoof"]
        reports.setdefault(detector, []).append(DetectorReport(detector, eer, threshold, compute_dsr(fake, threshold)))
    merged = [DetectorReport(d, float(np.mean([r.eer for r in rs])), rs[0].eer_threshold,
                             float(np.mean([r.dsr for r in rs]))) for d, rs in reports.items()]
    weights = dict(args.weight) if args.weight else {d: 1.0 for d in reports}
    wdsr = compute_wdsr({r.detector: r.dsr for r in merged}, weights)
    print(format_eer_table(rows))
    print()
    print(format_summary(merged, wdsr))


def build_parser():
    parser = argparse.ArgumentParser(prog="multivox", description="Multi-speaker speech synthesis toolkit.")
    parser.add_argument("--config", help="run configuration file (section.key = value lines)")
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("toy-data", help="write the synthetic verification corpus")
    p.add_argument("--out", default="toy")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--per-speaker", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_toy_data)

    for name, func, extra in (
        ("train-encoder", cmd_train_encoder, "--no-augment"),
        ("train-synth", cmd_train_synth, "--encoder"),
        ("train-vocoder", cmd_train_vocoder, None),
    ):
        p = sub.add_parser(name, help=f"{name.split('-')[1]} training")
        p.add_argument("--manifest", required=True)
        p.add_argument("--limit", type=int, help="use only the first N manifest rows")
        p.add_argument("--resume", action="store_true")
        if extra == "--no-augment":
            p.add_argument("--no-augment", action="store_true")
        elif extra == "--encoder":
            p.add_argument("--encoder", help="speaker encoder checkpoint (default: checkpoint dir)")
        p.set_defaults(func=func)

    p = sub.add_parser("synthesize", help="text + reference audio -> waveform")
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", action="append", help="reference WAV (repeatable)")
    p.add_argument("--speaker", help="take references for this speaker from --manifest")
    p.add_argument("--manifest")
    p.add_argument("--n-refs", type=int)
    p.add_argument("--mode", choices=("argmax", "sample"), default="argmax")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("augment", help="corrupt one WAV with the configured recipe")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("evaluate", help="EER of a score file, or of the baseline detector")
    p.add_argument("--scores", help="score file: utt_id, genuine|spoof, score")
    p.add_argument("--manifest", help="genuine utterances")
    p.add_argument("--fake", nargs="+", help="generated WAVs")
    p.add_argument("--dataset", default="toy")
    p.add_argument("--method", default="multivox")
    p.add_argument("--scores-out")
    p.add_argument("--report-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="EER table and DSR/WDSR summary from score files")
    p.add_argument("--row", type=_parse_row, action="append", required=True,
                   help="DETECTOR,DATASET,METHOD,SCORES (repeatable)")
    p.add_argument("--weight", type=_parse_weight, action="append", help="DETECTOR=WEIGHT (repeatable)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(Context(args), args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except MultivoxError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

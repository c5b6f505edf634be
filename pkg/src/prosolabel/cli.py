"""Command-line surface: extract, synth, train, annotate, score, weights,
and the multi-combination grid.

Every command takes its settings from an optional JSON config file plus
flags (flags win), validates before any compute, and drops its artifacts
plus a ``run.json`` provenance record under ``--out``.  Exit codes:
0 success, 1 configuration error, 2 runtime failure.  A command that
dies mid-run leaves a ``FAILED`` marker file in its output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp, net, plots
from .corpus import DEFAULT_INVENTORY, TASKS, parse_manifest, write_manifest
from .errors import InvalidConfig, ProsolabelError
from .features import (
    StreamConfig,
    SynthPlan,
    synth_corpus,
    write_features,
)
from .metrics import report_layer_weights, score, write_layer_weights_csv

CONFIG_VERSION = 1

# Everything a run can configure, with the full-scale training defaults.
_DEFAULTS = {
    "train_manifest": None,
    "dev_manifest": None,
    "eval_manifest": None,
    "acoustic": "none",
    "linguistic": "none",
    "out": None,
    "seed": 0,
    "lr": 1e-5,
    "batch_size": 4,
    "max_steps": 100000,
    "eval_every": 500,
    "hidden": 256,
    "n_layers": 6,
    "kernel": 5,
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved settings for a training-family command."""

    train_manifest: "str | None"
    dev_manifest: "str | None"
    eval_manifest: "str | None"
    acoustic: str
    linguistic: str
    out: "str | None"
    seed: int
    lr: float
    batch_size: int
    max_steps: int
    eval_every: int
    hidden: int
    n_layers: int
    kernel: int

    def stream_config(self) -> StreamConfig:
        return StreamConfig(acoustic=self.acoustic, linguistic=self.linguistic)

    def train_config(self) -> net.TrainConfig:
        try:
            return net.TrainConfig(
                lr=self.lr,
                batch_size=self.batch_size,
                max_steps=self.max_steps,
                seed=self.seed,
                eval_every=self.eval_every,
            )
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: config must be a JSON object")
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise InvalidConfig(f"{path}: unsupported config version {version}")
    unknown = set(raw) - set(_DEFAULTS)
    if unknown:
        raise InvalidConfig(f"{path}: unknown config keys: {sorted(unknown)}")
    return raw


def resolve_run_config(args) -> RunConfig:
    """Defaults, then config file, then explicit flags."""
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def _require_file(path, what: str) -> Path:
    if path is None:
        raise InvalidConfig(f"{what} is required")
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"{what} not found: {path}")
    return path


def _require_out(value) -> Path:
    if value is None:
        raise InvalidConfig("--out is required")
    out = Path(value)
    out.mkdir(parents=True, exist_ok=True)
    # a rerun into a previously failed directory starts clean; the marker
    # only ever describes the most recent run
    marker = out / "FAILED"
    if marker.is_file():
        marker.unlink()
    return out


def _write_run_record(out_dir: Path, command: str, params: dict):
    record = {"tool": "prosolabel", "command": command, "version": CONFIG_VERSION,
              "params": params}
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_manifest_resolved(path: Path, inventory=DEFAULT_INVENTORY):
    """Parse a manifest and absolutize its feature refs against its own
    directory, so downstream code never needs a root argument."""
    utterances = parse_manifest(path, inventory)
    root = path.resolve().parent
    resolved = []
    for utt in utterances:
        features = {
            name: ref if Path(ref).is_absolute() else str(root / ref)
            for name, ref in utt.features.items()
        }
        resolved.append(dataclasses.replace(utt, features=features))
    return resolved


def read_wav(path) -> dsp.Waveform:
    """Load a WAV file as a mono [-1, 1] Waveform (channels averaged)."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    return dsp.Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate=int(rate))


def _loss_log_csv(rows, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,total,acc,hl,bi,pau\n")
        for step, total, acc, hl, bi, pau in rows:
            fh.write(f"{step},{total!r},{acc!r},{hl!r},{bi!r},{pau!r}\n")


def cmd_extract(args) -> int:
    manifest_path = _require_file(args.manifest, "--manifest")
    out_dir = _require_out(args.out)
    if args.stream not in ("melspec", "f0"):
        raise InvalidConfig(f"unknown extract stream {args.stream!r}")
    utterances = parse_manifest(manifest_path, DEFAULT_INVENTORY)
    src_root = manifest_path.resolve().parent

    grid_ms = (args.hop_ms, args.window_ms)
    failures = []
    updated = []
    for utt in utterances:
        try:
            if utt.audio is None:
                raise ProsolabelError(f"utterance {utt.id!r} has no audio path")
            audio_path = Path(utt.audio)
            if not audio_path.is_absolute():
                audio_path = src_root / audio_path
            wave = read_wav(audio_path)
            grid = dsp.FrameGrid.from_ms(wave.sample_rate, *grid_ms)
            if args.stream == "melspec":
                tensor = dsp.melspectrogram(
                    wave, grid, n_mels=args.n_mels, fmin=args.fmin, fmax=args.fmax
                )
            else:
                tensor = dsp.estimate_f0(
                    wave, grid, f0_floor=args.f0_floor, f0_ceil=args.f0_ceil
                )
            rel = f"features/{utt.id}.{args.stream}.pfe"
            write_features(tensor, out_dir / rel)
            features = dict(utt.features)
            features[args.stream] = rel
            audio_abs = str(audio_path.resolve())
            updated.append(dataclasses.replace(utt, features=features, audio=audio_abs))
        except (ProsolabelError, OSError, ValueError) as exc:
            failures.append((utt.id, str(exc)))
            updated.append(utt)
    write_manifest(updated, out_dir / manifest_path.name)
    _write_run_record(
        out_dir,
        "extract",
        {
            "manifest": str(manifest_path),
            "stream": args.stream,
            "hop_ms": args.hop_ms,
            "window_ms": args.window_ms,
            "n_mels": args.n_mels,
            "fmin": args.fmin,
            "fmax": args.fmax,
            "f0_floor": args.f0_floor,
            "f0_ceil": args.f0_ceil,
        },
    )
    if failures:
        for utt_id, message in failures:
            print(f"extract failed for {utt_id}: {message}", file=sys.stderr)
        print(f"{len(failures)}/{len(utterances)} utterances failed", file=sys.stderr)
        return 2
    print(f"extracted {args.stream} for {len(utterances)} utterances -> {out_dir}")
    return 0


def cmd_synth(args) -> int:
    out_dir = _require_out(args.out)
    try:
        plan = SynthPlan(
            layers=args.layers,
            dim=args.dim,
            signal_layer=args.signal_layer,
            amplitude=args.amplitude,
            noise=args.noise,
            stream=args.stream,
            min_moras=args.min_moras,
            max_moras=args.max_moras,
            min_duration=args.min_duration,
            max_duration=args.max_duration,
        )
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    splits = (("train", args.n_train), ("dev", args.n_dev), ("eval", args.n_eval))
    for offset, (name, count) in enumerate(splits):
        if count < 1:
            raise InvalidConfig(f"--n-{name} must be >= 1")
        synth_corpus(
            out_dir,
            args.seed + offset,
            count,
            plan,
            prefix=f"{name[:2]}",
            manifest_name=f"{name}.jsonl",
        )
    _write_run_record(
        out_dir,
        "synth",
        {"seed": args.seed, "plan": dataclasses.asdict(plan),
         "n_train": args.n_train, "n_dev": args.n_dev, "n_eval": args.n_eval},
    )
    print(f"synthetic corpus ({args.n_train}/{args.n_dev}/{args.n_eval}) -> {out_dir}")
    return 0


def _train_once(cfg: RunConfig, out_dir: Path):
    train_path = _require_file(cfg.train_manifest, "train manifest")
    train_utts = _load_manifest_resolved(train_path)
    dev_utts = []
    if cfg.dev_manifest is not None:
        dev_utts = _load_manifest_resolved(_require_file(cfg.dev_manifest, "dev manifest"))
    ckpt, rows = net.train(
        train_utts,
        cfg.stream_config(),
        cfg.train_config(),
        dev_utts=dev_utts,
        hidden=cfg.hidden,
        n_layers=cfg.n_layers,
        kernel=cfg.kernel,
    )
    ckpt.save(out_dir / "checkpoint.pck")
    _loss_log_csv(rows, out_dir / "loss_log.csv")
    plots.plot_loss_curve(rows, out_dir / "loss_curve.png")
    return ckpt, rows


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    cfg.stream_config()  # validate before any compute
    cfg.train_config()
    out_dir = _require_out(cfg.out)
    ckpt, rows = _train_once(cfg, out_dir)
    _write_run_record(out_dir, "train", dataclasses.asdict(cfg))
    final = rows[-1][1] if rows else float("nan")
    print(f"trained {ckpt.step} steps (final batch loss {final:.4f}) -> {out_dir}")
    return 0


def _annotate_manifest(ckpt: net.Checkpoint, manifest: Path, out_path: Path):
    utterances = _load_manifest_resolved(manifest)
    annotated = [
        dataclasses.replace(utt, labels=net.annotate(ckpt, utt), features={}, audio=None)
        for utt in utterances
    ]
    write_manifest(annotated, out_path)
    return annotated


def cmd_annotate(args) -> int:
    ckpt_path = _require_file(args.checkpoint, "--checkpoint")
    manifest = _require_file(args.manifest, "--manifest")
    out_dir = _require_out(args.out)
    ckpt = net.Checkpoint.load(ckpt_path)
    annotated = _annotate_manifest(ckpt, manifest, out_dir / "hypothesis.jsonl")
    _write_run_record(
        out_dir, "annotate", {"checkpoint": str(ckpt_path), "manifest": str(manifest)}
    )
    print(f"annotated {len(annotated)} utterances -> {out_dir / 'hypothesis.jsonl'}")
    return 0


def _score_manifests(ref_path: Path, hyp_path: Path, out_dir: Path):
    ref = parse_manifest(ref_path, DEFAULT_INVENTORY)
    hyp = parse_manifest(hyp_path, DEFAULT_INVENTORY)
    ref_ids = [u.id for u in ref]
    hyp_ids = [u.id for u in hyp]
    if ref_ids != hyp_ids:
        raise ProsolabelError("reference and hypothesis manifests list different utterances")
    for utt in hyp:
        if utt.labels is None:
            raise ProsolabelError(f"hypothesis utterance {utt.id!r} has no labels")
    report, confusions = score(ref, [u.labels for u in hyp])
    report.write_json(out_dir / "scores.json")
    for task, cm in confusions.items():
        cm.to_csv(out_dir / f"confusion_{task}.csv")
        plots.plot_confusion(cm, out_dir / f"confusion_{task}.png")
    return report


def cmd_score(args) -> int:
    ref_path = _require_file(args.ref, "--ref")
    hyp_path = _require_file(args.hyp, "--hyp")
    out_dir = _require_out(args.out)
    report = _score_manifests(ref_path, hyp_path, out_dir)
    _write_run_record(out_dir, "score", {"ref": str(ref_path), "hyp": str(hyp_path)})
    line = "  ".join(
        f"{task}={ts.accuracy:.3f}/{ts.macro_f1:.3f}" for task, ts in report.tasks.items()
    )
    print(f"accuracy/macro-F1: {line}")
    return 0


def cmd_weights(args) -> int:
    ckpt_path = _require_file(args.checkpoint, "--checkpoint")
    out_dir = _require_out(args.out)
    ckpt = net.Checkpoint.load(ckpt_path)
    weights = report_layer_weights(ckpt)
    write_layer_weights_csv(weights, out_dir)
    for role, vector in weights.items():
        plots.plot_layer_weights(role, vector, out_dir / f"layer_weights_{role}.png")
        peak = int(np.argmax(vector))
        print(f"{role}: argmax layer {peak} (weight {float(vector[peak]):.3f})")
    _write_run_record(out_dir, "weights", {"checkpoint": str(ckpt_path)})
    return 0


def cmd_grid(args) -> int:
    cfg = resolve_run_config(args)
    out_dir = _require_out(cfg.out)
    acoustics = [s.strip() for s in args.acoustics.split(",") if s.strip()]
    linguistics = [s.strip() for s in args.linguistics.split(",") if s.strip()]
    if not acoustics or not linguistics:
        raise InvalidConfig("--acoustics and --linguistics must each name at least one stream")
    eval_path = _require_file(cfg.eval_manifest, "eval manifest")
    _require_file(cfg.train_manifest, "train manifest")

    combos = [
        (aco, ling)
        for aco in acoustics
        for ling in linguistics
        if not (aco == "none" and ling == "none")
    ]
    if not combos:
        raise InvalidConfig("grid contains only the none/none combination")

    rows = []
    for aco, ling in combos:
        combo_cfg = dataclasses.replace(cfg, acoustic=aco, linguistic=ling)
        combo_dir = out_dir / f"{aco}__{ling}"
        combo_dir.mkdir(parents=True, exist_ok=True)
        ckpt, _ = _train_once(combo_cfg, combo_dir)
        _annotate_manifest(ckpt, eval_path, combo_dir / "hypothesis.jsonl")
        report = _score_manifests(eval_path, combo_dir / "hypothesis.jsonl", combo_dir)
        row = {"acoustic": aco, "linguistic": ling}
        for task, ts in report.tasks.items():
            row[f"{task}_accuracy"] = ts.accuracy
            row[f"{task}_macro_f1"] = ts.macro_f1
        rows.append(row)
        print(
            f"[{aco} + {ling}] "
            + "  ".join(f"{t}={report.tasks[t].accuracy:.3f}" for t in report.tasks)
        )

    header = ["acoustic", "linguistic"]
    for task in TASKS:
        header += [f"{task}_accuracy", f"{task}_macro_f1"]
    with open(out_dir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    str(row[h]) if isinstance(row[h], str) else repr(float(row[h]))
                    for h in header
                )
                + "\n"
            )
    plots.plot_grid_summary(rows, out_dir / "summary.png")
    _write_run_record(
        out_dir,
        "grid",
        {**dataclasses.asdict(cfg), "acoustics": acoustics, "linguistics": linguistics},
    )
    return 0


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through InvalidConfig
    # instead so all validation failures share exit code 1.
    def error(self, message):
        raise InvalidConfig(message)


def _add_run_flags(sub):
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--train-manifest", dest="train_manifest")
    sub.add_argument("--dev-manifest", dest="dev_manifest")
    sub.add_argument("--eval-manifest", dest="eval_manifest")
    sub.add_argument("--acoustic")
    sub.add_argument("--linguistic")
    sub.add_argument("--out")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--max-steps", dest="max_steps", type=int)
    sub.add_argument("--eval-every", dest="eval_every", type=int)
    sub.add_argument("--hidden", type=int)
    sub.add_argument("--n-layers", dest="n_layers", type=int)
    sub.add_argument("--kernel", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prosolabel", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("extract", parents=[], help="compute melspec/f0 features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stream", required=True, choices=("melspec", "f0"))
    p.add_argument("--out", required=True)
    p.add_argument("--hop-ms", dest="hop_ms", type=float, default=20.0)
    p.add_argument("--window-ms", dest="window_ms", type=float, default=40.0)
    p.add_argument("--n-mels", dest="n_mels", type=int, default=80)
    p.add_argument("--fmin", type=float, default=0.0)
    p.add_argument("--fmax", type=float, default=None)
    p.add_argument("--f0-floor", dest="f0_floor", type=float, default=70.0)
    p.add_argument("--f0-ceil", dest="f0_ceil", type=float, default=400.0)
    p.set_defaults(handler=cmd_extract)

    p = commands.add_parser("synth", help="generate a planted synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", dest="n_train", type=int, default=60)
    p.add_argument("--n-dev", dest="n_dev", type=int, default=10)
    p.add_argument("--n-eval", dest="n_eval", type=int, default=20)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--signal-layer", dest="signal_layer", type=int, default=2)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--stream", default="aco")
    p.add_argument("--min-moras", dest="min_moras", type=int, default=3)
    p.add_argument("--max-moras", dest="max_moras", type=int, default=6)
    p.add_argument("--min-duration", dest="min_duration", type=int, default=2)
    p.add_argument("--max-duration", dest="max_duration", type=int, default=6)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("train", help="train an annotator")
    _add_run_flags(p)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("annotate", help="predict labels for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_annotate)

    p = commands.add_parser("score", help="score a hypothesis manifest")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_score)

    p = commands.add_parser("weights", help="report trained layer weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_weights)

    p = commands.add_parser("grid", help="train/score every stream combination")
    _add_run_flags(p)
    p.add_argument("--acoustics", required=True, help="comma-separated acoustic streams")
    p.add_argument("--linguistics", required=True, help="comma-separated linguistic streams")
    p.set_defaults(handler=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = getattr(args, "out", None)
    try:
        return args.handler(args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProsolabelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out_dir is not None and Path(out_dir).is_dir():
            (Path(out_dir) / "FAILED").write_text(str(exc) + "\n", encoding="utf-8")
        return 2


if __name__ == "__main__":
    sys.exit(main())

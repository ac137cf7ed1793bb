"""``htdemucs`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import Config
from .errors import ConfigError, NumericError

log = logging.getLogger("htdemucs")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- helpers -------------------------------------------------------------------------

def _model_config(cfg: Config):
    from .sparse_attention import LshConfig
    from .transformer import TransformerConfig
    from .unet import ModelConfig

    m = cfg.sections["model"]
    sparse = LshConfig(rounds=m["lsh_rounds"], target_sparsity=m["target_sparsity"]) if m["sparse"] else None
    return ModelConfig(channels=m["channels"], sparse=sparse,
                       transformer=TransformerConfig(dim=m["dim"], heads=m["heads"], depth=m["depth"]))


def _load_songs(root, keywords=None):
    from .curation import load_song_dir

    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory not found: {root}")
    dirs = [os.path.join(root, d) for d in sorted(os.listdir(root)) if os.path.isdir(os.path.join(root, d))]
    if not dirs:
        raise FileNotFoundError(f"no song directories under {root}")
    return [load_song_dir(d, keywords) for d in dirs]


def _split(songs, fraction, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(songs))
    n_valid = int(round(len(songs) * fraction)) if len(songs) > 1 else 0
    valid = [songs[i] for i in sorted(order[:n_valid])]
    train = [songs[i] for i in sorted(order[n_valid:])]
    return train, valid


def _datasets(songs, sources, section, seed):
    from .trainer import StemDataset

    train_songs, valid_songs = _split(songs, section["valid_fraction"], seed)
    seg = int(round(section["segment_seconds"] * songs[0].sample_rate))
    train_set = StemDataset(train_songs, sources, seg)
    valid_set = StemDataset(valid_songs, sources, seg) if valid_songs else None
    return train_set, valid_set


def _write_result(model, result, out):
    from .trainer import save_adam_state
    from .weights import save_weights

    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    save_weights(model, out)
    save_adam_state(result.adam_state, out + ".adam.npz")
    log.info("wrote %s", out)


# --- subcommands -----------------------------------------------------------------------

def cmd_separate(args, cfg):
    from .separator import plan_chunks, separate
    from .wavio import load_audio, save_audio
    from .weights import load_weights

    model = load_weights(args.model)
    chunk = cfg.get("separate", "chunk_seconds", args.chunk_seconds)
    overlap = cfg.get("separate", "overlap", args.overlap)
    os.makedirs(args.out_dir, exist_ok=True)
    for path in args.inputs:
        clip = load_audio(path)
        plan = plan_chunks(clip.frames, int(round(chunk * clip.sample_rate)), overlap) if chunk else None
        outputs = separate(model, clip, plan)
        stem = os.path.splitext(os.path.basename(path))[0]
        for src, est in outputs.items():
            if not np.all(np.isfinite(est.samples)):
                raise NumericError(f"non-finite output for {src}")
            target = os.path.join(args.out_dir, f"{stem}.{src}.wav")
            save_audio(est, target)
            print(target)
    return EXIT_OK


def cmd_train(args, cfg):
    from .trainer import TrainConfig, train
    from .unet import build_model

    t = cfg.sections["train"]
    for key in ("lr", "batch_size", "epochs", "batches_per_epoch", "segment_seconds", "valid_every"):
        val = getattr(args, key, None)
        if val is not None:
            t[key] = val
    model = build_model(_model_config(cfg), seed=args.seed)
    songs = _load_songs(args.dataset)
    train_set, valid_set = _datasets(songs, model.sources, t, args.seed)
    tc = TrainConfig(lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"],
                     batches_per_epoch=t["batches_per_epoch"], segment_seconds=t["segment_seconds"],
                     weight_decay=t["weight_decay"], grad_clip_l2=t["grad_clip"],
                     valid_every=t["valid_every"], remix=t["remix"], rescale=t["rescale"], seed=args.seed)
    result = train(model, train_set, valid_set, tc, log_file=args.log, max_steps=args.steps)
    _write_result(model, result, args.out)
    return EXIT_OK


def cmd_finetune(args, cfg):
    from .trainer import FinetuneConfig, finetune
    from .weights import load_weights

    f = cfg.sections["finetune"]
    for key in ("source", "lr", "epochs", "batch_size", "batches_per_epoch", "segment_seconds", "valid_every"):
        val = getattr(args, key, None)
        if val is not None:
            f[key] = val
    model = load_weights(args.model)
    songs = _load_songs(args.dataset)
    train_set, valid_set = _datasets(songs, model.sources, f, args.seed)
    fc = FinetuneConfig(target_source=f["source"], lr=f["lr"], epochs=f["epochs"],
                        grad_clip_l2=f["grad_clip"], weight_decay=f["weight_decay"],
                        batch_size=f["batch_size"], batches_per_epoch=f["batches_per_epoch"],
                        segment_seconds=f["segment_seconds"], valid_every=f["valid_every"], seed=args.seed)
    result = finetune(model, train_set, valid_set, fc, log_file=args.log, max_steps=args.steps)
    _write_result(model, result, args.out)
    return EXIT_OK


def cmd_curate(args, cfg):
    from .curation import (curate_dir, ideal_separator, load_keywords, load_overrides,
                           model_separator, passthrough_separator)

    kind = cfg.get("curate", "separator", args.separator)
    chunk = cfg.get("curate", "chunk_seconds", args.chunk_seconds)
    kw_path = cfg.get("curate", "keywords", args.keywords)
    if kind == "model":
        if not args.model:
            raise UsageError("curate: --model is required with the model separator")
        from .weights import load_weights
        sep = model_separator(load_weights(args.model), chunk)
        factory = lambda song: sep  # noqa: E731
    elif kind == "ideal":
        factory = ideal_separator
    elif kind == "passthrough":
        factory = lambda song: passthrough_separator()  # noqa: E731
    else:
        raise UsageError(f"curate: unknown separator {kind!r}")
    keywords = load_keywords(kw_path) if kw_path else None
    overrides = load_overrides(args.overrides) if args.overrides else None
    if not os.path.isdir(args.dataset):
        raise FileNotFoundError(f"dataset directory not found: {args.dataset}")
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        reports = curate_dir(args.dataset, factory, out, keywords, overrides)
    finally:
        if args.out:
            out.close()
    log.info("%d/%d songs accepted", sum(r.accepted for r in reports), len(reports))
    return EXIT_OK


def _find_estimate(est_root, song, src):
    for cand in (os.path.join(est_root, song, f"{src}.wav"), os.path.join(est_root, f"{song}.{src}.wav")):
        if os.path.exists(cand):
            return cand
    raise FileNotFoundError(f"no estimate for {song}/{src} under {est_root}")


def cmd_evaluate(args, cfg):
    from .evaluation import evaluate_songs
    from .unet import SOURCES
    from .wavio import load_audio

    if not os.path.isdir(args.ref):
        raise FileNotFoundError(f"reference directory not found: {args.ref}")
    refs, ests = {}, {}
    for song in sorted(os.listdir(args.ref)):
        d = os.path.join(args.ref, song)
        if not os.path.isdir(d):
            continue
        refs[song], ests[song] = {}, {}
        for src in SOURCES:
            path = os.path.join(d, f"{src}.wav")
            if os.path.exists(path):
                refs[song][src] = load_audio(path)
                ests[song][src] = load_audio(_find_estimate(args.est, song, src))
    result = evaluate_songs(refs, ests, skip_silent=args.skip_silent)
    text = result.to_json() if args.json else result.to_text()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_bench_rtf(args, cfg):
    from .evaluation import rtf_bench
    from .separator import separate
    from .unet import build_model
    from .weights import load_weights

    model = load_weights(args.model) if args.model else build_model(_model_config(cfg), seed=args.seed)
    rtf = rtf_bench(lambda clip: separate(model, clip), input_seconds=args.seconds, runs=args.runs,
                    seed=args.seed, threads=1)
    print(json.dumps({"rtf": rtf, "input_seconds": args.seconds, "runs": args.runs}))
    return EXIT_OK


def cmd_synth(args, cfg):
    from .synthdata import generate_dataset, write_song

    for song in generate_dataset(args.songs, seed=args.seed, duration_s=args.duration):
        print(write_song(song, args.out_dir, write_mixture=args.mixture))
    return EXIT_OK


def cmd_inspect_weights(args, cfg):
    from .weights import decode

    with open(args.path, "rb") as f:
        manifest, state = decode(f.read())
    info = {
        "format_version": manifest["format_version"],
        "config": manifest["config"],
        "tensors": len(state),
        "parameters": int(sum(a.size for a in state.values())),
        "sha256": manifest["sha256"],
    }
    if args.list:
        info["params"] = [{"name": e["name"], "shape": e["shape"]} for e in manifest["params"]]
    print(json.dumps(info, indent=2))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="htdemucs", description="Hybrid Transformer Demucs source separation toolkit.")
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="cap internal parallelism (default: all cores)")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("separate", help="separate mixtures into stems")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--chunk-seconds", type=float)
    s.add_argument("--overlap", type=float)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_separate)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        s = sub.add_parser(name, help=f"{name} a model on a stem dataset")
        s.add_argument("--dataset", required=True, help="directory of song directories holding stems")
        s.add_argument("--out", required=True, help="output weight file")
        s.add_argument("--log", help="JSON-lines training log")
        s.add_argument("--steps", type=int, help="stop after this many steps")
        s.add_argument("--lr", type=float)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--batches-per-epoch", type=int)
        s.add_argument("--segment-seconds", type=float)
        s.add_argument("--valid-every", type=int)
        if name == "finetune":
            s.add_argument("--model", required=True, help="initial weights")
            s.add_argument("--source")
        s.set_defaults(func=func)

    s = sub.add_parser("curate", help="leakage-based dataset curation")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model")
    s.add_argument("--separator", choices=["model", "ideal", "passthrough"])
    s.add_argument("--chunk-seconds", type=float)
    s.add_argument("--keywords", help="keyword table file")
    s.add_argument("--overrides", help="manual accept/reject file")
    s.add_argument("--out", help="JSON-lines report (default stdout)")
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("evaluate", help="chunked SDR report")
    s.add_argument("--ref", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--json", action="store_true")
    s.add_argument("--skip-silent", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench-rtf", help="real-time factor on Gaussian noise")
    s.add_argument("--model")
    s.add_argument("--seconds", type=float, default=40.0)
    s.add_argument("--runs", type=int, default=3)
    s.set_defaults(func=cmd_bench_rtf)

    s = sub.add_parser("synth", help="write a synthetic stem dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--songs", type=int, default=8)
    s.add_argument("--duration", type=float, default=4.0)
    s.add_argument("--mixture", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect-weights", help="print a weight file's manifest summary")
    s.add_argument("path")
    s.add_argument("--list", action="store_true")
    s.set_defaults(func=cmd_inspect_weights)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.from_file(args.config) if args.config else Config()
        for assignment in args.set:
            cfg.set_override(assignment)
    except ConfigError as exc:
        print(f"htdemucs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"htdemucs: {exc}", file=sys.stderr)
        return EXIT_DATA

    limiter = None
    if args.threads:
        from ._kernels import set_num_threads
        limiter = set_num_threads(args.threads)
    try:
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"htdemucs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"htdemucs: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"htdemucs: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

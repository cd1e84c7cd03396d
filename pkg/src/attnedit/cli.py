"""Command-line front end: ``attnedit {invert,edit,eval,inspect}``.

Exit codes: 0 success, 2 validation error, 3 backend error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import backends
from .config import JobConfig, config_help, parse_edit_words
from .control import TAU, source_footprint, threshold_mask
from .core import (
    AttentionStore,
    BackendError,
    CROSS,
    EditSpec,
    AttnEditError,
    StoreError,
    ValidationError,
    WordTokenizer,
    align_edit_words,
    build_schedule,
)
from .frames import read_frames, write_frames, write_pgm
from .metrics import evaluate, format_report
from .pipeline import EditJob, edit_video, invert_window, window_bounds

log = logging.getLogger("attnedit")

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND, EXIT_IO = 0, 2, 3, 4


def _schedule(cfg: JobConfig):
    return build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.train_steps)


def _store_paths(store_dir: Path, start: int) -> tuple[Path, Path]:
    return store_dir / f"window_{start:05d}.atn", store_dir / f"window_{start:05d}_zT.npy"


def _prompts(cfg: JobConfig, tokenizer=None):
    tok = tokenizer or WordTokenizer()
    src = tok.encode(cfg.source_prompt)
    edit = tok.encode(cfg.edit_prompt or cfg.source_prompt)
    return tok, src, edit


def _load_frames(cfg: JobConfig) -> np.ndarray:
    if not cfg.input_dir:
        raise ValidationError("input_dir: must be set")
    frames = read_frames(cfg.input_dir)
    if len(frames) > cfg.max_frames:
        raise ValidationError(f"max_frames: {len(frames)} input frames exceed the limit of {cfg.max_frames}")
    return frames


def cmd_invert(cfg: JobConfig) -> list[Path]:
    """Invert every window with the source prompt and write zT + store files."""
    cfg.validate(need_edit=False)
    if not cfg.store_dir:
        raise ValidationError("store_dir: must be set")
    frames = _load_frames(cfg)
    _, src, _ = _prompts(cfg)
    sched = _schedule(cfg)
    denoiser, codec = backends.make_denoiser(cfg), backends.make_codec(cfg)
    spec = EditSpec((), len(src), len(src), False, False)
    out_dir = Path(cfg.store_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for s, e in window_bounds(len(frames), cfg.window_size):
        job = EditJob(frames[s:e], src, src, spec, sched, denoiser, codec, cfg.seed, cfg.probe_mode,
                      cfg.window_size, frame_offset=s)
        zT, store = invert_window(job)
        store_path, z_path = _store_paths(out_dir, s)
        store.save(store_path)
        np.save(z_path, zT.data)
        reread = AttentionStore.load(store_path)
        reread.check_complete(sched.num_steps, [l.layer_id for l in denoiser.layers], e - s)
        if reread != store:
            raise StoreError(f"{store_path} does not round-trip")
        log.info("window %d-%d: %d maps -> %s", s, e - 1, len(store), store_path)
        written += [store_path, z_path]
    return written


def _load_cache(cfg: JobConfig, n_frames: int) -> dict:
    from .core import LatentVideo

    cache = {}
    if not cfg.store_dir:
        return cache
    for s, _ in window_bounds(n_frames, cfg.window_size):
        store_path, z_path = _store_paths(Path(cfg.store_dir), s)
        if store_path.exists() and z_path.exists():
            cache[s] = (LatentVideo(np.load(z_path), s), AttentionStore.load(store_path))
    return cache


def cmd_edit(cfg: JobConfig) -> dict:
    """Edit all windows, write numbered frames and a diagnostics report."""
    cfg.validate()
    if not cfg.output_dir:
        raise ValidationError("output_dir: must be set")
    frames = _load_frames(cfg)
    _, src, edit = _prompts(cfg)
    spec = align_edit_words(src, edit, cfg.edit_words, cfg.enable_cross, cfg.enable_spatial)
    sched = _schedule(cfg)
    denoiser, codec = backends.make_denoiser(cfg), backends.make_codec(cfg)
    cache = _load_cache(cfg, len(frames))
    result = edit_video(frames, src, edit, spec, schedule=sched, denoiser=denoiser, codec=codec, seed=cfg.seed,
                        window_size=cfg.window_size, max_frames=cfg.max_frames, probe_mode=cfg.probe_mode,
                        jobs=cfg.jobs, cache=cache)
    out = Path(cfg.output_dir)
    write_frames(out, result.frames)
    if cfg.store_dir:
        store_dir = Path(cfg.store_dir)
        store_dir.mkdir(parents=True, exist_ok=True)
        for w in result.windows:
            s = w.diagnostics.frame_offset
            if s not in cache:
                store_path, z_path = _store_paths(store_dir, s)
                w.store.save(store_path)
                np.save(z_path, w.zT.data)
    report = {
        "source_prompt": cfg.source_prompt,
        "edit_prompt": cfg.edit_prompt,
        "edit_words": [list(p) for p in cfg.edit_words],
        "steps": cfg.steps,
        "tau": TAU,
        "enable_cross": cfg.enable_cross,
        "enable_spatial": cfg.enable_spatial,
        "seed": cfg.seed,
        "num_frames": int(len(result.frames)),
        "windows": [w.diagnostics.to_dict() for w in result.windows],
    }
    (out / "diagnostics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def cmd_eval(dirs, source_prompt: str, edit_prompt: str, embedder, out: Path | None = None) -> str:
    reports = []
    for d in dirs:
        frames = read_frames(d)
        rep = evaluate(Path(d).name, list(frames), source_prompt, edit_prompt, embedder)
        if rep.tem_con is None:
            print(f"error: {d}: temporal consistency needs at least 2 frames", file=sys.stderr)
        reports.append(rep)
    log.info("embedder backend: %s", getattr(embedder, "name", type(embedder).__name__))
    text = format_report(reports)
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
    return text


def cmd_inspect(store_file, prompt: str, word: str, taus, out_dir, steps=None) -> list[Path]:
    """Dump normalized footprints and thresholded masks for one source word."""
    store = AttentionStore.load(store_file)
    tok = WordTokenizer()
    p = tok.encode(prompt)
    if store.prompt_hash and p.fingerprint() != store.prompt_hash:
        raise ValidationError("prompt does not match the prompt the store was built with")
    span = p.find_word(word)
    spec = EditSpec((((span.start, span.stop), (span.start, span.stop)),), len(p), len(p), True, True)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = sorted(steps) if steps else store.steps()
    written = []
    for t in steps:
        C_src = {(k.layer, k.frame): m for k, m in store.items() if k.t == t and k.kind == CROSS}
        if not C_src:
            raise ValidationError(f"store has no maps at step {t}")
        fp = source_footprint(C_src, spec)
        for i, f in enumerate(sorted({f for _, f in C_src})):
            path = out_dir / f"heat_t{t}_f{f}.pgm"
            write_pgm(path, np.rint(fp.values[i] * 255))
            written.append(path)
        for tau in taus:
            tdir = out_dir / f"tau_{tau:.2f}"
            tdir.mkdir(exist_ok=True)
            for layer in sorted({l for l, _ in C_src}):
                q = next(m.shape[1] for (l, _), m in C_src.items() if l == layer)
                side = int(round(q ** 0.5))
                mask = threshold_mask(fp, (side, side), tau)
                for i, f in enumerate(sorted({f for _, f in C_src})):
                    path = tdir / f"mask_t{t}_l{layer}_f{f}.pgm"
                    write_pgm(path, mask[i] * 255)
                    written.append(path)
    return written


# -- argument parsing ------------------------------------------------------

_OVERRIDES = [
    ("--source-prompt", "source_prompt", str),
    ("--edit-prompt", "edit_prompt", str),
    ("--edit-words", "edit_words", parse_edit_words),
    ("--steps", "steps", int),
    ("--beta-start", "beta_start", float),
    ("--beta-end", "beta_end", float),
    ("--train-steps", "train_steps", int),
    ("--window-size", "window_size", int),
    ("--max-frames", "max_frames", int),
    ("--jobs", "jobs", int),
    ("--probe-mode", "probe_mode", str),
    ("--denoiser", "denoiser", str),
    ("--codec", "codec", str),
    ("--embedder", "embedder", str),
    ("--input", "input_dir", str),
    ("--output", "output_dir", str),
    ("--store-dir", "store_dir", str),
]


def _add_job_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="job config file (INI sections, see 'attnedit --help')")
    p.add_argument("--seed", type=int, help="seed for backend weights; same seed gives bit-identical output")
    for flag, dest, typ in _OVERRIDES:
        p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--no-cross", dest="enable_cross", action="store_false", default=None,
                   help="disable cross-attention swapping (also disables spatial blending)")
    p.add_argument("--no-spatial", dest="enable_spatial", action="store_false", default=None,
                   help="disable spatial-temporal relaxation")


def _job_config(args) -> JobConfig:
    cfg = JobConfig.from_file(args.config) if args.config else JobConfig()
    for _, dest, _ in _OVERRIDES + [(None, "seed", None), (None, "enable_cross", None), (None, "enable_spatial", None)]:
        v = getattr(args, dest, None)
        if v is not None:
            setattr(cfg, dest, v)
    if args.enable_cross is False and args.enable_spatial is None:
        cfg.enable_spatial = False
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnedit",
        description="Zero-shot attention-controlled video editing.",
        epilog="config keys (defaults: steps=30, window_size=8, mask threshold fixed at 0.5):\n" + config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invert", help="invert frames with the source prompt and cache zT + attention stores")
    _add_job_args(p)
    p = sub.add_parser("edit", help="edit frames window by window")
    _add_job_args(p)

    p = sub.add_parser("eval", help="temporal consistency and frame accuracy as TSV")
    p.add_argument("dirs", nargs="+", help="frame directories, one per video")
    p.add_argument("--source-prompt", required=True)
    p.add_argument("--edit-prompt", required=True)
    p.add_argument("--embedder", default="toy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="write the report here instead of stdout")

    p = sub.add_parser("inspect", help="dump blending masks for a threshold sweep")
    p.add_argument("store", help="attention store file")
    p.add_argument("--prompt", required=True, help="source prompt the store was built with")
    p.add_argument("--word", required=True)
    p.add_argument("--tau", type=float, action="append", help="threshold (repeatable; default 0.3 0.5 0.7)")
    p.add_argument("--step", type=int, action="append", help="only these steps (repeatable)")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; inspect is deterministic")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "invert":
            cmd_invert(_job_config(args))
        elif args.command == "edit":
            cmd_edit(_job_config(args))
        elif args.command == "eval":
            cfg = JobConfig(embedder=args.embedder, seed=args.seed)
            text = cmd_eval(args.dirs, args.source_prompt, args.edit_prompt, backends.make_embedder(cfg),
                            Path(args.output) if args.output else None)
            if not args.output:
                sys.stdout.write(text)
        elif args.command == "inspect":
            cmd_inspect(args.store, args.prompt, args.word, args.tau or [0.3, 0.5, 0.7], args.output, args.step)
    except (ValidationError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AttnEditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

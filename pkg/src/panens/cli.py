"""Command-line entry point: synth, track, ensemble, fuse, eval, render.

Every failure prints one line ``panens: error[<code>]: <message>`` to stderr
and exits non-zero: 2 for bad input (specs, configs, mismatched videos,
corrupt containers), 3 for I/O failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import container
from .ensemble import AugmentationSpec, EnsembleConfig, ensemble_pipeline
from .errors import PanensError
from .fusion import VIPSEG_CATEGORIES, FusionConfig, fuse, render_ppm
from .metrics import DEFAULT_WINDOWS, evaluate
from .synth import CorruptionSpec, SceneSpec, corrupt, generate
from .tracker import build_tracks, split_frames

log = logging.getLogger("panens")

EXIT_INPUT = 2
EXIT_IO = 3


class UsageError(PanensError):
    code = "usage"


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    # "first": the reference member defines the geometry every member is aligned to
    reference_dims: str = "first"

    def __post_init__(self):
        w = tuple(self.windows)
        if not w or any(k < 1 for k in w) or list(w) != sorted(w):
            raise UsageError(f"windows must be a non-empty sorted list of positive integers, got {list(w)}")
        object.__setattr__(self, "windows", w)
        if self.reference_dims != "first":
            raise UsageError(f"unsupported reference dims policy {self.reference_dims!r}")

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        try:
            return cls(
                EnsembleConfig(**data.get("ensemble", {})),
                FusionConfig(**data.get("fusion", {})),
                tuple(data.get("windows", DEFAULT_WINDOWS)),
                data.get("reference_dims", "first"),
            )
        except TypeError as exc:
            raise UsageError(f"bad run config: {exc}") from None

    def to_json(self) -> dict:
        d = asdict(self)
        d["windows"] = list(self.windows)
        return d


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: malformed JSON: {exc}") from None


def _run_config(args) -> RunConfig:
    base = RunConfig.from_json(_load_json(args.config)) if getattr(args, "config", None) else RunConfig()
    ens, fus, windows = base.ensemble, base.fusion, base.windows
    try:
        if getattr(args, "iou_threshold", None) is not None or getattr(args, "matching_level", None):
            ens = EnsembleConfig(
                args.iou_threshold if args.iou_threshold is not None else ens.iou_threshold,
                (args.matching_level or ens.matching_level).replace("-", "_"),
            )
        overrides = {
            k: getattr(args, k)
            for k in ("min_object_score", "min_pixel_score", "min_overlap_ratio")
            if getattr(args, k, None) is not None
        }
        if overrides:
            fus = FusionConfig(**{**asdict(fus), **overrides})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if getattr(args, "windows", None):
        try:
            windows = tuple(int(x) for x in args.windows.split(","))
        except ValueError:
            raise UsageError(f"--windows expects comma-separated integers, got {args.windows!r}") from None
    return RunConfig(ens, fus, windows, base.reference_dims)


def _outputs(inputs: Sequence[str], out: str, suffix: str) -> list[Path]:
    """One output path per input: ``out`` itself for a single input, else ``out/<stem><suffix>``."""
    if len(inputs) == 1 and not out.endswith(os.sep) and not Path(out).is_dir():
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        return [Path(out)]
    Path(out).mkdir(parents=True, exist_ok=True)
    return [Path(out) / (Path(p).name.split(".")[0] + suffix) for p in inputs]


def _fan_out(fn: Callable, jobs: int, items: list[tuple]) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *item) for item in items]
        return [f.result() for f in futures]


# -- stage workers (module level so they pickle for --jobs) ---------------------


def synth_one(spec_path: str, out_dir: str, corruption_path: str | None, seed: int) -> list[str]:
    spec = SceneSpec.load(spec_path)
    gt, tracks = generate(spec)
    if corruption_path:
        tracks = corrupt(tracks, CorruptionSpec.from_json(_load_json(corruption_path)), seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cats = spec.categories
    paths = [
        container.write(out / f"{spec.name}.gt.pnc", gt, categories=cats),
        container.write(out / f"{spec.name}.tracks.pnc", tracks, categories=cats),
        container.write(
            out / f"{spec.name}.frames.pnc",
            container.QueryVideo(tracks.video_id, tracks.num_categories, split_frames(tracks, order_seed=seed)),
            categories=cats,
        ),
    ]
    return [str(p) for p in paths]


def track_one(src: str, dst: str) -> str:
    c = container.read(src)
    if c.kind != "frames":
        raise UsageError(f"{src}: expected a frame-level container, got {c.kind!r}")
    video = c.payload
    tracks = build_tracks(video.frames, video_id=video.video_id)
    container.write(dst, tracks, categories=c.categories)
    return dst


def fuse_one(src: str, dst: str, fcfg: FusionConfig) -> str:
    c = container.read(src)
    if c.kind != "tracks":
        raise UsageError(f"{src}: expected a track container, got {c.kind!r}")
    cats = c.categories or VIPSEG_CATEGORIES
    container.write(dst, fuse(c.payload, cats, fcfg), categories=cats)
    return dst


def render_one(src: str, out_dir: str) -> list[str]:
    c = container.read(src)
    if c.kind != "panoptic":
        raise UsageError(f"{src}: expected a panoptic container, got {c.kind!r}")
    return [str(p) for p in render_ppm(c.payload, out_dir)]


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    items = [(p, args.out, args.corruption, args.seed) for p in args.specs]
    for paths in _fan_out(synth_one, args.jobs, items):
        for p in paths:
            print(p)
    return 0


def cmd_track(args) -> int:
    outs = _outputs(args.inputs, args.out, ".tracks.pnc")
    for p in _fan_out(track_one, args.jobs, [(s, str(d)) for s, d in zip(args.inputs, outs)]):
        print(p)
    return 0


def _parse_member(text: str) -> tuple[str, str | None]:
    path, _, kind = text.partition(":")
    return path, kind or None


def cmd_ensemble(args) -> int:
    cfg = _run_config(args)
    ref = container.read(args.reference)
    if ref.kind != "tracks":
        raise UsageError(f"{args.reference}: expected a track container, got {ref.kind!r}")
    members = []
    for text in args.member:
        path, kind = _parse_member(text)
        m = container.read(path)
        if m.kind != "tracks":
            raise UsageError(f"{path}: expected a track container, got {m.kind!r}")
        spec = AugmentationSpec.parse(kind, m.payload.dims) if kind else m.augmentation
        if spec is None:
            spec = AugmentationSpec("identity", m.payload.dims)
        members.append((m.payload, spec))
    merged, stats = ensemble_pipeline(ref.payload, members, cfg.ensemble, return_stats=True)
    for (text, (_, spec), st) in zip(args.member, members, stats):
        log.info("%s [%s]: %d merged, %d appended", text, spec.kind, st.merged, st.appended)
    container.write(
        args.out,
        merged,
        categories=ref.categories,
        members=[spec for _, spec in members],
        ensemble=asdict(cfg.ensemble),
    )
    print(args.out)
    return 0


def cmd_fuse(args) -> int:
    cfg = _run_config(args)
    outs = _outputs(args.inputs, args.out, ".panoptic.pnc")
    items = [(s, str(d), cfg.fusion) for s, d in zip(args.inputs, outs)]
    for p in _fan_out(fuse_one, args.jobs, items):
        print(p)
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    pred = container.read(args.prediction)
    gt = container.read(args.ground_truth)
    if pred.kind != "panoptic" or gt.kind != "ground_truth":
        raise UsageError("eval expects a panoptic container and a ground-truth container")
    report = evaluate(pred.payload, gt.payload, cfg.windows)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_render(args) -> int:
    items = [(s, args.out) for s in args.inputs]
    for paths in _fan_out(render_one, args.jobs, items):
        for p in paths:
            print(p)
    return 0


class _Parser(argparse.ArgumentParser):
    # keep usage errors on one parsable line like every other failure
    def error(self, message):
        self.exit(EXIT_INPUT, f"panens: error[usage]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def jobs(p):
        p.add_argument("--jobs", type=int, default=1, help="process this many videos in parallel")

    def ensemble_flags(p):
        p.add_argument("--iou-threshold", type=float, default=None)
        p.add_argument("--matching-level", choices=["tube", "per-frame"], default=None)

    def fusion_flags(p):
        p.add_argument("--min-object-score", type=float, default=None)
        p.add_argument("--min-pixel-score", type=float, default=None)
        p.add_argument("--min-overlap-ratio", type=float, default=None)

    p = sub.add_parser("synth", help="generate ground truth and prediction containers from scene specs")
    p.add_argument("specs", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--corruption", help="JSON corruption spec applied to the prediction")
    p.add_argument("--seed", type=int, default=0, help="seed for corruption and query order")
    jobs(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="associate frame-level queries into tracks")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    jobs(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("ensemble", help="query-wise ensemble of track containers")
    p.add_argument("reference")
    p.add_argument("--member", action="append", default=[], help="PATH[:KIND], KIND in identity|hflip|rescale|brightness|contrast")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="RunConfig JSON")
    ensemble_flags(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("fuse", help="decode tracks into a panoptic video")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="RunConfig JSON")
    fusion_flags(p)
    jobs(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="VPQ and STQ of a panoptic video against ground truth")
    p.add_argument("prediction")
    p.add_argument("ground_truth")
    p.add_argument("--windows", default=None, help="comma-separated window lengths (default 1,2,4,6)")
    p.add_argument("--config", help="RunConfig JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write one PPM image per frame")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    jobs(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("PANENS_LOG", "INFO").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "INFO",
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PanensError as exc:
        print(f"panens: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError, KeyError) as exc:
        print(f"panens: error[input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"panens: error[io]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Batch command line over KITTI-style directories.

Inputs follow the ``image_2/*.png``, ``label_2/*.txt``, ``calib/*.txt`` layout
keyed by a shared file stem. Directory commands write their products under
``--out`` together with a ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .camera import ImageShape
from .dataio import (
    SizeStats,
    format_label,
    parse_calib,
    parse_label_file,
    parse_label_line,
    rescale_calib_text,
    size_stats,
)
from .gcos import DEFAULT_RANDOM_RANGE, ScaleSpec, gcos_augment, stat_ratio
from .geom3d import DEFAULT_STEPS, dimension_replacement_analysis
from .imagecore import load_image, save_image
from .pit import (
    PitFrame,
    make_pit_frame,
    pit_unwarp_image,
    pit_warp_image,
    pixel_size_map,
    save_weight_map_png,
    save_weight_map_raw,
)
from .scaledepth import DEFAULT_DEPTH_CONSTANT, DepthCodec, decode_depth, encode_depth, rescale_sample

THREADS_ENV = "CAMGEN3D_THREADS"
BLEND_FLAGS = {"on": "feather", "off": "none", "random": "random"}
Z_FIELD = 13  # token index of the depth column in a label line


class CliError(Exception):
    """Hard failure: the run cannot proceed at all."""


# -- filesystem helpers --------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    default = min(8, os.cpu_count() or 1)
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be at least 1, got {n}")
    return n


def publish(dest: Path, write) -> None:
    """Run ``write(tmpdir)`` then move every file it produced into ``dest``.

    Each file appears under its final name only once fully written.
    """
    dest.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=dest))
    try:
        write(tmp)
        for f in sorted(tmp.iterdir()):
            os.replace(f, dest / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def write_text(dest: Path, name: str, text: str) -> None:
    publish(dest, lambda d: (d / name).write_text(text))


def write_json(dest: Path, name: str, obj) -> None:
    write_text(dest, name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_png(dest: Path, name: str, img) -> None:
    publish(dest, lambda d: save_image(img, d / name))


def stems_in(directory: Path, suffix: str) -> list[str]:
    if not directory.is_dir():
        raise CliError(f"missing directory {directory}")
    stems = sorted(p.stem for p in directory.iterdir() if p.suffix == suffix and not p.name.startswith("."))
    if not stems:
        raise CliError(f"no *{suffix} files in {directory}")
    return stems


def label_dir(root: Path) -> Path:
    return root / "label_2" if (root / "label_2").is_dir() else root


# -- batch runner --------------------------------------------------------------


def config_snapshot(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if callable(v):
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, ImageShape):
            v = f"{v.width}x{v.height}"  # same spelling the flag accepts
        cfg[k] = v
    cfg.setdefault("seed", None)
    cfg.setdefault("depth_constant", None)
    return cfg


def _guarded(job, index: int, stem: str):
    t0 = time.perf_counter()
    try:
        outcome = {"stem": stem, "status": "ok"}
        outcome.update(job(index, stem) or {})
    except (ValueError, OSError, KeyError) as exc:
        outcome = {"stem": stem, "status": "error", "error": f"{type(exc).__name__}: {exc}"}
    return outcome, time.perf_counter() - t0


def run_batch(args, stems: list[str], job) -> int:
    """Process ``stems`` on a worker pool and write ``manifest.json`` in input order."""
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda p: _guarded(job, *p), enumerate(stems)))
    outcomes = [o for o, _ in results]
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": config_snapshot(args),
        "outcomes": outcomes,
        "timing": {
            "total_seconds": time.perf_counter() - t0,
            "per_file_seconds": {o["stem"]: round(s, 6) for o, s in results},
        },
    }
    write_json(args.out, "manifest.json", manifest)
    failed = sum(o["status"] != "ok" for o in outcomes)
    print(f"{args.command}: {len(outcomes) - failed} ok, {failed} failed -> {args.out}", file=sys.stderr)
    return 0


def _calib(root: Path, stem: str, key: str):
    return parse_calib((root / "calib" / f"{stem}.txt").read_text(), key)


# -- commands ------------------------------------------------------------------


def cmd_pit(args) -> int:
    stems = stems_in(args.root / "image_2", ".png")

    def job(i, stem):
        img = load_image(args.root / "image_2" / f"{stem}.png")
        frame = make_pit_frame(_calib(args.root, stem, args.calib_key), ImageShape(img.width, img.height))
        write_png(args.out / "image_2", f"{stem}.png", pit_warp_image(frame, img))
        write_json(args.out / "pit_frame", f"{stem}.json", frame.to_json())
        return {"output_size": [frame.output.width, frame.output.height]}

    return run_batch(args, stems, job)


def _parse_size(text: str) -> ImageShape:
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return ImageShape(w, h)


def cmd_unpit(args) -> int:
    stems = stems_in(args.root / "image_2", ".png")

    def job(i, stem):
        meta = args.root / "pit_frame" / f"{stem}.json"
        if meta.exists():
            frame = PitFrame.from_json(json.loads(meta.read_text()))
        elif args.source_size is not None:
            frame = make_pit_frame(_calib(args.root, stem, args.calib_key), args.source_size)
        else:
            raise ValueError(f"no {meta} and no --source-size given")
        img = load_image(args.root / "image_2" / f"{stem}.png")
        write_png(args.out / "image_2", f"{stem}.png", pit_unwarp_image(frame, img))
        return {"output_size": [frame.source.width, frame.source.height]}

    return run_batch(args, stems, job)


def cmd_weight_map(args) -> int:
    stems = stems_in(args.root / "image_2", ".png")

    def job(i, stem):
        img = load_image(args.root / "image_2" / f"{stem}.png")
        wm = pixel_size_map(make_pit_frame(_calib(args.root, stem, args.calib_key), ImageShape(img.width, img.height)))

        def write(d):
            if args.format in ("png", "both"):
                save_weight_map_png(wm, d / f"{stem}.png")
            if args.format in ("raw", "both"):
                save_weight_map_raw(wm, d / f"{stem}.f32")

        publish(args.out / "weight_map", write)
        return {"size": [wm.width, wm.height], "min": float(wm.s.min()), "max": float(wm.s.max())}

    return run_batch(args, stems, job)


def _scale_bbox(label, r_x, r_y):
    if label.bbox2d is None:
        return label
    x1, y1, x2, y2 = label.bbox2d
    return replace(label, bbox2d=(x1 * r_x, y1 * r_y, x2 * r_x, y2 * r_y))


def cmd_rescale(args) -> int:
    if not (0 < args.scale_min <= args.scale_max):
        raise CliError(f"need 0 < --scale-min <= --scale-max, got {args.scale_min}, {args.scale_max}")
    stems = stems_in(args.root / "image_2", ".png")

    def job(i, stem):
        rng = np.random.default_rng([args.seed, i])
        r_x = float(rng.uniform(args.scale_min, args.scale_max))
        r_y = float(rng.uniform(args.scale_min, args.scale_max)) if args.anisotropic else r_x
        img = load_image(args.root / "image_2" / f"{stem}.png")
        calib_text = (args.root / "calib" / f"{stem}.txt").read_text()
        out = rescale_sample(img, parse_calib(calib_text, args.calib_key), r_x, r_y)
        write_png(args.out / "image_2", f"{stem}.png", out.image)
        write_text(args.out / "calib", f"{stem}.txt", rescale_calib_text(calib_text, r_x, r_y))
        lab = args.root / "label_2" / f"{stem}.txt"
        if lab.exists():
            labels = [_scale_bbox(x, r_x, r_y) for x in parse_label_file(lab.read_text())]
            write_text(args.out / "label_2", f"{stem}.txt", "".join(format_label(x) + "\n" for x in labels))
        return {"r_x": r_x, "r_y": r_y, "size": [out.image.width, out.image.height]}

    return run_batch(args, stems, job)


def convert_depth_text(text: str, codec: DepthCodec, K, direction: str, precision: int) -> tuple[str, int]:
    """Rewrite the depth column of every label line with a 3D box; other tokens stay verbatim."""
    fn = encode_depth if direction == "encode" else decode_depth
    out, changed = [], 0
    for no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            label = parse_label_line(line, no)
            if label.box is not None and label.box.z > 0:
                toks = line.split()
                toks[Z_FIELD] = f"{fn(codec, label.box.z, K):.{precision}f}"
                line = " ".join(toks)
                changed += 1
        out.append(line)
    return "".join(x + "\n" for x in out), changed


def cmd_depth(args) -> int:
    codec = DepthCodec(args.depth_constant)
    stems = stems_in(args.root / "label_2", ".txt")

    def job(i, stem):
        K = _calib(args.root, stem, args.calib_key)
        text, n = convert_depth_text((args.root / "label_2" / f"{stem}.txt").read_text(), codec, K, args.direction, args.precision)
        write_text(args.out / "label_2", f"{stem}.txt", text)
        return {"converted": n}

    return run_batch(args, stems, job)


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _load_stats(path: Path) -> SizeStats:
    try:
        return SizeStats.from_json(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read size statistics {path}: {exc}") from None


def build_scale_spec(args) -> ScaleSpec:
    try:
        if args.mode == "random":
            lo, hi = args.random_range
            return ScaleSpec.random(lo, hi)
        if args.source_stats or args.target_stats:
            if not (args.source_stats and args.target_stats):
                raise CliError("--source-stats and --target-stats go together")
            return stat_ratio(_load_stats(args.source_stats), _load_stats(args.target_stats))
        if args.ratios is None:
            raise CliError("stat mode needs --ratios or --source-stats/--target-stats")
        return ScaleSpec.stat(*args.ratios)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_gcos(args) -> int:
    spec = build_scale_spec(args)
    classes = None if args.classes == "all" else set(args.classes.split(","))
    blend = BLEND_FLAGS[args.blend]
    stems = stems_in(args.root / "image_2", ".png")

    def job(i, stem):
        img = load_image(args.root / "image_2" / f"{stem}.png")
        calib_text = (args.root / "calib" / f"{stem}.txt").read_text()
        K = parse_calib(calib_text, args.calib_key)
        lines = [x for x in (args.root / "label_2" / f"{stem}.txt").read_text().splitlines() if x.strip()]
        labels = [parse_label_line(x, no) for no, x in enumerate(lines, start=1)]
        chosen = [j for j, lab in enumerate(labels) if classes is None or lab.cls in classes]
        rng = np.random.default_rng([args.seed, i])
        res = gcos_augment(img, K, [labels[j] for j in chosen], spec, rng=rng, blend=blend)
        out_lines = list(lines)
        provenance = []
        for j, new, prov in zip(chosen, res.labels, res.provenance):
            prov["index"] = j
            provenance.append(prov)
            if new is not labels[j]:
                out_lines[j] = format_label(new)
        write_png(args.out / "image_2", f"{stem}.png", res.image)
        write_text(args.out / "label_2", f"{stem}.txt", "".join(x + "\n" for x in out_lines))
        write_text(args.out / "calib", f"{stem}.txt", calib_text)
        write_json(args.out / "provenance", f"{stem}.json", {"stem": stem, "objects": provenance})
        applied = sum(p["status"] == "applied" for p in provenance)
        return {"applied": applied, "skipped": len(provenance) - applied}

    return run_batch(args, stems, job)


def _emit(obj, out: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is not None:
        write_text(out.parent, out.name, text)
    sys.stdout.write(text)


def _read_label_dir(d: Path) -> dict[str, list]:
    return {s: parse_label_file((d / f"{s}.txt").read_text()) for s in stems_in(d, ".txt")}


def cmd_stats(args) -> int:
    try:
        per_file = _read_label_dir(label_dir(args.root))
        st = size_stats(per_file.values(), args.cls)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _emit(st.to_json(), args.out)
    return 0


def cmd_ratio(args) -> int:
    src, tgt = _load_stats(args.source), _load_stats(args.target)
    try:
        spec = stat_ratio(src, tgt)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    s_h, s_w, s_l = spec.ratios
    _emit({"source": src.cls, "target": tgt.cls, "s_h": s_h, "s_w": s_w, "s_l": s_l}, args.out)
    return 0


def cmd_analyze(args) -> int:
    """Pool matched pairs over all files, then average IoU per replacement step."""
    try:
        preds = _read_label_dir(label_dir(args.pred))
        gts = _read_label_dir(label_dir(args.gt))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    n_pairs = unmatched_p = unmatched_g = 0
    sums = np.zeros((len(DEFAULT_STEPS), 2))
    for stem in sorted(set(preds) | set(gts)):
        p = [x for x in preds.get(stem, []) if x.cls == args.cls and x.box is not None]
        g = [x for x in gts.get(stem, []) if x.cls == args.cls and x.box is not None]
        match, steps = dimension_replacement_analysis(p, g, DEFAULT_STEPS, args.min_iou)
        n = len(match.pairs)
        n_pairs += n
        unmatched_p += len(match.unmatched_preds)
        unmatched_g += len(match.unmatched_gts)
        if n:
            sums += n * np.array([[s.mean_iou3d, s.mean_bev_iou] for s in steps])
    report = {"class": args.cls, "pairs": n_pairs, "unmatched_preds": unmatched_p, "unmatched_gts": unmatched_g, "steps": []}
    prev = None
    for dims, (iou, bev) in zip(DEFAULT_STEPS, sums / max(n_pairs, 1)):
        mean = float(iou) if n_pairs else None
        report["steps"].append(
            {
                "replaced": "".join(dims) or "none",
                "mean_iou3d": mean,
                "mean_bev_iou": float(bev) if n_pairs else None,
                "delta_iou3d": None if prev is None or mean is None else mean - prev,
            }
        )
        prev = mean
    _emit(report, args.out)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camgen3d", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def batch(name, help_, func):
        p = sub.add_parser(name, help=help_)
        p.add_argument("root", type=Path, help="dataset root with image_2/, label_2/, calib/")
        p.add_argument("--out", type=Path, required=True, help="output root")
        p.add_argument("--calib-key", default="P2", help="projection matrix to read (default P2)")
        p.set_defaults(func=func)
        return p

    batch("pit", "warp images into the position-invariant frame", cmd_pit)
    p = batch("unpit", "warp PIT images back to the pinhole frame", cmd_unpit)
    p.add_argument("--source-size", type=_parse_size, help="WIDTHxHEIGHT when pit_frame/<stem>.json is absent")
    p = batch("weight-map", "per-pixel pixel-size map of the PIT image", cmd_weight_map)
    p.add_argument("--format", choices=("png", "raw", "both"), default="both")
    p = batch("rescale", "random multi-scale resampling with matching calibration", cmd_rescale)
    p.add_argument("--scale-min", type=float, default=0.5)
    p.add_argument("--scale-max", type=float, default=1.4)
    p.add_argument("--anisotropic", action="store_true", help="draw x and y rates independently")
    p.add_argument("--seed", type=int, default=0)
    p = batch("depth", "convert the depth column between metric and pixel-size depth", cmd_depth)
    p.add_argument("--direction", choices=("encode", "decode"), default="encode")
    p.add_argument("--depth-constant", type=float, default=DEFAULT_DEPTH_CONSTANT)
    p.add_argument("--precision", type=int, default=6, help="decimals written for the converted column")
    p = batch("gcos", "geometry-consistent object scaling", cmd_gcos)
    p.add_argument("--mode", choices=("stat", "random"), default="stat")
    p.add_argument("--ratios", type=lambda t: _floats(t, 3, "--ratios"), help="s_h,s_w,s_l for stat mode")
    p.add_argument("--source-stats", type=Path, help="size statistics JSON of the source domain")
    p.add_argument("--target-stats", type=Path, help="size statistics JSON of the target domain")
    p.add_argument(
        "--random-range",
        type=lambda t: _floats(t, 2, "--random-range"),
        default=DEFAULT_RANDOM_RANGE,
        help="lo,hi for random mode",
    )
    p.add_argument("--blend", choices=tuple(BLEND_FLAGS), default="off")
    p.add_argument("--classes", default="Car", help="comma-separated classes to scale, or 'all'")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stats", help="mean object size of one class")
    p.add_argument("root", type=Path, help="dataset root or a directory of label files")
    p.add_argument("--class", dest="cls", default="Car")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ratio", help="per-dimension scaling ratios target/source")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("analyze", help="IoU gain from swapping in ground-truth dimensions")
    p.add_argument("pred", type=Path, help="prediction labels (root or label directory)")
    p.add_argument("gt", type=Path, help="ground-truth labels (root or label directory)")
    p.add_argument("--class", dest="cls", default="Car")
    p.add_argument("--min-iou", type=float, default=0.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"camgen3d {args.command}: error: {exc}", file=sys.stderr)
        return 1

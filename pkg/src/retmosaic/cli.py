"""Command line interface.

``retmosaic stitch`` runs the full pipeline on a directory of PNG frames;
the other subcommands run single stages for debugging or generate
synthetic test sequences.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InvalidConfig, MosaicError, NoUsableFrames
from .glare import detect_glare, glare_measure
from .imgcore import Frame
from .pipeline import Config, analyze_frame, fill_invalid, frame_seed, run
from .registration import register
from .roi import detect_roi
from .vesselness import entropy_score, vesselness

EXIT_OK, EXIT_IO, EXIT_NO_FRAMES = 0, 1, 2


def _load_config(args) -> Config:
    config = Config.from_json(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _dump(directory: Path, analyses, output) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for a in analyses:
        if a.roi is not None:
            io.save_gray(directory / f"roi_{a.index:04d}.png", a.roi.mask)
        if a.glare is not None:
            io.save_gray(directory / f"glare_{a.index:04d}.png", a.glare)
        if a.vessels is not None:
            io.save_gray(directory / f"vessel_{a.index:04d}.png", io.to_uint16(a.vessels.values))
    io.save_gray(directory / "mosaic_weight.png", output.mosaic.weight_image16())
    io.save_gray(directory / "mosaic_vessel.png",
                 io.to_uint16(output.mosaic.vessel_fused.values))


def cmd_stitch(args) -> int:
    config = _load_config(args)
    frames = io.read_frames(args.frames)
    analyses = [analyze_frame(f, config) for f in frames]
    try:
        output = run(frames, config, analyses=analyses)
    except NoUsableFrames as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_FRAMES
    io.save_rgb(args.out, output.mosaic.displayed_uint8())
    Path(args.report).write_text(output.report_json(config))
    if args.weights:
        io.save_gray(args.weights, output.mosaic.weight_image16())
    if args.dump_intermediates:
        _dump(Path(args.dump_intermediates), analyses, output)
    used = len(output.used)
    print(f"{used}/{len(frames)} frames used, start frame {output.start_index}")
    return EXIT_OK


def _overlay(frame: Frame, mask: np.ndarray, colour=(0, 255, 0)) -> np.ndarray:
    from .imgcore import contour
    rgb = frame.rgb.copy()
    if mask.any():
        rgb[contour(mask)] = colour
    return rgb


def cmd_roi(args) -> int:
    config = _load_config(args)
    frame = io.load_frame(args.frame)
    ga = dataclasses.replace(config.roi, seed=frame_seed(frame, config.seed))
    res = detect_roi(frame, ga, min_agreement=config.min_roi_agreement)
    print(json.dumps({**res.ellipse.to_dict(), "fitness": res.fitness,
                      "agreement": res.agreement}))
    if args.overlay:
        io.save_rgb(args.overlay, _overlay(frame, res.mask))
    return EXIT_OK


def cmd_glare(args) -> int:
    config = _load_config(args)
    frame = io.load_frame(args.frame)
    ga = dataclasses.replace(config.roi, seed=frame_seed(frame, config.seed))
    roi = detect_roi(frame, ga, min_agreement=config.min_roi_agreement).mask
    mask = detect_glare(frame, roi, config.glare)
    io.save_gray(args.out, mask)
    if args.measure:
        io.save_gray(args.measure, np.clip(np.rint(glare_measure(frame)), 0, 255).astype(np.uint8))
    if args.preview:
        io.save_rgb(args.preview, _overlay(frame, mask, (0, 128, 255)))
    print(json.dumps({"glare_pixels": int(mask.sum()), "roi_pixels": int(roi.sum())}))
    return EXIT_OK


def cmd_vessel(args) -> int:
    config = _load_config(args)
    frame = io.load_frame(args.frame)
    a = analyze_frame(frame, config)
    if not a.ok:
        print(f"error: frame rejected ({a.status}): {a.reason}", file=sys.stderr)
        return EXIT_IO
    io.save_gray(args.out, io.to_uint16(a.vessels.values))
    print(f"{a.entropy:.6f}")
    return EXIT_OK


def _mosaic_vessels(path, config: Config):
    """Vesselness of a stored mosaic; black pixels count as outside."""
    m = io.load_frame(path)
    valid = m.rgb.max(axis=-1) > 0
    return vesselness(fill_invalid(m.green, valid), valid, config.frangi)


def cmd_register(args) -> int:
    config = _load_config(args)
    a = analyze_frame(io.load_frame(args.frame), config)
    if not a.ok:
        print(f"error: frame rejected ({a.status}): {a.reason}", file=sys.stderr)
        return EXIT_IO
    res = register(a.vessels, _mosaic_vessels(args.mosaic, config), config.search)
    print(json.dumps(res.to_dict()))
    return EXIT_OK


def cmd_phantom(args) -> int:
    from . import phantom

    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    fields = {f.name for f in dataclasses.fields(phantom.PhantomConfig)}
    unknown = set(cfg) - fields
    if unknown:
        raise InvalidConfig(f"unknown phantom keys: {sorted(unknown)}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    frames, truth = phantom.generate(phantom.PhantomConfig(**cfg))
    # frames alone at the top level so the directory feeds ``stitch`` directly
    out = Path(args.out)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    records = []
    for i, f in enumerate(frames):
        io.save_rgb(out / f"frame_{i:04d}.png", f.rgb)
        io.save_gray(out / "truth" / f"glare_{i:04d}.png", truth.glare_masks[i])
        records.append({"frame": f"frame_{i:04d}.png", "roi": truth.rois[i].to_dict(),
                        "transform": truth.transforms[i].to_dict(),
                        "glare_mask": f"truth/glare_{i:04d}.png"})
    io.save_rgb(out / "truth" / "retina.png", truth.retina.rgb)
    io.save_gray(out / "truth" / "vessel_mask.png", truth.vessel_mask)
    doc = {"retina": "truth/retina.png", "vessel_mask": "truth/vessel_mask.png",
           "frames": records}
    (out / "truth.json").write_text(json.dumps(doc, indent=2))
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retmosaic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("stitch", help="build a mosaic from a directory of PNG frames")
    p.add_argument("--frames", required=True, help="directory of frames, read in name order")
    p.add_argument("--out", required=True, help="mosaic PNG")
    p.add_argument("--report", required=True, help="per-frame report JSON")
    p.add_argument("--weights", help="optional 16-bit weight-map PNG")
    p.add_argument("--dump-intermediates", help="directory for per-frame masks and maps")
    common(p)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("roi", help="fit the ROI ellipse of one frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--overlay", help="PNG with the fitted outline drawn in")
    common(p)
    p.set_defaults(func=cmd_roi)

    p = sub.add_parser("glare", help="glare mask of one frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True, help="mask PNG")
    p.add_argument("--measure", help="PNG of the raw glare measure")
    p.add_argument("--preview", help="PNG with the mask outline drawn in")
    common(p)
    p.set_defaults(func=cmd_glare)

    p = sub.add_parser("vessel", help="vesselness map of one frame; prints its entropy")
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True, help="16-bit PNG")
    common(p)
    p.set_defaults(func=cmd_vessel)

    p = sub.add_parser("register", help="register one frame against a mosaic PNG")
    p.add_argument("--frame", required=True)
    p.add_argument("--mosaic", required=True)
    common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("phantom", help="write a synthetic frame sequence with ground truth")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoUsableFrames as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_FRAMES
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MosaicError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

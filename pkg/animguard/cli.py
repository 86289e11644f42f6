'''
cli file is the command-line surface of animguard:

    animguard protect --input photo.png --output out/ [--budget 16/255 --iterations 200 ...]
    animguard protect --replay out/manifest.yaml --output replay/
    animguard evaluate --reference ref_frames/ --generated gen_frames/ --output report.yaml
    animguard robustness --input out/photo_protected.png --clean photo.png --sweep jpeg:50,75,95
    animguard robustness --purify p1.png p2.png p3.png p4.png p5.png --output purified/

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
'''

import argparse
import os
from pathlib import Path
from rich.table import Table
from animguard.protector import protector
from animguard.blocks import ToyAnimator, evaluate, image_similarity, sweep, interpolate_average_purify, resolve_bundle
from animguard.blocks.extractors import resolve_extractor
from animguard.blocks.metrics import METRICS, resolve_embedder
from animguard.blocks.robustness import parse_axis
from animguard.configuration.loader import load_config, RunManifest
from animguard.exceptions import AnimGuardError, ConfigurationError
from animguard.util import console, file_check, list_images, read_image, read_frames, write_image

EMBEDDER_ROLES = sorted({role for role, _ in METRICS.values() if role is not None})
DOWNSTREAMS = ("image", "toy_animation")


def build_parser() -> argparse.ArgumentParser:

    parser = argparse.ArgumentParser(prog="animguard", description="protect human images against pose-driven animation")
    commands = parser.add_subparsers(dest="command", required=True)

    protect = commands.add_parser("protect", help="optimize a protective perturbation for one image or a directory")
    protect.add_argument("-i", "--input", type=str, help="image file or directory of images")
    protect.add_argument("-o", "--output", type=str, required=True, help="output directory")
    protect.add_argument("-c", "--config", type=str, help="yaml configuration file")
    protect.add_argument("--seed", type=int)
    protect.add_argument("--budget", type=str, help="L-infinity budget, e.g. 16/255 or 0.0627")
    protect.add_argument("--iterations", type=int)
    protect.add_argument("--step-size", type=str, help="sign step size, e.g. 2/255")
    protect.add_argument("--decay", type=float, help="momentum decay factor")
    protect.add_argument("--frames", type=int, help="frame latents in the frame incoherence term")
    protect.add_argument("--lpips-budget", type=float, help="perceptual budget of the hinge penalty")
    protect.add_argument("--replay", type=str, help="re-run the configuration stored in a run manifest")
    protect.add_argument("--progress", action="store_true", default=None, help="show a progress bar")

    evaluation = commands.add_parser("evaluate", help="score generated frames against a reference")
    evaluation.add_argument("-r", "--reference", type=str, required=True, help="reference image or directory of frames")
    evaluation.add_argument("-g", "--generated", type=str, required=True, help="directory of generated frames")
    evaluation.add_argument("-o", "--output", type=str, default="report.yaml", help="report file")
    evaluation.add_argument("-c", "--config", type=str)
    evaluation.add_argument("-m", "--metrics", type=str, help=f"comma separated subset of {list(METRICS)}")

    robustness = commands.add_parser("robustness", help="countermeasure sweeps and the interpolation purifier")
    robustness.add_argument("-i", "--input", type=str, help="protected image to sweep")
    robustness.add_argument("--clean", type=str, help="clean image, swept as a baseline series")
    robustness.add_argument("--sweep", type=str, action="append", help="axis kind:p1,p2,...; repeatable")
    robustness.add_argument("--purify", type=str, nargs="+", help="five protected images of the same person")
    robustness.add_argument("-o", "--output", type=str, required=True, help="output directory")
    robustness.add_argument("-c", "--config", type=str)
    robustness.add_argument("--seed", type=int)

    return parser


def protect_overrides(args) -> dict:

    flags = {
        "seed": args.seed,
        "eta": args.budget,
        "iterations": args.iterations,
        "gamma": args.step_size,
        "decay": args.decay,
        "frames": args.frames,
        "zeta": args.lpips_budget,
        "progress": args.progress,
    }
    return {"protect": {k: v for k, v in flags.items() if v is not None}}


def input_files(path) -> list[Path]:

    if path is None:
        raise ValueError("--input is required")

    if os.path.isdir(path):
        files = list_images(path)
        if not files:
            raise FileNotFoundError(f"no images in {path}")
        return files

    return [Path(file_check(path))]


def cmd_protect(args) -> int:

    if args.replay:
        manifest = RunManifest.load(args.replay)
        config = manifest.config
        inputs = input_files(args.input) if args.input else [Path(file_check(p)) for p in manifest.inputs]
    else:
        config = load_config(args.config, overrides=protect_overrides(args))
        inputs = input_files(args.input)

    # resolve extractors and read every input before anything is written
    engine = protector.from_config(config)
    images = [read_image(p) for p in inputs]

    os.makedirs(args.output, exist_ok=True)
    manifest = RunManifest.create(engine.config, engine.bundle.record, [str(p) for p in inputs])
    manifest_path = os.path.join(args.output, "manifest.yaml")
    manifest.save(manifest_path)

    for index, (path, x) in enumerate(zip(inputs, images)):

        result = engine.protect_and_save(x, path.stem, args.output, seed_offset=index)
        manifest.outputs[path.stem] = {"image": result["image"], "trace": result["trace"]}
        manifest.similarity[path.stem] = result["similarity"]

        console.print(f"[green]protected[/green] {path.name} -> {result['image']} " + ", ".join(f"{k}={v:.4f}" for k, v in result["similarity"].items()))

    manifest.save(manifest_path)
    console.print(f"manifest written to {manifest_path} (config hash {manifest.config_hash[:12]})")

    return 0


def resolve_embedders(entries: dict) -> dict:

    unknown = set(entries or {}) - set(EMBEDDER_ROLES)
    if unknown:
        raise ConfigurationError(f"unknown embedder roles {sorted(unknown)}, choose from {EMBEDDER_ROLES}")

    return {role: resolve_embedder(entry) for role, entry in (entries or {}).items()}


def resolve_perceptual(entry):
    return resolve_extractor("perceptual", entry) if entry else None


def read_reference(path):
    return read_frames(path) if os.path.isdir(path) else read_image(path)


def cmd_evaluate(args) -> int:

    overrides = {"evaluate": {"metrics": args.metrics}} if args.metrics else None
    config = load_config(args.config, overrides=overrides)
    section = config["evaluate"]

    reference = read_reference(args.reference)
    generated = read_frames(args.generated)
    if not generated:
        raise ValueError(f"no generated frames in {args.generated}")

    embedders = resolve_embedders(section["embedders"])
    pd = resolve_perceptual(section["perceptual"])

    report = evaluate(reference, generated, embedders, pd, section["metrics"])
    report.save(args.output)

    table = Table(title=f"{len(generated)} generated frames")
    table.add_column("metric")
    table.add_column("value")
    table.add_column("protection")
    for metric, value in report.values.items():
        table.add_row(metric, f"{value:.4f}", report.directions[metric])
    for metric, reason in report.skipped.items():
        table.add_row(metric, "skipped", reason)
    console.print(table)

    return 0


def make_downstream(config: dict, reference):

    '''
    downstream(image) -> {metric: value} compared against the reference image
    '''

    section = config["robustness"]
    pd = resolve_perceptual(config["evaluate"]["perceptual"])

    if section["downstream"] == "image":

        def downstream(img):
            values = image_similarity(reference, img, pd)
            return {k: v for k, v in values.items() if k in section["metrics"]}

        return downstream

    if section["downstream"] == "toy_animation":

        encoder = resolve_bundle(config["extractors"]).encoder
        if not hasattr(encoder, "decode"):
            raise ConfigurationError("toy_animation needs a latent encoder with a decoder, e.g. the toy-default preset")

        animator = ToyAnimator(encoder, section["seed"], section["motion"])
        embedders = resolve_embedders(config["evaluate"]["embedders"])
        reference_frames = animator.animate(reference, section["frames"])

        def downstream(img):
            report = evaluate(reference_frames, animator.animate(img, section["frames"]), embedders, pd, section["metrics"])
            return report.values

        return downstream

    raise ConfigurationError(f"unknown robustness downstream '{section['downstream']}', choose from {DOWNSTREAMS}")


def cmd_robustness(args) -> int:

    overrides = {"robustness": {"seed": args.seed}} if args.seed is not None else None
    config = load_config(args.config, overrides=overrides)

    if args.purify is not None and len(args.purify) != 5:
        raise ValueError(f"purification needs exactly 5 images, got {len(args.purify)}")

    run_sweep = bool(args.sweep) or args.purify is None
    axes = [parse_axis(text) for text in (args.sweep or config["robustness"]["axes"])] if run_sweep else []

    if run_sweep and args.input is None:
        raise ValueError("--input is required for a sweep")

    purified = interpolate_average_purify([read_image(p) for p in args.purify]) if args.purify else None

    if run_sweep:
        protected = read_image(args.input)
        clean = read_image(args.clean) if args.clean else None
        downstream = make_downstream(config, clean if clean is not None else protected)

    os.makedirs(args.output, exist_ok=True)

    if purified is not None:
        path = write_image(purified, os.path.join(args.output, "purified.png"))
        console.print(f"[green]purified[/green] {len(args.purify)} images -> {path}")

    for axis in axes:
        table = sweep(protected, axis, downstream, clean, config["robustness"]["seed"])
        path = os.path.join(args.output, f"sweep_{axis.kind}.csv")
        table.to_csv(path)
        console.print(f"[green]swept[/green] {axis.kind} over {axis.params} -> {path}")

    return 0


COMMANDS = {"protect": cmd_protect, "evaluate": cmd_evaluate, "robustness": cmd_robustness}


def main(argv=None) -> int:

    args = build_parser().parse_args(argv)

    try:
        return COMMANDS[args.command](args)
    except (AnimGuardError, ValueError, FileNotFoundError, OSError) as e:
        console.print(f"[red]error[/red]: {e}")
        return 1

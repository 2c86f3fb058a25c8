"""Command-line entry point: synth, train, generate, mesh, interpolate, evaluate."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from hypercloud import __version__
from hypercloud.config import load_config
from hypercloud.errors import HyperCloudError
from hypercloud.generation import (
    generate_cloud,
    generate_mesh,
    interpolate_latent,
    interpolate_surface,
    sample_latent,
)
from hypercloud.geometry import (
    FAMILIES,
    DatasetSpec,
    gaussian_confidence_radius,
    load_cloud,
    load_cloud_dir,
    make_rng,
    normalize_cloud,
    save_cloud,
    save_mesh_obj,
    subsample_cloud,
    synth_dataset,
)
from hypercloud.metrics import DEFAULT_RESOLUTION, DISTANCES, evaluate_sets
from hypercloud.model import encode, load_checkpoint, save_checkpoint, train, write_history_csv

log = logging.getLogger("hypercloud")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parent_dir(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _latent(args, model, rng) -> np.ndarray:
    """z from `--encode FILE` when given, otherwise z ~ N(0, I)."""
    if getattr(args, "encode", None):
        cloud, _, _ = normalize_cloud(load_cloud(args.encode))
        return encode(model, cloud).mu
    return sample_latent(model.latent_dim, rng)


def _sphere_radius(args) -> float | None:
    if getattr(args, "sphere_confidence", None) is not None:
        return gaussian_confidence_radius(args.sphere_confidence)
    return args.sphere_radius


# --- Commands ---


def cmd_synth(args) -> None:
    params = yaml.safe_load(args.params) if args.params else {}
    if not isinstance(params, dict):
        raise ValueError(f"--params must be a mapping, got {args.params!r}")
    spec = DatasetSpec(args.family, args.count, args.points, params)
    clouds = synth_dataset(spec, make_rng(args.seed))

    out = _out_dir(args.out)
    for i, pc in enumerate(clouds):
        save_cloud(pc, out / f"cloud_{i:04d}.xyz")
    manifest = {
        "family": spec.family,
        "count": spec.count,
        "points": spec.points,
        "params": spec.params,
        "seed": args.seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    log.info("Wrote %d %s clouds of %d points to %s", spec.count, spec.family, spec.points, out)


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    clouds = [normalize_cloud(pc)[0] for pc in load_cloud_dir(args.data)]
    model, history = train(clouds, cfg)

    ckpt = _parent_dir(args.out)
    save_checkpoint(model, ckpt)
    history_path = ckpt.parent / "history.csv"
    write_history_csv(history, history_path)
    log.info("Saved checkpoint to %s and loss history to %s", ckpt, history_path)


def cmd_generate(args) -> None:
    model = load_checkpoint(args.ckpt)
    rng = make_rng(args.seed)
    radius = _sphere_radius(args)
    if args.count == 1:
        z = _latent(args, model, rng)
        save_cloud(generate_cloud(model, z, args.n, rng, sphere_radius=radius), _parent_dir(args.out))
        log.info("Wrote %d points to %s", args.n, args.out)
        return

    out = _out_dir(args.out)
    for i in range(args.count):
        z = _latent(args, model, rng)
        save_cloud(generate_cloud(model, z, args.n, rng, sphere_radius=radius), out / f"cloud_{i:04d}.xyz")
    log.info("Wrote %d clouds of %d points to %s", args.count, args.n, out)


def cmd_mesh(args) -> None:
    model = load_checkpoint(args.ckpt)
    z = _latent(args, model, make_rng(args.seed))
    mesh = generate_mesh(model, z, args.level, radius=1.0 if args.sphere_radius is None else args.sphere_radius)
    save_mesh_obj(mesh, _parent_dir(args.out))
    log.info("Wrote mesh with %d vertices, %d faces to %s", len(mesh.vertices), len(mesh.triangles), args.out)


def cmd_interpolate(args) -> None:
    model = load_checkpoint(args.ckpt)
    if args.cloud is not None:
        if args.pa is None or args.pb is None:
            raise ValueError("surface interpolation needs --pa and --pb")
        if args.sphere_radius is not None:
            raise ValueError("--sphere-radius applies to latent interpolation only")
        cloud, _, _ = normalize_cloud(load_cloud(args.cloud))
        points = interpolate_surface(model, cloud, args.pa, args.pb, args.steps)
        save_cloud(points, _parent_dir(args.out))
        log.info("Wrote %d interpolated surface points to %s", len(points), args.out)
        return

    if args.cloud_a is None or args.cloud_b is None:
        raise ValueError("interpolate needs --cloud-a and --cloud-b, or --cloud with --pa and --pb")
    cloud_a, _, _ = normalize_cloud(load_cloud(args.cloud_a))
    cloud_b, _, _ = normalize_cloud(load_cloud(args.cloud_b))
    steps = interpolate_latent(
        model, cloud_a, cloud_b, args.steps,
        n=args.n, level=args.level, seed=args.seed, sphere_radius=args.sphere_radius,
    )

    out = _out_dir(args.out)
    for k, step in enumerate(steps):
        save_mesh_obj(step.mesh, out / f"step_{k:02d}.obj")
        save_cloud(step.cloud, out / f"step_{k:02d}.xyz")
    log.info("Wrote %d interpolation steps to %s", len(steps), out)


def cmd_evaluate(args) -> None:
    generated = load_cloud_dir(args.gen)
    reference = load_cloud_dir(args.ref)
    if args.resample:
        rng = make_rng(args.seed)
        generated = [subsample_cloud(pc, args.resample, rng) for pc in generated]
        reference = [subsample_cloud(pc, args.resample, rng) for pc in reference]

    report = evaluate_sets(generated, reference, args.dist, args.jsd_res, seed=args.seed)
    _parent_dir(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    log.info(
        "%s: JSD %.4g  MMD %.4g  COV %.3f  1-NNA %s",
        args.dist, report.jsd, report.mmd, report.cov,
        "n/a" if report.nna_1 is None else f"{report.nna_1:.3f}",
    )


# --- Parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypercloud",
        description="Point-cloud autoencoder whose decoder emits the weights of a per-shape surface network",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Write a synthetic dataset of .xyz clouds")
    p.add_argument("--family", choices=list(FAMILIES), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default=None, help="Family parameters as a YAML/JSON mapping")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="Train on a directory of .xyz clouds")
    p.add_argument("--data", required=True, help="Directory of .xyz clouds")
    p.add_argument("--config", required=True, help="YAML or JSON training config")
    p.add_argument("--out", required=True, help="Checkpoint path; history.csv goes next to it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="Sample point clouds from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=2048, help="Points per cloud")
    p.add_argument("--count", type=int, default=1, help="Clouds to write; above 1, --out is a directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encode", default=None, metavar="FILE", help="Reconstruct this cloud instead of sampling z")
    radius = p.add_mutually_exclusive_group()
    radius.add_argument("--sphere-radius", type=float, default=None, metavar="R",
                        help="Sample the prior on the sphere of radius R")
    radius.add_argument("--sphere-confidence", type=float, default=None, metavar="P",
                        help="Sphere radius holding probability P of a 3D standard Gaussian")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mesh", help="Write a triangle mesh from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--level", type=int, default=4, help="Icosphere subdivision level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encode", default=None, metavar="FILE")
    p.add_argument("--sphere-radius", type=float, default=None, metavar="R")
    p.add_argument("--out", required=True, help="Output .obj path")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("interpolate", help="Interpolate between two shapes or two surface points")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--cloud-a", default=None)
    p.add_argument("--cloud-b", default=None)
    p.add_argument("--cloud", default=None, help="Shape for surface interpolation")
    p.add_argument("--pa", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"))
    p.add_argument("--pb", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"))
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sphere-radius", type=float, default=None, metavar="R",
                   help="Sample clouds on the sphere of radius R and scale the mesh icosphere to it")
    p.add_argument("--out", required=True, help="Directory (latent mode) or .xyz path (surface mode)")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="Score a generated set against a reference set")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", choices=list(DISTANCES), default="cd")
    p.add_argument("--jsd-res", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--resample", type=int, default=None, metavar="N",
                   help="Subsample every cloud to N points first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Report .json path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose, args.quiet)
    try:
        args.func(args)
    except (HyperCloudError, ValueError, OSError) as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

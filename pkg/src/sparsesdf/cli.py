"""Command-line entry points.

Subcommands: gen (synthetic clouds), reconstruct (train + extract), eval
(metrics against ground truth), ablate (batched configurations), field2d
(render a trained 2-D field).  Errors exit nonzero with one machine-parseable
line on stderr: ``error<TAB>ErrorClass<TAB>message``.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import numpy as np

from . import field_extract as fx
from . import io_formats as iof
from . import neural_tps as ntps
from . import pipeline
from . import shapes
from .errors import SparseSdfError


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SparseSdfError as exc:
            click.echo(f"error\t{type(exc).__name__}\t{exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def main():
    """Signed-distance reconstruction from sparse unoriented point clouds."""


@main.command()
@click.option("--kind", type=click.Choice(shapes.SHAPE_KINDS), required=True)
@click.option("--count", type=int, default=300, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True, help="Gaussian sigma as a fraction of the bounding scale.")
@click.option("--nonuniform", is_flag=True, help="Nonuniform arc sampling (moon2d).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_prefix", required=True, help="Output prefix; writes <out>.xyz and <out>.gt.json.")
@_guarded
def gen(kind, count, noise, nonuniform, seed, out_prefix):
    """Generate a synthetic point cloud plus its ground-truth descriptor."""
    spec = shapes.SyntheticShapeSpec(kind, count=count, noise=noise, nonuniform=nonuniform, seed=seed)
    cloud, descriptor = shapes.generate_cloud(spec)
    os.makedirs(os.path.dirname(os.path.abspath(out_prefix)), exist_ok=True)
    iof.write_xyz(out_prefix + ".xyz", cloud)
    with open(out_prefix + ".gt.json", "w") as fh:
        json.dump(descriptor, fh, indent=1, sort_keys=True)
    click.echo(f"wrote {out_prefix}.xyz ({count} points) and {out_prefix}.gt.json")


def _train_options(fn):
    opts = [
        click.option("--iterations", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--queries-per-iter", type=int, default=None),
        click.option("--anchor", "query_anchor", type=click.Choice(["S", "P"]), default=None),
        click.option("--alpha", type=float, default=None),
        click.option("--beta", type=float, default=None),
        click.option("--delta", type=float, default=None),
        click.option("--s-count", type=int, default=None),
        click.option("--g-count", type=int, default=None),
        click.option("--patch-count", type=int, default=None),
        click.option("--basis", "basis_kind", type=click.Choice(list(ntps.BASIS_KINDS)), default=None),
        click.option("--no-cd", is_flag=True, default=None),
        click.option("--no-surf", is_flag=True, default=None),
        click.option("--grad-diff", is_flag=True, default=None),
        click.option("--separate", is_flag=True, default=None),
        click.option("--no-feature", is_flag=True, default=None),
        click.option("--no-disp", is_flag=True, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


_TRAIN_KEYS = (
    "iterations", "lr", "queries_per_iter", "query_anchor", "alpha", "beta",
    "delta", "s_count", "g_count", "patch_count", "basis_kind",
    "no_cd", "no_surf", "grad_diff", "separate", "no_feature", "no_disp",
)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.option("--output-dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--grid-resolution", type=int, default=None)
@_train_options
@_guarded
def reconstruct(manifest_path, input_path, output_dir, seed, grid_resolution, **train_kwargs):
    """Train on a point cloud and extract the reconstructed surface."""
    train_over = {k: v for k, v in train_kwargs.items() if k in _TRAIN_KEYS and v is not None}
    overrides = {
        "input": input_path,
        "output_dir": output_dir,
        "seed": seed,
        "grid_resolution": grid_resolution,
        "train": train_over,
    }
    if manifest_path:
        manifest = pipeline.load_manifest(manifest_path, overrides)
    else:
        if input_path is None or output_dir is None:
            raise click.UsageError("without --manifest, both --input and --output-dir are required")
        manifest = pipeline.ExperimentManifest(
            output_dir=output_dir, input=input_path,
            seed=seed or 0, train=train_over, grid_resolution=grid_resolution,
        )
    artifacts = pipeline.run_reconstruct(manifest)
    for key in ("mesh", "contour", "raster", "checkpoint", "train_log", "resolved_config"):
        if key in artifacts:
            click.echo(f"{key}\t{artifacts[key]}")


@main.command("eval")
@click.argument("surface", type=click.Path(exists=True))
@click.argument("ground_truth", type=click.Path(exists=True))
@click.option("--samples", type=int, default=pipeline.EVAL_SAMPLES_DEFAULT, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None, help="Also probe field sign correctness (descriptor ground truth only).")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the metrics table here as TSV.")
@_guarded
def eval_cmd(surface, ground_truth, samples, seed, checkpoint, out_path):
    """Compare a reconstructed surface (OBJ or contour .txt) to ground truth
    (descriptor .json or mesh .obj); reports CD_L1 (x10), CD_L2 (x100), NC."""
    metrics = pipeline.run_eval(surface, ground_truth, n_samples=samples, seed=seed, checkpoint=checkpoint)
    rows = [{"metric": k, "value": v} for k, v in metrics.items()]
    for row in rows:
        click.echo(f"{row['metric']}\t{pipeline._fmt_cell(row['value'])}")
    if out_path:
        pipeline.write_metrics_tsv(out_path, rows)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True,
              help="Manifest with a 'base' experiment and a 'runs' list.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_guarded
def ablate(manifest_path, out_path):
    """Run a set of configurations and emit one merged metrics table."""
    with open(manifest_path) as fh:
        if manifest_path.endswith((".yaml", ".yml")):
            import yaml

            data = yaml.safe_load(fh)
        else:
            data = json.load(fh)
    base = pipeline.ExperimentManifest(**data["base"])
    rows = pipeline.run_ablate(base, data["runs"])
    out_path = out_path or os.path.join(base.output_dir, "ablation.tsv")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    pipeline.write_metrics_tsv(out_path, rows)
    with open(out_path) as fh:
        click.echo(fh.read().rstrip())


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--resolution", type=int, default=256, show_default=True)
@click.option("--level-spacing", type=float, default=0.05, show_default=True)
@click.option("--out-prefix", required=True, help="Writes <prefix>.png and <prefix>.txt.")
@_guarded
def field2d(checkpoint, resolution, level_spacing, out_prefix):
    """Render a trained 2-D field: raster with level sets plus zero contour."""
    net, _, tf, meta = pipeline.load_model(checkpoint)
    if net.dim != 2:
        raise click.UsageError("field2d needs a 2-D checkpoint")
    lo = np.full(2, -(0.5 + pipeline.GRID_PAD * 0.5))
    evaluator = lambda pts: ntps.sdf_eval(net, pts)
    fld = fx.eval_grid(evaluator, resolution, lo, -lo)
    fx.raster_field(fld, level_spacing, out_prefix + ".png")
    lines_n = fx.marching_squares(fld, 0.0, evaluator=evaluator)
    iof.write_polylines2d(out_prefix + ".txt", [(tf.invert(v), c) for v, c in lines_n])
    click.echo(f"wrote {out_prefix}.png and {out_prefix}.txt")


if __name__ == "__main__":
    main()

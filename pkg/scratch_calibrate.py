"""Calibration: full-pipeline runs at candidate defaults (scratch, not shipped)."""
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from sparsesdf import pipeline

CANDIDATE = {}  # TrainConfig defaults are the candidate configuration


def run(kind, train_over, out, synthetic_extra=None, grid=None):
    t0 = time.time()
    man = pipeline.ExperimentManifest(
        output_dir=out,
        synthetic={"kind": kind, "count": 300, "seed": 1, **(synthetic_extra or {})},
        seed=0,
        train={**CANDIDATE, **train_over},
        grid_resolution=grid,
        eval_samples=100_000,
    )
    art = pipeline.run_reconstruct(man)
    t_train = time.time() - t0
    surface = art.get("mesh") or art.get("contour")
    metrics = pipeline.run_eval(
        surface, os.path.join(out, "input.gt.json"),
        n_samples=man.eval_samples, seed=0, checkpoint=art["checkpoint"],
    )
    t_all = time.time() - t0
    print(f"== {out}: train+extract {t_train/60:.1f}min total {t_all/60:.1f}min")
    print("   ", json.dumps({k: round(v, 5) for k, v in metrics.items() if isinstance(v, float)}))
    sys.stdout.flush()
    return metrics


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("sphere", "all"):
        run("sphere", {}, "/tmp/calib/sphere")
    if which in ("torus", "all"):
        run("torus", {}, "/tmp/calib/torus")
    if which in ("moon", "all"):
        run(
            "moon2d",
            {"s_count": 1000, "g_count": 2500, "queries_per_iter": 600, "iterations": 1500, "sigma_k": 30},
            "/tmp/calib/moon",
            synthetic_extra={"count": 60, "nonuniform": True},
            grid=256,
        )

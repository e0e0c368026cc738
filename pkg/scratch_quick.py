"""Quick mid-scale sign/quality validation (scratch, not shipped)."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from sparsesdf import shapes, trainer as tr, neural_tps as ntps
from sparsesdf.geometry import normalize_cloud


def quick(kind, n=300, iters=600, seed=0):
    extra = {"nonuniform": True} if kind == "moon2d" else {}
    spec = shapes.SyntheticShapeSpec(kind, count=n, **extra)
    cloud, desc = shapes.generate_cloud(spec)
    cloud_n, tf = normalize_cloud(cloud)
    cfg = tr.TrainConfig(iterations=iters, s_count=1000, g_count=2000, queries_per_iter=600,
                         sigma_k=30, feature_dim=64, mlp1_layers=6, param_width=128,
                         lr=1e-3, seed=seed)
    t0 = time.time()
    st = tr.train(cloud_n, cfg)
    sdf_gt = shapes.analytic_sdf(desc)
    rng = np.random.default_rng(1)
    d = rng.standard_normal((3000, cloud_n.dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    res = {}
    for r in (0.3, 0.8):
        probes = d * r
        pred = np.sign(ntps.sdf_eval(st.tps_net, probes))
        gt = np.sign(sdf_gt(tf.invert(probes)))
        res[r] = float((pred == gt).mean())
    h = st.history[-1]
    print(f"{kind} seed{seed}: sign@0.3={res[0.3]:.3f} sign@0.8={res[0.8]:.3f} cd={h['cd']:.4f} "
          f"surf={h['surf']:.5f} pull={h['pull']:.4f} flip={st.sign_flipped} "
          f"({(time.time()-t0)/60:.1f}min)", flush=True)


if __name__ == "__main__":
    for arg in sys.argv[1:]:
        parts = arg.split(":")
        kind = parts[0]
        seed = int(parts[1]) if len(parts) > 1 else 0
        quick(kind, n=60 if kind == "moon2d" else 300, seed=seed)

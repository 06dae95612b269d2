"""Exploratory calibration for the end-to-end directional claim (not shipped)."""
import time
import warnings

import numpy as np

import sotalign as s

warnings.simplefilter("ignore")


def evaluate(z_img, z_txt):
    return s.retrieval_recall(z_img, z_txt, None, [1]).mean_r1


def run(seed, alpha, steps, lr, batch_u, d, init, teacher_kind="cca", div_kind="klot",
        n_pairs=200, n_unpaired=5000, noise=0.3, d_prime=None):
    data = s.generate_platonic(s.SynthConfig(
        latent_dim=16, d_x=48, d_y=32, n_pairs=n_pairs, n_unpaired=n_unpaired,
        n_heldout=500, noise_std=noise, seed=seed))
    norm = s.l2_normalize_rows
    paired = s.PairedDataset(norm(data.paired_x), norm(data.paired_y))
    pool = s.UnpairedPool(norm(data.unpaired_x), norm(data.unpaired_y))
    ho_x, ho_y = norm(data.heldout_x), norm(data.heldout_y)

    cfg = s.TrainConfig(
        alpha=alpha, div=s.DivergenceSpec(div_kind, 0.05, 0.01), n_steps=steps,
        lr_max=lr, weight_decay=1e-5, n_pair_batch=10_000,
        n_unpaired_x=batch_u, n_unpaired_y=batch_u, d=d, seed=seed, init=init)
    t0 = time.time()
    tkw = {"d_prime": d_prime} if d_prime else None
    report = s.train_sotalign(paired, pool, teacher_kind, cfg, teacher_kwargs=tkw)
    wall = time.time() - t0
    mean_r1 = evaluate(report.aligner.project_x(ho_x), report.aligner.project_y(ho_y))
    teacher_r1 = evaluate(report.teacher.transform_x(ho_x), report.teacher.transform_y(ho_y))
    return mean_r1, teacher_r1, wall, report


if __name__ == "__main__":
    import sys
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
    lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
    batch_u = int(sys.argv[3]) if len(sys.argv) > 3 else 128
    d = int(sys.argv[4]) if len(sys.argv) > 4 else 32
    init = sys.argv[5] if len(sys.argv) > 5 else "gaussian"
    for seed in (0, 1):
        base, teach, wall, _ = run(seed, 0.0, steps, lr, batch_u, d, init)
        line = f"seed {seed}: teacher {teach:.1f} | alpha=0 {base:.1f} ({wall:.0f}s)"
        for alpha in (1e-3, 1e-4, 1e-5):
            r1, _, wall, _ = run(seed, alpha, steps, lr, batch_u, d, init)
            line += f" | a={alpha:g} {r1:.1f} ({wall:.0f}s)"
        print(line, flush=True)

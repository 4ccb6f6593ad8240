"""Oracle calibration run for the acceptance benchmark.

Runs the acceptance config over master seeds 0..9 and prints the statistics
the thresholds in configs/acceptance_thresholds.cfg were chosen from.
"""

import argparse
import tempfile

import numpy as np

from lmclab.harness.config import load_config
from lmclab.harness.metrics import harmonic_mean
from lmclab.harness.runner import (
    finetune_checkpoint,
    make_task,
    mergetune_checkpoint,
    pretrain_checkpoint,
    run_experiment,
    split_accuracies,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/acceptance.cfg")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    base = load_config(args.config)
    zs_min, drops, gaps, lin_gaps, b12, b32 = [], [], [], [], [], []
    for seed in range(args.seeds):
        cfg = base.with_overrides({"master_seed": seed})
        with tempfile.TemporaryDirectory() as out:
            r = run_experiment(cfg, out)
        zs, ft, mt, lin = (r.row(m) for m in ("zeroshot", "finetuned", "mergetune", "linear(alpha=0.5)"))
        zs_min.append(min(zs.base_acc, zs.novel_acc))
        drops.append(zs.novel_acc - ft.novel_acc)
        gaps.append(mt.hm - ft.hm)
        lin_gaps.append(mt.hm - lin.hm)
        b12.append(r.barriers["zeroshot_to_finetuned"])
        b32.append(r.barriers["mergetune_to_finetuned"])
        print(f"seed {seed}: zs_min {zs_min[-1]:.3f} drop {drops[-1]:.3f} "
              f"hm(mt)-hm(ft) {gaps[-1]:.3f} hm(mt)-hm(lin) {lin_gaps[-1]:+.3f} "
              f"barrier w1->w2 {b12[-1]:.3g} ours->w2 {b32[-1]:.3g}")
    print(f"min zero-shot accuracy {min(zs_min):.3f}")
    print(f"novel drop: min {min(drops):.3f} median {np.median(drops):.3f}")
    print(f"hm(mt) - hm(ft): min {min(gaps):.3f} median {np.median(gaps):.3f}")
    print(f"hm(mt) >= hm(linear 0.5) on {sum(g >= 0 for g in lin_gaps)}/{len(lin_gaps)} seeds")
    print(f"barriers w1->w2 max {max(b12):.3g}; ours->w2 max {max(b32):.3g}")

    # over-merging trajectory: HM after every MergeTune epoch from 10 to 100
    worst = 0.0
    for seed in range(5):
        cfg = base.with_overrides({"master_seed": seed, "mergetune.optimizer.epochs": 100})
        tp = make_task(cfg)
        w1 = pretrain_checkpoint(cfg, tp)
        w2 = finetune_checkpoint(cfg, tp, w1)
        hms = []

        def on_epoch(epoch, w):
            if epoch + 1 >= 10:
                hms.append(harmonic_mean(*split_accuracies(cfg, w1.spec, w, tp)))

        mergetune_checkpoint(cfg, tp, w1, w2, on_epoch_end=on_epoch)
        worst = max(worst, float(np.max(np.maximum.accumulate(hms) - hms)))
    print(f"largest HM drop below running max, epochs 10..100: {worst:.4f}")


if __name__ == "__main__":
    main()

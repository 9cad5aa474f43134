#!/usr/bin/env python3
"""End-to-end 1-D transport experiment with the periodic ReLU model.

The workflow mirrors configs/transport_1d.json: sample the projection cache
over the box, generate Gram-march trajectories, train the control field with
a trajectory-loss warmup followed by joint annealed stages, then solve and
evaluate fresh random initial parameters against the shifted truth.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pdecontrol import pipeline
from pdecontrol.config import load_config

WARMUP = [(1e-2, 1200), (1e-3, 1200), (1e-4, 800)]  # trajectory loss only
JOINT = [(3e-4, 3000), (1e-4, 3000)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs", "transport_1d.json"))
    ap.add_argument("--out", default="out/transport_1d")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config, out_dir=args.out, seed=args.seed)
    print("materializing test initials as anchors...")
    pipeline.cmd_fit_initial(cfg)
    print("assembling projection cache...")
    print(pipeline.cmd_sample_gram(cfg))
    print("generating trajectories...")
    print(pipeline.cmd_gen_trajectories(cfg))
    resume = False
    for lr, steps in WARMUP:
        stats = pipeline.cmd_train_control(
            cfg, resume=resume, pairs_only=True,
            train_overrides={"lr": lr, "max_steps": steps, "batch_size": 0},
        )
        resume = True
        print(f"warmup lr={lr:g}: l_total={stats['final_loss']:.3e}")
    for lr, steps in JOINT:
        stats = pipeline.cmd_train_control(cfg, resume=True, train_overrides={"lr": lr, "max_steps": steps})
        print(f"joint lr={lr:g}: l_total={stats['final_loss']:.3e}")
    for k in range(cfg.raw["initials"]["count"]):
        pipeline.cmd_solve(cfg, anchor_index=k)
        stats = pipeline.cmd_eval(cfg, anchor_index=k)
        print(f"anchor {k}: max rel err {stats['rel_err_max']:.4f}")


if __name__ == "__main__":
    main()

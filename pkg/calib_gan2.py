"""Sweep training configs; report JSD trajectories."""
import json
import sys
import time

from cvnnlab.experiments import (
    GanConfig, SpiralConfig, _GanHarness, evaluate_jsd, sample_target,
)

name = sys.argv[1]
lr = float(sys.argv[2])
sched = sys.argv[3]
b2 = float(sys.argv[4])
horizon = int(sys.argv[5]) if len(sys.argv) > 5 else 2000

CHECKPOINTS = [c for c in [500, 1000, 1500, 2000, 3000] if c <= horizon]
SEEDS = [0, 1, 2, 3]

target = sample_target(SpiralConfig(seed=0))
out = []
for seed in SEEDS:
    for mode, ctor in (("cvnn", GanConfig.cvnn), ("rvnn", GanConfig.rvnn)):
        cfg = ctor(steps=horizon, seed=seed, lr=lr, lr_schedule=sched,
                   betas=(0.8, b2))
        h = _GanHarness(cfg, target)
        traj = {}
        for step in range(1, horizon + 1):
            h.train_step()
            if step in CHECKPOINTS:
                jm, jp = evaluate_jsd(h.generate(10000), target)
                traj[step] = (round(jm, 5), round(jp, 5))
        out.append({"mode": mode, "seed": seed, "traj": traj})
        print(name, json.dumps(out[-1]), flush=True)

with open(f"/tmp/calib_{name}.json", "w") as fh:
    json.dump(out, fh)

"""Calibration sweep: JSD trajectory vs training steps for both modes."""
import json
import time

import numpy as np

from cvnnlab.experiments import (
    GanConfig, SpiralConfig, _GanHarness, evaluate_jsd, sample_target,
)

CHECKPOINTS = [250, 500, 750, 1000, 1500, 2000, 2500]
SEEDS = [0, 1, 2, 3]

results = []
target = sample_target(SpiralConfig(seed=0))
t_start = time.time()
for seed in SEEDS:
    for mode, ctor in (("cvnn", GanConfig.cvnn), ("rvnn", GanConfig.rvnn)):
        cfg = ctor(steps=max(CHECKPOINTS), seed=seed)
        h = _GanHarness(cfg, target)
        traj = {}
        t0 = time.time()
        for step in range(1, max(CHECKPOINTS) + 1):
            h.train_step()
            if step in CHECKPOINTS:
                s = h.generate(10000)
                jm, jp = evaluate_jsd(s, target)
                traj[step] = (round(jm, 5), round(jp, 5))
        results.append({"mode": mode, "seed": seed, "traj": traj,
                        "secs": round(time.time() - t0, 1)})
        print(json.dumps(results[-1]), flush=True)

with open("/tmp/calib_gan.json", "w") as fh:
    json.dump(results, fh, indent=1)
print("total", time.time() - t_start)

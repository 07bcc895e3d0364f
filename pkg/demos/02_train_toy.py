"""Train the tiny U-Net on two-tone edge images and look at its samples.

The full toy preset runs 5000 iterations (about 17 minutes on one CPU core);
pass a smaller count as the first argument for a quick look, e.g.

    python3 demos/02_train_toy.py 500
"""

import sys
from pathlib import Path

import torch

from edgediff.config import preset
from edgediff.data import make_grid, save_image
from edgediff.experiments import run_training
from edgediff.reverse_process import generate
from edgediff.trainer import smoothed

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
out = Path(__file__).with_name("toy_run")

cfg = preset("toy").replace(trainer={"iterations": iterations, "log_every": 1,
                                     "checkpoint_every": max(1, iterations // 5)})
print(f"training {cfg.name} for {iterations} iterations into {out}")
state = run_training(cfg, out)

losses = [v for _, v in state.history]
curve = smoothed(losses, 100)
print(f"smoothed loss: first 100 {curve[min(99, len(curve) - 1)]:.4f}, last {curve[-1]:.4f}")

# Sampling runs all 500 reverse steps.
sched, hcfg = cfg.schedule.build()
x = generate(state.sampling_model, 16, sched, hcfg, generator=torch.Generator().manual_seed(0))
two_tone = ((x.abs() - 1).abs() <= 0.2).double().mean().item()
print(f"{two_tone:.1%} of sampled pixels lie within 0.2 of -1 or +1")
save_image(make_grid(x.float(), ncol=4), out / "samples.png")
print("wrote", out / "samples.png")

"""How much noise each pixel receives under the hybrid forward process.

Flat regions get the usual DDPM noise level sqrt(1 - alpha_bar_t); pixels on
an edge get less until the transition function reaches 1, after which the
process is plain isotropic diffusion.
Writes noise_fields.png next to this script.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from edgediff.data import make_toy_edges
from edgediff.edge_field import gradient_magnitude, hybrid_noise_coefficient
from edgediff.forward_process import sample_forward
from edgediff.schedule import HybridNoiseConfig, make_beta_schedule, transition_value

sched = make_beta_schedule(500)
cfg = HybridNoiseConfig()  # linear tau reaching 1 at t = 250, lambda from 1e-4 to 1e-1

x0 = make_toy_edges(1, 32, rng=3).double()
grad = gradient_magnitude(x0)
print(f"edge pixels: {(grad > 0).double().mean().item():.1%} of the image")

steps = [10, 60, 150, 249, 400]
fig, axes = plt.subplots(3, len(steps), figsize=(2.2 * len(steps), 6.6))
for col, t in enumerate(steps):
    sigma = hybrid_noise_coefficient(grad, t, sched, cfg)[0, 0]
    iso = (1 - sched.alpha_bar[t]) ** 0.5
    # ratio < 1 marks suppressed noise; it is 1 everywhere once tau(t) = 1
    ratio = sigma / iso
    x_t = sample_forward(x0, t, sched, cfg, generator=torch.Generator().manual_seed(t)).x_t[0, 0]
    print(f"t={t:3d}  tau={transition_value(t, cfg, sched.T):.2f}  min sigma/iso={ratio.min().item():.3f}")
    axes[0, col].imshow(ratio, vmin=0, vmax=1, cmap="magma")
    axes[0, col].set_title(f"t={t}")
    axes[1, col].imshow(x_t, cmap="gray", vmin=-1.5, vmax=1.5)
    iso_sample = sample_forward(x0, t, sched, HybridNoiseConfig(transition_kind="constant"),
                                generator=torch.Generator().manual_seed(t)).x_t[0, 0]
    axes[2, col].imshow(iso_sample, cmap="gray", vmin=-1.5, vmax=1.5)
for ax in axes.flat:
    ax.set_xticks([])
    ax.set_yticks([])
axes[0, 0].set_ylabel("sigma / isotropic")
axes[1, 0].set_ylabel("hybrid x_t")
axes[2, 0].set_ylabel("DDPM x_t")
out = Path(__file__).with_name("noise_fields.png")
fig.tight_layout()
fig.savefig(out, dpi=100)
print("wrote", out)

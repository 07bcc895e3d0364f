"""Stroke-guided generation: k-means paintings pushed through a hijacked chain.

Needs a checkpoint, by default the one 02_train_toy.py leaves behind:

    python3 demos/03_stroke_guided.py [checkpoint.pt]

The later the hijack point, the more noise the guide receives and the less
the output is tied to it.
"""

import sys
from pathlib import Path

import torch

from edgediff.data import make_grid, make_toy_edges, save_image
from edgediff.sdedit import hijack_step, make_stroke_painting, sdedit_generate
from edgediff.trainer import load_checkpoint

here = Path(__file__).parent
ckpt = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "toy_run" / "final.pt"
state = load_checkpoint(ckpt)
sched, cfg = state.config.schedule.build()

# Guides: quantize held-out images to K colors. Toy images already have two
# gray levels, so with K=8 the paintings equal the originals.
images = make_toy_edges(8, state.config.data.resolution, rng=999)
guide = make_stroke_painting(images, K=8, rng=0)

rows = [guide.painting.float()]
for frac in (0.3, 0.55, 0.8):
    x = sdedit_generate(state.sampling_model, guide, frac, sched, cfg, generator=torch.Generator().manual_seed(1))
    dist = (x - guide.painting.double()).flatten(1).norm(dim=1).mean().item()
    print(f"hijack {frac:.2f} (step {hijack_step(frac, sched.T)}): mean L2 to guide {dist:.3f}")
    rows.append(x.float())

save_image(make_grid(torch.cat(rows), ncol=len(images)), here / "stroke_guided.png")
print("wrote", here / "stroke_guided.png", "(rows: guide, hijack 0.3, 0.55, 0.8)")

"""Which frequencies does a model learn first?

Each checkpoint of a run is sampled once; samples and training data are then
blurred at increasing sigma and compared with a Frechet distance on fixed
random-projection features. Low-sigma columns measure fine detail, high-sigma
columns only coarse structure.

    python3 demos/04_frequency_sweep.py [run_dir]
"""

import sys
from pathlib import Path

from edgediff.evaluation import frequency_sweep, plot_heatmap, write_table
from edgediff.experiments import dataset_from_config
from edgediff.trainer import load_checkpoint

here = Path(__file__).parent
run = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "toy_run"
ckpts = sorted(run.glob("ckpt_*.pt"))
if not ckpts:
    sys.exit(f"no checkpoints in {run}; run 02_train_toy.py first")

cfg = load_checkpoint(ckpts[0]).config
data = dataset_from_config(cfg)
rows = frequency_sweep(ckpts, data, sigmas=[0, 1, 2, 4, 8], samples_per_point=32)

print("step   " + "  ".join(f"s={s:<4g}" for s in (0, 1, 2, 4, 8)))
for i in range(0, len(rows), 5):
    print(f"{rows[i]['checkpoint_step']:5d}  " + "  ".join(f"{r['distance']:6.3f}" for r in rows[i:i + 5]))

write_table(rows, here / "sweep.csv")
plot_heatmap(rows, here / "sweep.png")
print("wrote", here / "sweep.csv", "and", here / "sweep.png")

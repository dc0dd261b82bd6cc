"""Train BAM+CM through the command line, then rank bands by their mask weight.

Run: python demos/04_band_mask.py [workdir]
"""

import csv
import sys
import tempfile
from pathlib import Path

from _scene import informative_scene
from bacnn import cli
from bacnn.data import save_cube, save_labels

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
cube, labels = informative_scene()
save_cube(cube, work / "scene.hsc")
save_labels(labels, work / "scene.lbl")

run = work / "run"
cli.main(["train", "--cube", str(work / "scene.hsc"), "--labels", str(work / "scene.lbl"),
          "--fraction", "0.3", "--epochs", "30", "--batch", "32", "--lr", "1e-3", "--out", str(run)])
cli.main(["eval", "--run", str(run)])
cli.main(["export-mask", "--run", str(run)])

with open(run / "mask.csv") as fh:
    rows = sorted(csv.DictReader(fh), key=lambda r: -float(r["weight"]))
# the class signal lives in bands 1-6; a 30-epoch run moves the mask only a
# little from its initial state, so expect a weak ranking here
print("bands by weight:")
for r in rows:
    print(f"  band {r['band']:>2}  {float(r['weight']):.3f}")

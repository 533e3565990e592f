"""End-to-end rate-distortion curve demo.

Generates a small synthetic scene set, then trains one edge-masked codec
per confidence threshold (rate points come from varying the threshold at
a fixed trade-off weight) and writes the RD table plus an SVG scatter.

Usage: python scripts/run_rd_curve.py [workdir]
"""

import subprocess
import sys
from pathlib import Path

workdir = Path(sys.argv[1] if len(sys.argv) > 1 else "rd_demo")
workdir.mkdir(parents=True, exist_ok=True)
data = workdir / "scenes"

steps = [
    ["icmlab", "datagen", "--out", str(data), "--count", "8",
     "--size", "64x64", "--seed", "7", "--objects", "2..5"],
    ["icmlab", "rd-curve", "--alpha-list", "0.98,0.93,0.48",
     "--data", str(data), "--lambda", "0.05", "--epochs", "25", "--seed", "0",
     "--out", str(workdir / "rd_points.csv"), "--svg", str(workdir / "rd_points.svg")],
]
for cmd in steps:
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)

print(f"\nwrote {workdir / 'rd_points.csv'} and {workdir / 'rd_points.svg'}")
print((workdir / "rd_points.csv").read_text())

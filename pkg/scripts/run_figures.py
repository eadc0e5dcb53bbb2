"""Regenerate the CSV tables behind Figs. 3-7 at desk scale.

Usage::

    python3 scripts/run_figures.py                 # every figure
    python3 scripts/run_figures.py fig3a fig7      # a subset
    python3 scripts/run_figures.py --paper-scale   # 20,000 / 2,000 samples

Each config in ``scripts/configs`` becomes one ``fedisac sweep`` (or
``prune-study``) invocation writing to ``results/<config name>/``.  Set
``FEDISAC_WORKERS`` to run sweep points in parallel.
"""
from __future__ import annotations

import argparse
import subprocess
import sys
import time
from pathlib import Path

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"


def run(config: Path, out_root: Path, paper_scale: bool) -> float:
    out = out_root / config.stem
    cmd = [sys.executable, "-m", "fedisac.cli", "sweep", "--config", str(config), "--out-dir", str(out)]
    if config.stem.startswith("fig7"):
        cmd[3] = "prune-study"
    if paper_scale:
        cmd.append("--paper-scale")
    t0 = time.perf_counter()
    subprocess.run(cmd, check=True)
    return time.perf_counter() - t0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("figures", nargs="*", help="config name prefixes, e.g. fig3a fig6")
    p.add_argument("--out", default="results", help="output root directory")
    p.add_argument("--paper-scale", action="store_true")
    args = p.parse_args(argv)
    configs = sorted(CONFIGS.glob("*.json"))
    if args.figures:
        configs = [c for c in configs if any(c.stem.startswith(f) for f in args.figures)]
    if not configs:
        p.error("no matching configs")
    for c in configs:
        dt = run(c, Path(args.out), args.paper_scale)
        print(f"{c.stem}: {dt:.0f} s -> {Path(args.out) / c.stem}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

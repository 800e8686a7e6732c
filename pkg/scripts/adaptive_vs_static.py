#!/usr/bin/env python3
"""Adaptive vs static force limits under the scripted operator.

Runs the demo-mode oracle for N episodes under each clamp regime and
prints success rate and mean cycle time; the adaptive clamp should win
on both.  Per-episode rows go to CSV for plotting.

Usage: python scripts/adaptive_vs_static.py [n_episodes] [out.csv]
"""

import sys
import warnings
from pathlib import Path

import numpy as np

from pegbench.hil import ScriptedOracle
from pegbench.mpnet import default_insertion_net, traverse
from pegbench.sim import InsertionEnv, TaskGeometry, default_limits

N = int(sys.argv[1]) if len(sys.argv) > 1 else 50
OUT = Path(sys.argv[2] if len(sys.argv) > 2 else "adaptive_vs_static.csv")


def main() -> None:
    warnings.simplefilter("ignore")
    geom = TaskGeometry()
    net = default_insertion_net(geom)
    rows = []
    for regime in ("adaptive", "static"):
        env = InsertionEnv(geom, limits=default_limits(static=regime == "static"))
        oracle = ScriptedOracle(geom, mode="demo")
        succ, cycles = [], []
        for ep in range(N):
            env.reset(ep)
            oracle.begin_episode(ep)
            rec = traverse(net, env, gate=oracle, mode="demo", episode=ep)
            succ.append(rec.outcome)
            cyc = rec.cycle_steps() / 10.0
            if rec.outcome:
                cycles.append(cyc)
            rows.append((regime, ep, int(rec.outcome), cyc))
        print(
            f"{regime:>9}: success {np.mean(succ):.0%}  "
            f"mean cycle {np.mean(cycles):.2f} s over {N} episodes"
        )
    with open(OUT, "w") as f:
        f.write("regime,episode,success,cycle_s\n")
        for r in rows:
            f.write(",".join(map(str, r)) + "\n")
    print(f"per-episode rows -> {OUT}")


if __name__ == "__main__":
    main()

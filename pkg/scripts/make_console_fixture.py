#!/usr/bin/env python3
"""Regenerate the console test fixture: a 50-episode oracle run's metrics
JSONL, exactly as the runtime writes it during training/serving.

Usage: python scripts/make_console_fixture.py [out.jsonl]
"""

import json
import sys
import warnings
from pathlib import Path

from pegbench.hil import MetricsWindow, ScriptedOracle, update_metrics
from pegbench.mpnet import default_insertion_net, traverse
from pegbench.sim import InsertionEnv, TaskGeometry

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else
           "frontend/test/fixtures/metrics.jsonl")


def main() -> None:
    warnings.simplefilter("ignore")
    geom = TaskGeometry()
    env = InsertionEnv(geom)
    oracle = ScriptedOracle(geom, mode="demo")
    net = default_insertion_net(geom)
    window = MetricsWindow()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w") as f:
        for ep in range(50):
            env.reset(ep)
            oracle.begin_episode(ep)
            rec = traverse(net, env, gate=oracle, mode="demo", episode=ep)
            window = update_metrics(window, rec)
            f.write(json.dumps({
                "episode": ep,
                "success": rec.outcome,
                "cycle_steps": rec.cycle_steps(),
                "intervention_ratio": rec.intervention_ratio(),
                "success_rate": window.success_rate,
                "cycle_time": window.cycle_time,
                "intervention_rate": window.intervention_rate,
            }) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()

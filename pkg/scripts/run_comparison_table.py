#!/usr/bin/env python3
"""Train and compare the prior-knowledge variants at a matched budget.

Produces the main comparison table (success, cycle time, oracle effort,
update count).  Expect a couple of hours at the default budget on a
small machine; pass a smaller episode budget for a quick directional
look.

Usage: python scripts/run_comparison_table.py [episodes] [out_dir]
"""

import dataclasses
import sys
import warnings
from pathlib import Path

from pegbench.config import RLHyperparams, RunConfig
from pegbench.runtime import format_ablation_table, run_ablation_suite

EPISODES = int(sys.argv[1]) if len(sys.argv) > 1 else 250
OUT = Path(sys.argv[2] if len(sys.argv) > 2 else "runs/comparison")

VARIANTS = ["full", "no_interventions", "no_demos", "no_vision", "no_priors",
            "hg_dagger", "random"]


def main() -> None:
    warnings.simplefilter("ignore")
    base = RunConfig(
        seed=0,
        rl=RLHyperparams(batch_size=128, utd_ratio=2),
        train_episodes=EPISODES,
        eval_episodes=20,
    )
    rows = run_ablation_suite(base, VARIANTS, OUT)
    print()
    print(format_ablation_table(rows))


if __name__ == "__main__":
    main()

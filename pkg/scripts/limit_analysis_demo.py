#!/usr/bin/env python3
"""Time-response and cobweb data for the adaptive force limit.

Writes CSV traces for a stable and an unstable configuration (both with
a 2 N design equilibrium under a 7 N ceiling) and prints their
stability reports.  Plot step vs f_meas for the time response; plot
(f_t, f_{t+1}) pairs against the identity line for the cobweb.

Usage: python scripts/limit_analysis_demo.py [out_dir]
"""

import sys
from pathlib import Path

from pegbench.compliance import (
    alpha_eval,
    check_stability,
    config_for_equilibrium,
    simulate_recurrence,
)

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "limit_analysis")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for label, alpha_min in (("stable", 0.2), ("unstable", 0.1)):
        cfg = config_for_equilibrium(2.0, 7.0, alpha_min, axis_label=label)
        rep = check_stability(cfg)
        print(
            f"{label}: theta={cfg.theta:.6f} fixed_point={rep.fixed_point:.6f} "
            f"margin={rep.margin:.4f} -> {'stable' if rep.stable else 'unstable'}"
        )
        seq = simulate_recurrence(cfg, 0.0, 60)
        path = OUT / f"{label}.csv"
        with open(path, "w") as f:
            f.write("step,f_meas,f_lim\n")
            for t, fm in enumerate(seq):
                f.write(f"{t},{fm:.9f},{alpha_eval(fm, cfg) * cfg.f_max:.9f}\n")
        print(f"  trace -> {path}")


if __name__ == "__main__":
    main()

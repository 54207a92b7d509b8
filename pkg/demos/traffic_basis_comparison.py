"""Compare a Chebyshev parameterization with the partition baseline on traffic assignment.

Both maps use ten features per link, so the lower-level memory matches. The
script prints the tail-averaged upper loss, the reference loss at the true
capacities and the mean squared gap to the exact equilibrium flows.

    python3 demos/traffic_basis_comparison.py
"""

from pathlib import Path

from csbo.harness import load_config, run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

for name in ("traffic_chebyshev10", "traffic_indicator10"):
    config = load_config(CONFIGS / f"{name}.cfg").with_(n_trials=3)
    report = run_experiment(config)
    print(f"{name:22s} test {report.metric('test_loss'):.5f}  "
          f"reference {report.metric('reference_loss'):.5f}  "
          f"delta_y {report.metric('delta_y'):.2e}  delta_x {report.metric('delta_x'):.2e}")

"""Compare the four rotation schemes on a few seeded trials of the default scenario.

Usage: python3 demos/compare_schemes.py [trials]
"""

import sys

from rotirs import load_config
from rotirs.harness import run_trials, summarize


def main(trials=4):
    config = load_config()
    results = run_trials(config, trials)
    print(f"{'scheme':>9} {'mean sum rate':>14} {'stderr':>8}")
    for row in summarize(results):
        print(f"{row['scheme']:>9} {row['mean']:>14.3f} {row['stderr']:>8.3f}")
    dual = [r for r in results if r.scheme == "dual"]
    print("dual AO trace, trial 0:", " ".join(f"{x:.2f}" for x in dual[0].trace))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 4)

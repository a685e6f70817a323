"""Split the single-user dual-rotation gain into column power and combining efficiency.

As the array gets electrically closer (larger xi) the column-power gain
shrinks while the efficiency gain from rotation grows.

Usage: python3 demos/decomposition.py
"""

import numpy as np

from rotirs import load_config
from rotirs.analysis import decomposition_sweep


def main():
    rows = decomposition_sweep(load_config(), np.geomspace(0.071, 0.707, 6))
    print(f"{'xi':>6} {'G_p':>7} {'G_beta':>7} {'eta':>7} {'beta_fix':>9} {'beta_dual':>9}")
    for r in rows:
        print(f"{r['xi']:>6.3f} {r['column_gain']:>7.2f} {r['efficiency_gain']:>7.4f} "
              f"{r['dual_gain']:>7.2f} {r['efficiency_fixed']:>9.3f} {r['efficiency_dual']:>9.3f}")


if __name__ == "__main__":
    main()

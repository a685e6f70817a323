"""Random-phase and best-of-8 reflected power against the coherent ceiling and the N floor.

Usage: python3 demos/power_bounds.py
"""

from rotirs import load_config
from rotirs.analysis import power_bounds_suite


def main():
    config = load_config()
    out = power_bounds_suite(config, geometries=5, sizes=(9, 49), draws=200, seed=0)
    print(f"largest random-phase power / coherent ceiling: {out['max_ceiling_ratio']:.3f}")
    print(f"smallest best-of-8 power / N * column power:   {out['min_floor_ratio']:.2f}")


if __name__ == "__main__":
    main()

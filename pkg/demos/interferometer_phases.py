"""Recover first-pulse phase offsets from a synthetic four-peak interferogram."""
import math

import numpy as np

from ionpulse.interferometry import pairwise_phases, synth_interferogram


def main(seed=4):
    steps = [0.0, 0.74 * math.pi, 0.12 * math.pi, 0.0, 0.0]
    dx = np.random.default_rng(seed).uniform(0, 786.0, 100)
    data = synth_interferogram(steps, dx, 786.0, 0.02, seed)
    for r in pairwise_phases(data):
        flag = " (line)" if r.degenerate else ""
        print(f"peaks {r.pair}: |dphi| = {r.dphi_abs / math.pi:.3f} pi{flag}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Noise sweep: direct Monte Carlo capsize rates vs the action prediction.

For each noise amplitude, counts capsize transitions over a long run and
fits log(rate) against 1/eps^2; the slope should approach minus the
minimal action (0.25 for the default model).
"""
import sys

import numpy as np

import capsize_tst as ct

EPS_LIST = (0.35, 0.4, 0.45, 0.5)


def main():
    total_time = float(sys.argv[1]) if len(sys.argv) > 1 else 1e5
    region_a = ct.disk_region("A", (0.0, 0.0), 0.2)
    region_b = ct.band_exterior_region("B", 1.5)
    rates = []
    for eps in EPS_LIST:
        system = ct.toy_roll_system(ct.RollModelParams(1.0, 1.0, 0.5, eps))
        rec = ct.sample_transitions(system, region_a, region_b, total_time,
                                    dt=1e-3, seed=1000 + int(eps * 100),
                                    max_segments=0)
        rates.append(rec.rate)
        print(f"eps = {eps:.2f}: {rec.n_transitions:6d} transitions, "
              f"rate = {rec.rate:.5f} +- {rec.rate_stderr:.5f}")
    slope, intercept = np.polyfit(1.0 / np.asarray(EPS_LIST) ** 2,
                                  np.log(rates), 1)
    system = ct.toy_roll_system(ct.RollModelParams(1.0, 1.0, 0.5, 0.4))
    s_star = ct.minimize_action(system, (0.0, 0.0), (1.5, 0.0)).value
    print(f"fitted slope {slope:.4f}; minimal action {s_star:.4f} "
          f"(prediction: slope = -{s_star:.4f})")


if __name__ == "__main__":
    main()

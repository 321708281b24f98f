#!/usr/bin/env python3
"""Render the roll-plane risk picture from saved pipeline artifacts.

Usage: plot_figure2.py [artifact_dir] [output.png]

Shading: density of reactive (capsizing) trajectories from the Monte
Carlo histogram; streamlines: deterministic roll dynamics; white line:
action-minimizing capsize path and its mirror image; green/red patches:
upright neighbourhood A and unsafe set B.
"""
import json
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_field(base):
    data = np.loadtxt(base + ".csv", delimiter=",", skiprows=1)
    info = json.load(open(base + ".json"))
    nth, nv = info["shape"]
    th = data[:, 0].reshape(nth, nv)
    vv = data[:, 1].reshape(nth, nv)
    vals = data[:, 2].reshape(nth, nv)
    return th, vv, vals


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "out/figure2"
    target = sys.argv[2] if len(sys.argv) > 2 else out_dir + "/figure2.png"

    th, vv, hist = load_field(f"{out_dir}/mc_reactive_histogram")
    inst = np.loadtxt(f"{out_dir}/instanton.csv", delimiter=",", skiprows=1)

    fig, ax = plt.subplots(figsize=(7.5, 5.0))
    shade = np.sqrt(hist / hist.max())
    ax.pcolormesh(th, vv, shade, cmap="Greys", shading="auto",
                  rasterized=True)

    # deterministic vector field (omega0^2 = alpha = 1, delta = 0.5)
    ths = np.linspace(th.min(), th.max(), 40)
    vs = np.linspace(vv.min(), vv.max(), 40)
    TH, VV = np.meshgrid(ths, vs)
    U = VV
    W = -0.5 * VV - TH + TH**3
    ax.streamplot(TH, VV, U, W, color="tab:blue", density=1.0,
                  linewidth=0.5, arrowsize=0.8)

    for sign in (1.0, -1.0):
        ax.plot(sign * inst[:, 1], sign * inst[:, 2], color="white", lw=2.5)
        ax.plot(sign * inst[:, 1], sign * inst[:, 2], color="black", lw=0.5)

    ax.add_patch(plt.Circle((0, 0), 0.2, color="tab:green", alpha=0.6))
    ax.axvspan(1.5, th.max(), color="tab:red", alpha=0.25)
    ax.axvspan(th.min(), -1.5, color="tab:red", alpha=0.25)

    ax.set_xlim(th.min(), th.max())
    ax.set_ylim(vv.min(), vv.max())
    ax.set_xlabel(r"roll angle $\theta$")
    ax.set_ylabel(r"roll rate $\dot\theta$")
    ax.set_title("reactive density, roll flow and most likely capsize paths")
    fig.tight_layout()
    fig.savefig(target, dpi=160)
    print("wrote", target)


if __name__ == "__main__":
    main()

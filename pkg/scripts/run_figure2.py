#!/usr/bin/env python3
"""Run the full roll-plane risk pipeline on the default configuration.

Equivalent to `capsize-tst run scripts/figure2_config.json`; afterwards
`scripts/plot_figure2.py` renders the artifacts.
"""
import os
import sys

from capsize_tst.cli import load_config, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else None
    cfg = load_config(os.path.join(HERE, "figure2_config.json"))
    manifest = run_experiment(cfg, out_dir=out)
    print(f"wrote {sum(len(a['files']) for a in manifest['artifacts'])} files "
          f"to {out or cfg.output_dir} in {manifest['wall_time_s']:.0f}s")


if __name__ == "__main__":
    main()

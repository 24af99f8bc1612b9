"""Plot mean particle energy from one or more run directories.

    python3 tools/plot_energy.py out/a_apic out/b_polypic -o energy.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from hybridpic.diagnostics import load_run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", help="run directories holding diagnostics.csv and run.json")
    ap.add_argument("-o", "--output", default="energy.png")
    args = ap.parse_args(argv)
    fig, ax = plt.subplots(figsize=(7, 4))
    for d in args.runs:
        meta, diag, _ = load_run(d)
        ax.plot(diag["time"], diag["mean_energy"], label=f"{meta['scheme']} ({Path(d).name})")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean particle energy (J)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print("wrote", args.output)


if __name__ == "__main__":
    main()

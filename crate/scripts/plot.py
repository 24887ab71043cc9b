"""Render the CSV tables written by `bisac` into PNG figures.

Usage: python scripts/plot.py RESULTS_DIR [OUT_DIR]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def read(path):
    return pd.read_csv(path, comment="#")


def peb_maps(src, dst):
    for path in sorted(src.glob("peb_map_z*.csv")):
        t = read(path)
        fig, ax = plt.subplots(figsize=(5, 4))
        sc = ax.scatter(t["x"], t["y"], c=t["peb"].clip(upper=t["peb"].quantile(0.99)), s=12, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="PEB (m)")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_title(f"z = {t['z'].iloc[0]:g} m")
        fig.savefig(dst / f"{path.stem}.png", dpi=150, bbox_inches="tight")
        plt.close(fig)


def peb_cdf(src, dst):
    path = src / "peb_cdf.csv"
    if not path.exists():
        return
    t = read(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    for (n_t, z), g in t.groupby(["n_t", "z"]):
        ax.plot(g["peb"], g["cdf"], label=f"N_t={n_t}, z={z:g}")
    ax.set_xscale("log")
    ax.set_xlabel("PEB (m)")
    ax.set_ylabel("CDF")
    ax.legend()
    fig.savefig(dst / "peb_cdf.png", dpi=150, bbox_inches="tight")
    plt.close(fig)


def convergence(src, dst):
    path = src / "convergence.csv"
    if not path.exists():
        return
    t = read(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    for (gamma, method), g in t.groupby(["gamma", "method"]):
        mean = g.groupby("round")["objective"].mean()
        ax.plot(mean.index, mean.values, marker="o", label=f"{method}, Gamma={gamma:g}")
    ax.set_xlabel("outer round")
    ax.set_ylabel("objective")
    ax.legend()
    fig.savefig(dst / "convergence.png", dpi=150, bbox_inches="tight")
    plt.close(fig)


def se_curve(src, dst, name, lead, group=None):
    path = src / f"{name}.csv"
    if not path.exists():
        return
    t = read(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    keys = ["method"] if group is None else [group, "method"]
    for key, g in t.groupby(keys):
        label = key if isinstance(key, str) else ", ".join(map(str, key))
        ax.errorbar(g[lead], g["se_mean"], yerr=g["se_ci95"], marker="o", capsize=3, label=label)
    ax.set_xlabel(lead)
    ax.set_ylabel("SE (bit/s/Hz)")
    ax.legend()
    fig.savefig(dst / f"{name}.png", dpi=150, bbox_inches="tight")
    plt.close(fig)


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    src = Path(sys.argv[1])
    dst = Path(sys.argv[2]) if len(sys.argv) > 2 else src
    dst.mkdir(parents=True, exist_ok=True)
    peb_maps(src, dst)
    peb_cdf(src, dst)
    convergence(src, dst)
    se_curve(src, dst, "se_snr", "snr_db")
    se_curve(src, dst, "se_gamma", "gamma", group="n_targets")
    se_curve(src, dst, "se_nrf", "n_rf")


if __name__ == "__main__":
    main()

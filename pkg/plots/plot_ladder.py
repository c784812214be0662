#!/usr/bin/env python3
"""Ladder convergence figure: initial value Y0 of the truncated solution
against the truncation level k (log-scaled k axis)."""

import matplotlib.pyplot as plt

import figlib

COLUMNS = ["node_index", "t", "k", "mean_Y"]


def render():
    args = figlib.build_parser("ladder", __doc__).parse_args()
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.inputs:
        tab = figlib.read_table(path, COLUMNS)
        pairs = sorted({(tab["k"][i], tab["mean_Y"][i])
                        for i in range(len(tab["k"]))
                        if tab["node_index"][i] == 0})
        ax.plot([k for k, _ in pairs], [y for _, y in pairs],
                marker="s", label=path)
    ax.set_xscale("log")
    ax.set_xlabel("truncation level $k$")
    ax.set_ylabel("$Y_0^{(k)}$")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    figlib.save(fig, args.out)


if __name__ == "__main__":
    figlib.main(render)

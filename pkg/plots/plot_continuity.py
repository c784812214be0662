#!/usr/bin/env python3
"""Continuity profile figure: E[Y_{T-delta}; event] vs delta with error
bars, one series per event, log-scaled delta axis."""

import matplotlib.pyplot as plt

import figlib

COLUMNS = ["event", "delta", "mean_Y", "stderr", "n_event_paths", "k_level"]


def render():
    args = figlib.build_parser("continuity", __doc__).parse_args()
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.inputs:
        tab = figlib.read_table(path, COLUMNS)
        events = sorted(set(tab["event"]))
        for ev in events:
            idx = [i for i, e in enumerate(tab["event"]) if e == ev]
            ax.errorbar([tab["delta"][i] for i in idx],
                        [tab["mean_Y"][i] for i in idx],
                        yerr=[tab["stderr"][i] for i in idx],
                        marker="o", capsize=3, label=f"{ev} ({path})")
    ax.set_xscale("log")
    ax.set_xlabel(r"$\delta$")
    ax.set_ylabel(r"conditional mean of $Y_{T-\delta}$")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    figlib.save(fig, args.out)


if __name__ == "__main__":
    figlib.main(render)

#!/usr/bin/env python3
"""A priori bound figure: solved mean values with 2-SE bands against the
deterministic bound over time (log-scaled value axis); violating nodes are
marked."""

import matplotlib.pyplot as plt

import figlib

COLUMNS = ["node", "t", "mean_Y", "se", "bound", "violated"]


def render():
    args = figlib.build_parser("bound", __doc__).parse_args()
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in args.inputs:
        tab = figlib.read_table(path, COLUMNS)
        t, m, se = tab["t"], tab["mean_Y"], tab["se"]
        ax.fill_between(t, [a - 2 * b for a, b in zip(m, se)],
                        [a + 2 * b for a, b in zip(m, se)], alpha=0.25)
        ax.plot(t, m, label=f"mean Y ({path})")
        ax.plot(t, tab["bound"], linestyle="--", label=f"bound ({path})")
        bad = [i for i, v in enumerate(tab["violated"])
               if str(v).strip().lower() in ("true", "1", "1.0")]
        if bad:
            ax.plot([t[i] for i in bad], [m[i] for i in bad], "rx",
                    markersize=8, label=f"violations ({path})")
    ax.set_yscale("log")
    ax.set_xlabel("$t$")
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    figlib.save(fig, args.out)


if __name__ == "__main__":
    figlib.main(render)

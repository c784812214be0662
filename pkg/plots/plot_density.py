#!/usr/bin/env python3
"""Exit-time density figure: overlay of the input estimates (points with
error bars when a density_se column is present, lines otherwise), plus a
residual subplot of each input against the first one."""

import matplotlib.pyplot as plt

import figlib

COLUMNS = ["s", "density", "survival"]


def _interp(x, xs, ys):
    # plain linear interpolation without recomputing any statistic
    out = []
    for v in x:
        if v <= xs[0]:
            out.append(ys[0])
            continue
        if v >= xs[-1]:
            out.append(ys[-1])
            continue
        j = next(i for i in range(1, len(xs)) if xs[i] >= v)
        w = (v - xs[j - 1]) / (xs[j] - xs[j - 1])
        out.append((1 - w) * ys[j - 1] + w * ys[j])
    return out


def render():
    args = figlib.build_parser("density", __doc__).parse_args()
    tables = [(p, figlib.read_table(p, COLUMNS)) for p in args.inputs]
    fig, (ax, axr) = plt.subplots(
        2, 1, figsize=(6, 5.5), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]})
    ref_path, ref = tables[0]
    for path, tab in tables:
        if "density_se" in tab:
            ax.errorbar(tab["s"], tab["density"], yerr=tab["density_se"],
                        fmt=".", markersize=3, elinewidth=0.5, label=path)
        else:
            ax.plot(tab["s"], tab["density"], label=path)
        if path is not ref_path:
            interp = _interp(tab["s"], ref["s"], ref["density"])
            axr.plot(tab["s"],
                     [d - r for d, r in zip(tab["density"], interp)],
                     label=f"{path} - {ref_path}")
    axr.axhline(0.0, color="k", linewidth=0.8)
    ax.set_ylabel("exit-time density")
    axr.set_ylabel("residual")
    axr.set_xlabel("$s$")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    axr.grid(True, alpha=0.3)
    figlib.save(fig, args.out)


if __name__ == "__main__":
    figlib.main(render)

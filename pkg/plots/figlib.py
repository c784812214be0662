"""Shared plumbing for the figure scripts.

The scripts render CSV artifacts produced by the `bsdelab` CLI verbatim:
numeric series are plotted exactly as stored, never recomputed.
"""

import argparse
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")


class HeaderError(ValueError):
    """An input CSV does not carry the columns the figure kind needs."""


def build_parser(kind, doc):
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    metavar="CSV", help=f"{kind} CSV file(s)")
    ap.add_argument("--out", required=True, metavar="IMG",
                    help="output image (vector formats: .svg, .pdf)")
    return ap


def read_table(path, required):
    """Load a CSV as {column: list}; raise HeaderError naming any missing
    required column."""
    if not os.path.exists(path):
        raise HeaderError(f"{path}: file not found")
    with open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderError(f"{path}: empty CSV")
        missing = [c for c in required if c not in header]
        if missing:
            raise HeaderError(
                f"{path}: missing column(s) {', '.join(missing)}; "
                f"found {', '.join(header)}")
        rows = list(reader)
    if not rows:
        raise HeaderError(f"{path}: no data rows")
    table = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        try:
            table[name] = [float(v) for v in col]
        except ValueError:
            table[name] = col
    return table


def save(fig, out):
    fig.savefig(out, bbox_inches="tight")


def main(render):
    """Run a figure script's render(args) and map errors to exit status 2."""
    try:
        render()
    except HeaderError as e:
        print(f"input error: {e}", file=sys.stderr)
        sys.exit(2)
    sys.exit(0)

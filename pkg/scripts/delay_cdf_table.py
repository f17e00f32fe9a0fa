"""Print the per-scheme delay CDF of a DRX comparison run side by side.

    python scripts/delay_cdf_table.py results/drx_compare
"""
import csv
import sys
from pathlib import Path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__, file=sys.stderr)
        return 2
    rows = list(csv.DictReader((Path(argv[0]) / "delay_cdf.csv").open()))
    col = lambda r: f"{r['scheme']}@{r['axis_value']}"
    schemes = sorted({col(r) for r in rows})
    grid = sorted({float(r["delay_ms"]) for r in rows})
    val = {(col(r), float(r["delay_ms"])): float(r["cdf"]) for r in rows}
    print("delay_ms " + " ".join(f"{s:>16s}" for s in schemes))
    for g in grid:
        print(f"{g:8g} " + " ".join(f"{val.get((s, g), float('nan')):16.4f}" for s in schemes))
    return 0


if __name__ == "__main__":
    sys.exit(main())

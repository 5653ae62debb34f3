"""Log-log slopes from experiment CSVs in a results directory.

    python3 scripts/fit_rates.py results
"""

import csv
import sys
from pathlib import Path

import numpy as np


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def main(out: Path) -> None:
    fits = []
    if (out / "toy-bias.csv").exists():
        r = rows(out / "toy-bias.csv")
        fits.append(("toy-bias |bias| vs K", slope([d["K"] for d in r], [abs(float(d["bias"])) for d in r]), "-1"))
    if (out / "toy-levelvar.csv").exists():
        r = rows(out / "toy-levelvar.csv")
        K = [d["K"] for d in r]
        fits.append(("toy-levelvar plain vs K", slope(K, [d["var_plain"] for d in r]), "-1"))
        fits.append(("toy-levelvar antithetic vs K", slope(K, [d["var_antithetic"] for d in r]), "-1.5"))
    for name in ("toy-rmse", "alm-rmse"):
        if (out / f"{name}.csv").exists():
            r = rows(out / f"{name}.csv")
            for est in dict.fromkeys(d["estimator"] for d in r):
                sub = [d for d in r if d["estimator"] == est]
                fits.append((f"{name} {est} RMSE vs cost", slope([d["cost"] for d in sub], [d["rmse"] for d in sub]), ""))
    if (out / "toy-lsmc.csv").exists():
        r = rows(out / "toy-lsmc.csv")
        fits.append(("toy-lsmc RMSE vs J", slope([d["J"] for d in r], [d["rmse"] for d in r]), "-1/3 bound"))
    if (out / "alm-eta.csv").exists():
        r = rows(out / "alm-eta.csv")
        for eta in dict.fromkeys(d["eta"] for d in r):
            sub = [d for d in r if d["eta"] == eta]
            fits.append((f"alm-eta eta={eta} RMSE vs cost", slope([d["cost"] for d in sub], [d["rmse"] for d in sub]), ""))
    width = max((len(f[0]) for f in fits), default=0)
    for label, s, ref in fits:
        print(f"{label:<{width}}  {s:+.3f}  {ref}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "results"))

#!/usr/bin/env python3
"""Regenerate the shipped synthetic datasets under data/.

Each file exercises one `qmemlink fit` kind with known generating
parameters, so round-trip fits have exact references:

* snr_synthetic.csv    - distance-scaling SNR model at its fitted parameters
* decay_synthetic.csv  - Gaussian retrieval decay, eta0 0.5, tau 160 us
* dfg_synthetic.csv    - conversion-efficiency curve, V arm, peak at 1.749 W
* fringe_synthetic.csv - Poisson fringe at the 20-km statistics (V = 0.89)
"""

import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from qmemlink.analysis import SnrModelParams, snr_model  # noqa: E402
from qmemlink.conversion import QfcParams, dfg_efficiency  # noqa: E402
from qmemlink.node import NodeParams, retrieval_efficiency  # noqa: E402

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
FRINGE_SEED = 7


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def main() -> int:
    DATA_DIR.mkdir(exist_ok=True)

    params = SnrModelParams()
    lengths = np.arange(0.0, 101.0, 10.0)
    _write(
        DATA_DIR / "snr_synthetic.csv",
        ["length_km", "snr"],
        [[f"{l:.1f}", f"{snr_model(l, params):.6f}"] for l in lengths],
    )

    node = NodeParams()
    times = np.arange(0.0, 241.0, 20.0)
    _write(
        DATA_DIR / "decay_synthetic.csv",
        ["time_us", "efficiency"],
        [[f"{t:.1f}", f"{retrieval_efficiency(t, node):.6f}"] for t in times],
    )

    qfc = QfcParams()
    powers = np.arange(0.1, 2.21, 0.15)
    _write(
        DATA_DIR / "dfg_synthetic.csv",
        ["power_w", "efficiency"],
        [[f"{p:.2f}", f"{dfg_efficiency(p, 'V', qfc):.6f}"] for p in powers],
    )

    rng = np.random.default_rng(FRINGE_SEED)
    settings = np.array([11.25 * k for k in range(12)])
    total_coinc, total_singles = 7353, 78288
    mean = total_coinc / len(settings)
    expected = mean * (1.0 + 0.89 * np.cos(2.0 * np.pi * settings / 90.0))
    counts = rng.poisson(expected)
    singles = rng.poisson(total_singles / len(settings), size=len(settings))
    _write(
        DATA_DIR / "fringe_synthetic.csv",
        ["setting", "coincidences", "singles"],
        [[f"{s:.2f}", int(c), int(n)] for s, c, n in zip(settings, counts, singles)],
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

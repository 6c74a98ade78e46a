"""Generate the synthetic drug report fixture shipped in data/.

Sixty made-up drugs across 15 clusters with smoothed yearly report totals
drawn to resemble a pharmacovigilance table: target-reaction fractions are
skewed low so the 50th/90th table percentiles give well-separated null and
signal thresholds, yearly totals span an order of magnitude, and a handful
of drugs sit clearly above the signal threshold.  Regenerating with the
default seed reproduces the committed file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

N_DRUGS = 60
N_CLUSTERS = 15
DEFAULT_SEED = 20260823
DEFAULT_OUT = Path(__file__).resolve().parent.parent / "data" / "yellowcard_fixture.csv"


def make_records(seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    records = []
    for i in range(N_DRUGS):
        years = round(float(rng.uniform(2.0, 25.0)), 1)
        # yearly totals log-uniform in [8, 80): enough reports that every
        # stream resolves within a few hundred simulated years
        total_rate = float(np.exp(rng.uniform(np.log(8.0), np.log(80.0))))
        fraction = float(rng.beta(2.0, 20.0))
        amnesia = int(round(fraction * total_rate * years))
        other = max(int(round(total_rate * years)) - amnesia, 0)
        records.append(
            {
                "name": f"drug_{i + 1:03d}",
                "amnesia_count": amnesia,
                "other_count": other,
                "years": years,
                "cluster": i % N_CLUSTERS,
            }
        )
    return records


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()

    records = make_records(args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["name", "amnesia_count", "other_count", "years", "cluster"]
        )
        writer.writeheader()
        writer.writerows(records)
    print(f"wrote {len(records)} records to {args.out}")


if __name__ == "__main__":
    main()

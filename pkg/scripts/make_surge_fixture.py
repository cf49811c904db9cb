"""Regenerate the bundled synthetic surge-price fixture.

The published price-level matrix is the only information available about the
underlying surge data.  This script builds a multiplier sequence whose
consecutive-pair frequencies reproduce that matrix to three decimals:

1. pick row totals proportional to the stationary distribution,
2. round n_i * P_ij to integer edge counts,
3. add single edges until every level has equal in- and out-degree,
4. walk an Eulerian circuit of the resulting multigraph (Hierholzer).

Multipliers are drawn on a 0.01 grid inside each level's bin; timestamps are
ISO-8601 at 180 s spacing.  Output goes to src/riskrl/data/.
"""

import argparse
import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

GOLDEN = np.array([
    [0.876, 0.099, 0.017, 0.008],
    [0.347, 0.412, 0.167, 0.074],
    [0.106, 0.353, 0.259, 0.282],
    [0.086, 0.219, 0.143, 0.552],
])
BIN_GRID = [np.arange(100, 120), np.arange(120, 160), np.arange(160, 200), np.arange(200, 301)]
DATA = Path(__file__).resolve().parents[1] / "src" / "riskrl" / "data"


def stationary(P):
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return pi / pi.sum()


def balanced_counts(P, total):
    n = total * stationary(P)
    c = np.rint(n[:, None] * P).astype(int)
    while True:
        excess = c.sum(axis=0) - c.sum(axis=1)  # in minus out
        if not excess.any():
            return c
        u = int(np.argmax(excess))   # needs more out-edges
        v = int(np.argmin(excess))   # needs more in-edges
        c[u, v] += 1


def euler_circuit(counts, start=0):
    left = counts.copy()
    stack, out = [start], []
    while stack:
        u = stack[-1]
        nz = np.flatnonzero(left[u])
        if nz.size:
            v = int(nz[0]) if nz.size == 1 else int(nz[np.argmax(left[u, nz])])
            left[u, v] -= 1
            stack.append(v)
        else:
            out.append(stack.pop())
    return out[::-1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--total", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args(argv)

    counts = balanced_counts(GOLDEN, args.total)
    est = counts / counts.sum(axis=1, keepdims=True)
    if not np.array_equal(np.round(est, 3), GOLDEN) or np.abs(est - GOLDEN).max() > 4.9e-4:
        raise SystemExit(f"total={args.total} does not reproduce the matrix; try a larger total")
    seq = euler_circuit(counts)

    rng = np.random.default_rng(args.seed)
    t0 = datetime(2019, 3, 4, 5, 0, tzinfo=timezone.utc)
    with open(DATA / "surge_fixture.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "multiplier"])
        for k, level in enumerate(seq):
            stamp = (t0 + timedelta(seconds=180 * k)).strftime("%Y-%m-%dT%H:%M:%SZ")
            w.writerow([stamp, f"{rng.choice(BIN_GRID[level]) / 100:.2f}"])
    (DATA / "surge_transition_golden.json").write_text(json.dumps({
        "price_levels": [1.0, 1.4, 1.8, 2.2],
        "decimals": 3,
        "transition": GOLDEN.tolist(),
    }, indent=2) + "\n")
    print(f"wrote {len(seq)} observations; max deviation {np.abs(est - GOLDEN).max():.2e}")


if __name__ == "__main__":
    main()

"""Reed-Solomon RS(128,96) decode outcomes by number of symbol errors.

    python3 scripts/rs_montecarlo.py --trials 100000 --max-errors 40
"""

import argparse

import numpy as np

from siliconhealth import rs


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--max-errors", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    data = rng.integers(0, 256, (args.trials, rs.K), dtype=np.uint8)
    clean = rs.encode_batch(data)
    print("errors,corrected,detected,miscorrected")
    for nerr in range(0, args.max_errors + 1):
        pos = np.argsort(rng.random((args.trials, rs.N)), axis=1)[:, :nerr]
        vals = rng.integers(1, 256, pos.shape, dtype=np.uint8)
        received = clean.copy()
        np.put_along_axis(received, pos, np.take_along_axis(received, pos, 1) ^ vals, 1)
        out, counts = rs.decode_batch(received)
        right = np.all(out[:, :rs.K] == data, axis=1) & (counts >= 0)
        detected = counts < 0
        wrong = ~right & ~detected
        n = args.trials
        print(f"{nerr},{right.sum() / n:.5f},{detected.sum() / n:.5f},{wrong.sum() / n:.5f}", flush=True)


if __name__ == "__main__":
    main()

"""Per-model proof time and energy at a chosen difficulty.

    python3 scripts/dhf_table.py --d 256 --scale 256 --n 200
"""

import argparse

import numpy as np

from siliconhealth.dhf import DEVICE_MODELS, make_device
from siliconhealth.hashcore import Difficulty, expected_attempts
from siliconhealth.netsim import measure_proof_energy


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--d", type=int, default=256)
    ap.add_argument("--scale", type=int, default=256)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    diff = Difficulty(args.d, args.scale)
    print(f"difficulty {diff}, expected attempts {expected_attempts(diff):.0f}")
    print("model,hashrate,watts,mean_attempts,cv_attempts,mean_seconds,mean_joules,cv_joules")
    for model in DEVICE_MODELS:
        rng = np.random.default_rng(args.seed)
        dev = make_device(model, rng)
        s = measure_proof_energy(dev, args.n, diff, rng)
        print(f"{model},{dev.nominal_hashrate:.3g},{dev.power_watts},{s.mean_attempts:.0f},{s.cv_attempts:.3f},"
              f"{s.mean_seconds:.3g},{s.mean_joules:.3g},{s.cv_joules:.3f}")


if __name__ == "__main__":
    main()

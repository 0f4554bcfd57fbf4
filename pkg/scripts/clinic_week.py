"""Seven-day offline clinic scenario across seeds and link bandwidths.

    python3 scripts/clinic_week.py --seeds 0 1 2 --bandwidth 2400 9600 --out runs/clinic
"""

import argparse
import json

from siliconhealth.netsim import clinic_week, run_scenario

COLUMNS = ("records_created", "records_at_apex", "converged", "zero_record_loss", "mean_latency_seconds",
           "max_staleness_seconds", "bandwidth_violations")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--bandwidth", type=float, nargs="+", default=[2400.0, 9600.0])
    ap.add_argument("--records-per-day", type=float, default=20.0)
    ap.add_argument("--out", help="also write each run's metrics files under this directory")
    args = ap.parse_args()
    print("seed,bandwidth," + ",".join(COLUMNS))
    for bw in args.bandwidth:
        for seed in args.seeds:
            bundle = run_scenario(clinic_week(seed, bw, args.records_per_day))
            if args.out:
                bundle.write(args.out, f"seed{seed}_bw{int(bw)}")
            s = json.loads(bundle.summary_json)
            print(f"{seed},{bw:g}," + ",".join(str(s[c]) for c in COLUMNS), flush=True)


if __name__ == "__main__":
    main()

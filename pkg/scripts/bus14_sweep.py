"""CSV of predicted and benchmark STI at one bus for every screened outage."""
import argparse
import csv
import sys

from stivsa import ScreeningConfig, benchmark, bundled_case


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bus", type=int, default=14)
    ap.add_argument("--load-scale", type=float, default=1.0)
    args = ap.parse_args()
    rep = benchmark(bundled_case("case14"), ScreeningConfig(load_scale=args.load_scale,
                                                            excluded_branches=("1-2", "7-8"),
                                                            monitored_buses=(args.bus,)))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["outage", "sti_predicted", "sti_benchmark", "base_sti", "alarm"])
    for r in rep.for_bus(args.bus):
        w.writerow([r.outage, f"{r.sti_predicted:.4f}", f"{r.sti_benchmark:.4f}",
                    f"{rep.base_sti[args.bus]:.4f}", int(r.alarm)])


if __name__ == "__main__":
    main()

"""Print predicted and benchmark VSI for outages 1-5 and 5-6 at normal and peak load."""
import argparse

from stivsa import ScreeningConfig, benchmark, bundled_case


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outages", default="1-5,5-6")
    ap.add_argument("--loads-only", action="store_true", help="keep generator dispatch fixed at peak")
    args = ap.parse_args()
    case = bundled_case("case14")
    outages = args.outages.split(",")
    for scale, name in ((1.0, "normal"), (1.2, "peak")):
        rep = benchmark(case, ScreeningConfig(load_scale=scale, excluded_branches=("1-2", "7-8"),
                                              scale_generation=not args.loads_only))
        print(f"\n{name} load (scale {scale})")
        print(f"{'bus':>5}" + "".join(f"{lb + ' STI*':>12}{lb + ' STI':>12}" for lb in outages))
        for b in rep.monitored_buses:
            cells = []
            for lb in outages:
                r = next(x for x in rep.for_outage(lb) if x.bus == b)
                cells.append(f"{r.sti_benchmark:>12.4f}{r.sti_predicted:>12.4f}")
            print(f"{b:>5}" + "".join(cells))
        print(f"{'sigma%':>5}" + "".join(f"{'':>12}{rep.sigma_per_outage[lb]:>12.2f}" for lb in outages))


if __name__ == "__main__":
    main()

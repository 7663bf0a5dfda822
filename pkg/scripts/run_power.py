"""Power of the marginal permutation test on mediator 6 across delta."""
import argparse

from longmed.simulation import DESK_DELTAS, SimulationConfig, run_power_study, timed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", type=int, default=1)
    ap.add_argument("--scenario", type=int, default=1)
    ap.add_argument("-G", type=int, default=50)
    ap.add_argument("-S", type=int, default=200)
    ap.add_argument("--structures", default="diagonal")
    ap.add_argument("--deltas", default=",".join(map(str, DESK_DELTAS)))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="power.csv")
    args = ap.parse_args()

    cfg = SimulationConfig(case=args.case, scenario=args.scenario, G=args.G, S=args.S, seed=args.seed, threads=args.threads)
    deltas = [float(d) for d in args.deltas.split(",")]
    df, secs = timed(run_power_study, cfg, deltas, args.structures.split(","))
    df.to_csv(args.out, index=False, float_format="%.12g")
    print(df.to_string(index=False))
    print(f"{secs:.1f} s")


if __name__ == "__main__":
    main()

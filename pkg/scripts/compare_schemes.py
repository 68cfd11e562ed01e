"""Mean latency reduction of the joint scheme over the baselines across seeded scenarios."""
import argparse
import csv
import logging
import sys

from partel.report import compare_schemes, mean_with_ci, write_results_csv
from partel.scenario import SystemConfig, generate_scenario

log = logging.getLogger("compare_schemes")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("-K", type=int, default=50)
    ap.add_argument("-N", type=int, default=80)
    ap.add_argument("--model-size", type=float, default=1.24e6)
    ap.add_argument("--runs-out", default=None, help="per-run results file")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = SystemConfig(num_subcarriers=a.N, model_size=a.model_size)
    runs = []
    for seed in range(a.seeds):
        reps = compare_schemes(generate_scenario(a.K, cfg, seed=seed))
        log.info("seed %d: %s", seed, " ".join(f"{r.scheme}={r.latency:.5g}" for r in reps))
        runs.extend(reps)
    if a.runs_out:
        with open(a.runs_out, "w", newline="") as fh:
            write_results_csv(runs, fh)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["scheme", "seeds", "mean_latency", "mean_reduction", "ci95_halfwidth", "dominated_seeds"])
    for scheme in ("support", "baseline", "greedy-feel"):
        rows = [r for r in runs if r.scheme == scheme]
        lat, _ = mean_with_ci([r.latency for r in rows])
        if scheme == "support":
            w.writerow([scheme, len(rows), repr(lat), "", "", ""])
            continue
        m, h = mean_with_ci([r.reduction for r in rows])
        w.writerow([scheme, len(rows), repr(lat), repr(m), repr(h), sum(r.reduction >= 0 for r in rows)])


if __name__ == "__main__":
    main()

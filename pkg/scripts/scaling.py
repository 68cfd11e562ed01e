"""Wall time of one fixed-latency solve as the number of workers grows at a fixed subcarrier count."""
import argparse
import math
import time

import numpy as np

from partel.scenario import SystemConfig, generate_scenario
from partel.solver import max_model_size


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", default="10,20,40,80")
    ap.add_argument("-N", type=int, default=80)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seeds", type=int, default=3)
    a = ap.parse_args()
    Ks = [int(x) for x in a.workers.split(",")]
    print("workers,median_seconds,iterations")
    med = []
    for K in Ks:
        secs, iters = [], []
        for seed in range(a.seeds):
            s = generate_scenario(K, SystemConfig(num_subcarriers=a.N), seed=seed)
            T = 1.24e6 / s.speeds.sum() * 4
            best = math.inf
            for _ in range(a.repeats):
                t0 = time.perf_counter()
                res = max_model_size(s, T)
                best = min(best, time.perf_counter() - t0)
            secs.append(best)
            iters.append(res.iterations)
        med.append(float(np.median(secs)))
        print(f"{K},{med[-1]!r},{int(np.median(iters))}")
    slope = np.polyfit(np.log(Ks), np.log(med), 1)[0]
    print(f"# log-log slope {slope:.2f}")


if __name__ == "__main__":
    main()

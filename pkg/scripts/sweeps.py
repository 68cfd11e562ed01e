"""Median latency as the number of workers or subcarriers grows, for the decomposable model and a CNN round."""
import argparse
import csv
import logging
import sys

import numpy as np

from partel.cnn import CnnShape, plan_cnn_round
from partel.scenario import SystemConfig, generate_scenario
from partel.solver import solve_support

log = logging.getLogger("sweeps")


def run(task, axis, values, seeds, fixed_K, fixed_N, model_size):
    shape = CnnShape.lenet5()
    for v in values:
        K, N = (v, fixed_N) if axis == "workers" else (fixed_K, v)
        lat = []
        for seed in seeds:
            s = generate_scenario(K, SystemConfig(num_subcarriers=N), seed=seed)
            lat.append(plan_cnn_round(s, shape).latency if task == "cnn" else solve_support(s, model_size).latency)
        log.info("%s %s=%d median %.5g", task, axis, v, np.median(lat))
        yield {"task": task, "axis": axis, "value": v, "runs": len(lat),
               "median_latency": repr(float(np.median(lat))), "mean_latency": repr(float(np.mean(lat)))}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", choices=("decomposable", "cnn"), default="decomposable")
    ap.add_argument("--axis", choices=("workers", "subcarriers"), default="workers")
    ap.add_argument("--values", default=None, help="comma list; defaults to 10..50 workers or 40..80 subcarriers")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--model-size", type=float, default=1.24e6)
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    default = [10, 20, 30, 40, 50] if a.axis == "workers" else [40, 50, 60, 70, 80]
    values = [int(x) for x in a.values.split(",")] if a.values else default
    fixed_K, fixed_N = (30, 50) if a.task == "cnn" else (50, 80)
    w = csv.DictWriter(sys.stdout, ["task", "axis", "value", "runs", "median_latency", "mean_latency"],
                       lineterminator="\n")
    w.writeheader()
    for row in run(a.task, a.axis, values, range(a.seeds), fixed_K, fixed_N, a.model_size):
        w.writerow(row)


if __name__ == "__main__":
    main()

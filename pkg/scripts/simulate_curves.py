"""Loss against cumulative latency for every planner on the desk-scale decomposable task."""
import argparse
import sys

from partel.scenario import SystemConfig, generate_scenario
from partel.sim import DecomposableModel, SyntheticDataset, run_partel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-K", type=int, default=10)
    ap.add_argument("-N", type=int, default=16)
    ap.add_argument("--dim", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--redraw", action="store_true")
    a = ap.parse_args()
    data = SyntheticDataset.generate(a.samples, a.dim, seed=a.seed)
    s = generate_scenario(a.K, SystemConfig(num_subcarriers=a.N, model_size=a.dim), seed=a.seed)
    print("round,T,cumulative_T,loss,scheme,seed")
    for planner in ("support", "baseline", "greedy-feel"):
        m = DecomposableModel.zeros(a.dim, regularizer="l1", strength=1e-5, step_scale=4.0)
        tr = run_partel(m, data, s, planner, a.rounds, redraw=a.redraw, seed=a.seed)
        for r in tr.rows():
            sys.stdout.write(f"{r['round']},{r['T']!r},{r['cumulative_T']!r},{r['loss']!r},{r['scheme']},{r['seed']}\n")


if __name__ == "__main__":
    main()

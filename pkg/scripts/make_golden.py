"""Compute brute-force reference latencies for tiny scenarios and freeze them into tests/golden/."""
import argparse
import json
import logging
import time
from pathlib import Path

from partel.oracle import OracleGrids, brute_force_max_model_size, brute_force_min_latency
from partel.scenario import SystemConfig, generate_scenario, reference_scenario, scenario_to_dict

log = logging.getLogger("make_golden")
MODEL_SIZE = 1e6


def tiny_cases(count=19):
    for seed in range(1, count + 1):
        K, N = 2 + seed % 2, 2 + seed % 3
        yield generate_scenario(K, SystemConfig(num_subcarriers=N, model_size=MODEL_SIZE), seed=seed)


def entry(sc, grids):
    t0 = time.perf_counter()
    base = brute_force_min_latency(sc, MODEL_SIZE, grids)
    fine = brute_force_min_latency(sc, MODEL_SIZE, grids.refined())
    log.info("seed %s: T=%.10g refined=%.10g (%.1fs)", sc.seed, base.latency, fine.latency,
             time.perf_counter() - t0)
    return {
        "scenario": scenario_to_dict(sc),
        "model_size": MODEL_SIZE,
        "grids": grids.__dict__,
        "latency": base.latency,
        "latency_refined": fine.latency,
        "loads": base.loads.tolist(),
        "assignment": base.assignment.tolist(),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "golden"))
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    grids = OracleGrids()
    ref = reference_scenario()
    doc = entry(ref, grids)
    doc["relaxed"] = {}
    for T in (5.0, 11.0, 20.0):
        total, C = brute_force_max_model_size(ref, T, grids)
        doc["relaxed"][repr(T)] = {"model_size": total, "shares": C.tolist()}
    (out / "reference_k2n2.json").write_text(json.dumps(doc, indent=1) + "\n")
    tiny = [entry(sc, grids) for sc in tiny_cases()]
    (out / "oracle_tiny.json").write_text(json.dumps(tiny, indent=1) + "\n")


if __name__ == "__main__":
    main()

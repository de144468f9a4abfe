"""Gap of the paramagnet under a uniform field against the stability bound.

    python scripts/paramagnet_sweep.py --N 6 --op sz --gamma 0.5
"""
import argparse

from gapstab.config import ExperimentConfig
from gapstab.pipeline import run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=6)
    ap.add_argument("--op", default="sz", choices=["sx", "sy", "sz"])
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--points", type=int, default=11)
    args = ap.parse_args()
    cfg = ExperimentConfig.from_dict({
        "name": f"paramagnet_{args.op}",
        "lattice": {"dims": [args.N]},
        "model": {"name": "paramagnet"},
        "perturbation": {"terms": [{"kind": "field", "op": args.op}]},
        "ltqo": {"enabled": False},
        "weight": {"gamma": args.gamma},
        "stability": {"s_grid": [0.0, 0.05], "sweep_points": args.points},
    })
    rep = run_pipeline(cfg, drift=False)
    v = rep.verdict
    if v is None:
        print({k: s["status"] for k, s in rep.stages.items()})
        return
    print(f"beta = {v['beta']:.6g}  gamma0 = {v['gamma0']:.6g}  s0 = {v['s0']}")
    print(f"{'s':>8} {'gap':>12} {'bound':>12}  status")
    for r in v["rows"]:
        print(f"{r['s']:8.4f} {r['gap']:12.8f} {r['bound']:12.8f}  {r['status']}")


if __name__ == "__main__":
    main()

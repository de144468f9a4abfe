"""Commutator growth ||[tau_t(A), B_y]|| on the Ising-projector chain.

    python scripts/lr_profile.py --N 10 --hopping 0.5 --tmax 3
"""
import argparse

import numpy as np

from gapstab.dynamics import lr_commutator_profile
from gapstab.models import PAULI, model_zoo
from gapstab.operators import site_operator


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=10)
    ap.add_argument("--hopping", type=float, default=0.5)
    ap.add_argument("--tmax", type=float, default=3.0)
    ap.add_argument("--steps", type=int, default=25)
    args = ap.parse_args()
    m = model_zoo("ising_projector", N=args.N, hopping=args.hopping)
    A = site_operator(m.ambient, PAULI["sx"], [1])
    B = site_operator(m.ambient, PAULI["sx"], [args.N // 2 + 1])
    times = np.linspace(0.0, args.tmax, args.steps)
    prof = lr_commutator_profile(m, A, B, times)
    ds = sorted(prof.grid)
    print("t      " + " ".join(f"d={d:<8d}" for d in ds))
    for i, t in enumerate(times):
        print(f"{t:5.2f}  " + " ".join(f"{prof.grid[d][i]:10.3e}" for d in ds))
    print(f"mu = {prof.mu}, v = {prof.velocity}, prefactor = {prof.prefactor}, "
          f"violations {prof.violations}/{prof.checked}{'  ' + prof.note if prof.note else ''}")


if __name__ == "__main__":
    main()

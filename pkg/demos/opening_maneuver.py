"""Plan an opening, design a PD gain and track the plan on the nonlinear plant.

Usage: python3 demos/opening_maneuver.py [--full] [--out DIR]

Without ``--full`` the coarse N=100 planning grid is used (about half a minute).
"""

import argparse
import math
from pathlib import Path

import numpy as np

from boomctl.closedloop import ControllerConfig, run_closed_loop
from boomctl.drive import DriveParams
from boomctl.lmisyn import RegionSpec, build_error_model, polytope_vertices, synthesize_robust
from boomctl.plant import default_params
from boomctl.trajopt import OcpConfig, solve_ocp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full", action="store_true", help="N=500 planning grid")
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    p, drv = default_params(), DriveParams()
    cfg = OcpConfig() if args.full else OcpConfig(N=100, T_s=0.05, substeps=50)
    plan = solve_ocp(p, drv, cfg)
    theta_f = p.trans.N_g * plan.states[-1, 1]
    print(f"plan: converged={plan.converged} iterations={plan.iterations} "
          f"terminal angle error={abs(theta_f - math.pi / 2):.2e} rad")
    plan.to_csv(out / "plan.csv")

    model = build_error_model(p)
    design = synthesize_robust(polytope_vertices(model, 0.2), RegionSpec(5.0, 100.0, math.pi / 6),
                               model)
    print(f"gain K={np.round(design.K, 5).tolist()} gamma={design.gamma:.4g}")

    for label, K, pert in (("feedforward only", (0.0, 0.0), None),
                           ("nominal plant", design.K, None),
                           ("motor inertia +20%", design.K, {"J_mg": 1.2 * p.trans.J_mg})):
        rep = run_closed_loop(p, drv, plan, ControllerConfig(K=K), perturbation=pert)
        print(f"{label:>20}: NRMSE={rep.nrmse:.4f} peak speed error={rep.peak_speed_error:.3g} rad/s")
    rep.to_csv(out / "run_perturbed.csv")
    print(f"CSV files written to {out}/")


if __name__ == "__main__":
    main()

"""Trade-off between decay rate and disturbance gain for the boom error model.

Usage: python3 demos/gain_tradeoff.py

Prints the optimal gain bound gamma*(alpha) for two damping sectors, with and
without the +/-20% polytope, and the resulting PD gains.
"""

import math

from boomctl.lmisyn import build_error_model, polytope_vertices, tradeoff_curve
from boomctl.plant import default_params

ALPHAS = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 16.0, 20.0]


def main():
    model = build_error_model(default_params())
    verts = polytope_vertices(model, 0.2)
    for theta, name in ((math.pi / 6, "pi/6"), (math.pi / 18, "pi/18")):
        nominal = tradeoff_curve(model, theta, 100.0, ALPHAS)
        robust = tradeoff_curve(model, theta, 100.0, ALPHAS, vertices=verts)
        print(f"sector half-angle {name}")
        print(f"{'alpha':>7} {'gamma':>12} {'gamma robust':>13}   K robust")
        for a, b in zip(nominal, robust):
            k = "infeasible" if b.K is None else f"[{b.K[0]:.4g}, {b.K[1]:.4g}]"
            print(f"{a.alpha:7.1f} {a.gamma:12.5g} {b.gamma:13.5g}   {k}")
        print()


if __name__ == "__main__":
    main()

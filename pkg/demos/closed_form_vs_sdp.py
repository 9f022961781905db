"""Compare the rank-1 closed-form kernels with the SDP they solve.

For a few random (x, z) pairs, prints the first-order optimum from the
geometry next to the SDP value, and the second-order bound next to the
SDP's delta.
"""

import numpy as np

from ripforge import build_operators, foc_values, geometry, sdp, soc_values, solve_delta_ub
from ripforge.lmi import assemble_opt


def main(count=5, seed=0):
    rng = np.random.default_rng(seed)
    print(f"{'n':>2} {'rho':>6} {'zeta':>6} {'eta* formula':>12} {'eta* SDP':>10} {'delta_soc':>9} {'delta_ub':>9}")
    for _ in range(count):
        n = int(rng.integers(2, 6))
        x, z = rng.standard_normal(n), rng.standard_normal(n)
        g = geometry(x, z)
        ops = build_operators(x, z)
        first = sdp.solve(assemble_opt(ops, 0.0, second_order=False), tol=1e-10)
        ub, _ = solve_delta_ub(ops, 0.0)
        print(f"{n:2d} {g.rho:6.3f} {g.zeta:6.3f} {foc_values(g).eta_star:12.8f} {first.objective:10.8f} "
              f"{soc_values(g).delta_soc:9.5f} {ub:9.5f}")


if __name__ == "__main__":
    main()

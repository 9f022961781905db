"""Walk through the three-measurement instance with a spurious local minimum.

Prints the objective, gradient and Hessian at the spurious point, the RIP
constant, and a text histogram of where momentum SGD ends up.
"""

import numpy as np

from ripforge import SgdConfig, certify, example1_instance, failure_rate_experiment, rip_full
from ripforge.sensing import EXAMPLE1_SPURIOUS, gradient, hessian, objective_value


def main():
    inst = example1_instance()
    x = EXAMPLE1_SPURIOUS
    print("f(x)      =", objective_value(inst, x))
    print("grad f(x) =", gradient(inst, x).ravel())
    print("hess f(x) =\n", hessian(inst, x))
    rip = rip_full(inst)
    print(f"RIP spectrum [{rip.lambda_min:.3f}, {rip.lambda_max:.3f}], delta = {rip.delta_full:.3f}")
    print("verdict at x:", certify(inst, x).verdict, "| at z:", certify(inst, inst.z).verdict)

    summary = failure_rate_experiment(inst, SgdConfig(1e-3, 0.9, 1000), 10000)
    print(f"\nSGD failure rate {summary.failure_rate:.3f} +- {summary.half_width:.3f} (3 sigma)")
    edges, counts = summary.hist_edges, summary.hist_counts
    # coarse text histogram, 10 bins of the 100
    for k in range(0, 100, 10):
        c = int(counts[k:k + 10].sum())
        print(f"  |xx^T - zz^T| in [{edges[k]:.2f}, {edges[k + 10]:.2f}) {c:6d} " + "#" * (c // 200))
    print("spurious error |xx^T - zz^T| =", np.sqrt(5) / 2)


if __name__ == "__main__":
    main()

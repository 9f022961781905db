"""Forge an instance where a chosen point is a strict local minimum, then run SGD on it.

Uses a small dimension so the SDP solves in a second or two. Starting at the
forged point (gamma = 0) SGD stays there; from a fresh Gaussian start
(gamma = 1) it usually finds the ground truth.
"""

import numpy as np

from ripforge import SgdConfig, certify, forge_instance, gamma_sweep, rip_full


def main(n=6, r=2, seed=0):
    res = forge_instance(n, r, seed, recipe="bad")
    inst = res.instance
    print(f"forged n={n} r={r}: m={inst.m} measurements, delta={res.delta_n:.4f}")
    print("RIP check:", round(rip_full(inst).delta_full, 6))
    print("verdict at x:", res.certificate.verdict, "| at z:", certify(inst, inst.z).verdict)
    rel0 = np.linalg.norm(res.x @ res.x.T - inst.Z) / np.linalg.norm(inst.Z)
    print(f"relative error of the trap: {rel0:.3f}")

    sweep = gamma_sweep(inst, res.x, [0.0, 0.25, 0.5, 1.0], SgdConfig(1e-4, 0.9, 5000), 200)
    print(f"\n{'gamma':>5} {'min':>9} {'median':>9} {'max':>9} {'success':>8}")
    for b in sweep.bands:
        print(f"{b['gamma']:5.2f} {b['min']:9.2e} {b['median']:9.2e} {b['max']:9.2e} {1 - b['failure_rate']:8.3f}")


if __name__ == "__main__":
    main()

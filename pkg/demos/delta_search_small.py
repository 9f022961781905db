"""Search random (x, z) in R^2 for the smallest RIP constant that admits a spurious point.

Every sample should come out at or above 1/2, the value attained by the
three-measurement example.
"""

from ripforge import delta_search


def main(samples=20, seed=0):
    rep = delta_search(2, 1, samples=samples, seed=seed)
    for s in rep.samples:
        print(f"sample {s['index']:3d}: delta_ub {s['delta_ub']:.5f}  delta_lb {s['delta_lb']:.5f}")
    print(f"min delta_ub {rep.min_delta_ub:.5f}, min delta_lb {rep.min_delta_lb:.5f}, "
          f"{rep.skipped} skipped, {rep.wall_clock:.1f} s")


if __name__ == "__main__":
    main()

"""The physics rate does not depend on how finely the surface is drawn.

Physics and visual refresh run on separate threads.  With a period that
leaves headroom above the step cost, the physics loop holds its rate at
every subdivision level of the visual surface.  With a period that is too
short for any mesh, the loop runs as fast as it can, and the rate then
falls as the tet count grows.

Usage: python demos/02_rate_vs_subdivision.py [period_ms] [steps]
"""
import logging
import sys

from softsim.bench import BenchmarkSpec, run_benchmark

MESHES = ("bunny_756", "bunny_1492", "bunny_3004")


def main(period=0.014, steps=200):
    # the under-provisioned runs overload on purpose; keep their warnings out of the table
    logging.basicConfig(level=logging.ERROR)
    print(f"period {1e3 * period:.1f} ms, {steps} steps per run, median physics rate [Hz]")
    print(f"{'mesh':>12} " + " ".join(f"{'level ' + str(lvl):>9}" for lvl in (0, 1, 2)))
    for name in MESHES:
        rates = [run_benchmark(BenchmarkSpec(name, steps=steps, period=period, slack=0.4 * period,
                                             subdivision=lvl)).stats.median_rate for lvl in (0, 1, 2)]
        print(f"{name:>12} " + " ".join(f"{r:9.1f}" for r in rates))
    print("\nunder-provisioned period 0.5 ms, level 0")
    for name in MESHES:
        stats = run_benchmark(BenchmarkSpec(name, steps=steps, period=0.0005, slack=0.0005, subdivision=0)).stats
        print(f"{name:>12} {stats.median_rate:9.1f} Hz  (interdecile spread {stats.spread:.1f} Hz)")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(float(args[0]) / 1e3 if args else 0.014, int(args[1]) if len(args) > 1 else 200)

"""Time the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--csv out.csv]
"""
import csv
import sys
import timeit

import click
import numpy as np

from infadmm import _kernels_py, kernels

CASES = [
    # name, (N, H, W, Cin), (kH, kW, Cout)
    ("1d-signal", (1, 1, 4096, 1), (1, 3, 1)),
    ("inverter-1ch", (1, 1, 1024, 1), (1, 4, 2)),
    ("inverter-4ch", (8, 1, 1024, 4), (1, 4, 4)),
    ("denoiser-in", (1, 8, 8, 17), (3, 3, 32)),
    ("denoiser-mid", (16, 8, 8, 32), (3, 3, 32)),
    ("image-blur", (16, 32, 32, 1), (3, 3, 1)),
]


def _time(fn, repeat):
    number = 20
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def run_case(xshape, kshape, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(xshape)
    k = rng.standard_normal(kshape[:2] + (xshape[3], kshape[2]))
    y = rng.standard_normal(xshape[:3] + (kshape[2],))
    center = kernels.default_center(kshape[:2])
    out = {}
    for name, mod in (("compiled", kernels.BACKENDS.get("compiled")), ("python", _kernels_py)):
        if mod is None:
            continue
        out[name] = (
            _time(lambda: mod.conv_forward(x, k, *center, True), repeat),
            _time(lambda: mod.conv_adjoint(y, k, *center, True), repeat),
            _time(lambda: mod.conv_kernel_grad(x, y, kshape[0], kshape[1], *center, True), repeat),
        )
    return out


@click.command()
@click.option("--repeat", default=7, show_default=True, help="Timing repeats (best is kept).")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Also write results here.")
def main(repeat, csv_path):
    """Microseconds per call: forward / adjoint / kernel gradient."""
    if "compiled" not in kernels.BACKENDS:
        click.echo("compiled extension not built; timing the fallback only", err=True)
    rows = []
    click.echo(f"{'case':<14}{'backend':<10}{'forward':>10}{'adjoint':>10}{'kgrad':>10}")
    for name, xs, ks in CASES:
        for backend, times in run_case(xs, ks, repeat).items():
            rows.append([name, backend] + [f"{t:.1f}" for t in times])
            click.echo(f"{name:<14}{backend:<10}" + "".join(f"{t:>10.1f}" for t in times))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "backend", "forward_us", "adjoint_us", "kgrad_us"])
            w.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled core against the numpy fallback.

Each backend runs in its own interpreter (the choice is made at import):

    python benchmarks/bench_backends.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, timeit
import numpy as np
from kernelstream import BACKEND, _backend
from kernelstream.kernel_core import KernelSpec, default_test_function
from kernelstream.streaming_regression import StreamingFactor
from kernelstream.experiments import bracket_path, regression_stream

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
a = rng.uniform(0, 1, 500)
b = np.linspace(0, 1, 200)
spec = KernelSpec(0.3)
truth = default_test_function()
xs, ys = regression_stream(0, 1000, truth, 0.1)

def factor_run():
    fac = StreamingFactor(spec, 4e-4, probes=b, capacity=1024)
    for x, y in zip(xs, ys):
        fac.append(x, y)

def bracket_run():
    bracket_path(xs[:300], ys[:300], spec, 5.0, 0.025, 1.0, 0.01)

cases = {
    "rbf_gram n=500": (lambda: _backend.rbf_gram(a, 0.3), 20),
    "rbf_cross 500x200": (lambda: _backend.rbf_cross(a, b, 0.3), 20),
    "rbf_cross 1x500 (per-step row)": (lambda: _backend.rbf_cross(a[:1], a, 0.3), 2000),
    "streaming factor T=1000, 200 probes": (factor_run, 1),
    "bracket loop T=300": (bracket_run, 1),
}
out = {"backend": BACKEND}
for name, (fn, number) in cases.items():
    out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
print(json.dumps(out))
"""


def run(backend, repeat):
    env = dict(os.environ, KERNELSTREAM_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    fast, slow = run("cython", args.repeat), run("python", args.repeat)
    print(f"{'case':40s} {'cython [ms]':>12s} {'python [ms]':>12s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        c, py = 1e3 * fast[key], 1e3 * slow[key]
        print(f"{key:40s} {c:12.3f} {py:12.3f} {py / c:8.2f}")


if __name__ == "__main__":
    main()

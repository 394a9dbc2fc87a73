"""Time the hot kernels under the numba and pure-numpy backends.

Each backend runs in its own interpreter because the backend is chosen from
SONAR_LLM_NUMBA at import time.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from sonar_llm import _kernels as K

rng = np.random.default_rng(0)
a = rng.integers(0, 50, 400)
b = rng.integers(0, 50, 400)
x = rng.normal(size=(4096, 64))
g = rng.normal(size=64)
y, inv = K.rms_norm_fwd(x, g, 1e-5)
gy = rng.normal(size=x.shape)
cases = {
    "lcs_length 400x400": lambda: K.lcs_length(a, b),
    "rms_norm_fwd 4096x64": lambda: K.rms_norm_fwd(x, g, 1e-5),
    "rms_norm_bwd 4096x64": lambda: K.rms_norm_bwd(x, g, inv, gy),
    "softmax_rows 4096x64": lambda: K.softmax_rows(x),
    "log_softmax_rows 4096x64": lambda: K.log_softmax_rows(x),
    "arith_step_sum 2^20": lambda: K.arith_step_sum(1000, 7, 1 << 20),
}
repeat = int(sys.argv[1])
out = {}
for name, fn in cases.items():
    fn()  # compile / warm up
    n = 3
    out[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
print(json.dumps({"backend": K.BACKEND, "times": out}))
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, SONAR_LLM_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, ref = run("1", args.repeat), run("0", args.repeat)
    print(f"{'kernel':28s} {ref['backend']:>12s} {fast['backend']:>12s} {'speedup':>8s}")
    for name, t_ref in ref["times"].items():
        t_fast = fast["times"][name]
        print(f"{name:28s} {t_ref * 1e3:10.3f}ms {t_fast * 1e3:10.3f}ms {t_ref / t_fast:7.1f}x")


if __name__ == "__main__":
    main()

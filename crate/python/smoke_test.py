"""Smoke test for the bhring_py extension module.

Build first:
    PYO3_BUILD_EXTENSION_MODULE=1 cargo build --release -p bhring-py
then run
    python3 python/smoke_test.py [path/to/libbhring_py.so]
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module(path):
    # the cargo artifact has a lib prefix; import it under the module name
    tmp = tempfile.mkdtemp()
    target = os.path.join(tmp, "bhring_py.so")
    shutil.copy(path, target)
    spec = importlib.util.spec_from_file_location("bhring_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(ROOT, "target", "release", "libbhring_py.so")
    bh = load_module(path)

    g = bh.perturb_gap(32, 0.7 * math.pi)
    assert g["a"] == 1.0
    assert abs(g["b"] + 6 * math.cos(math.pi / 32)) < 1e-9
    assert abs(g["c"] - 5.20) < 0.1

    p = bh.Params(4, 2.0, d=3)
    assert p.L == 4 and p.N == 4
    state, e_tree = bh.ground_state(p, max_bond=40)
    e_exact = bh.exact_ground_energy(p)
    assert abs(e_tree - e_exact) < 1e-8, (e_tree, e_exact)
    assert abs(state.norm() - 1.0) < 1e-12

    sched = bh.Schedule(2.0, 3.0, 1.0, gamma=1.0)
    series, final = bh.anneal(state, p, sched, dt=0.01, max_bond=40, stride=5)
    oracle = bh.exact_anneal(p, sched, dt=0.01, stride=5)
    assert len(series["t"]) == len(oracle["t"]) == 21
    diff = max(abs(a - b) for a, b in zip(series["current"], oracle["current"]))
    assert diff < 1e-4, diff
    assert final.particles == 4

    try:
        bh.Params(1, 2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("L=1 accepted")

    t = [0.01 * k for k in range(4000)]
    i = [math.cos(1.77 * x) for x in t]
    w0, _ = bh.fourier_peak(t, i)
    assert abs(w0 - 1.77) < 0.01, w0
    assert abs(bh.amplitude(t, i, 0.0, 40.0) - 1.0) < 1e-3

    print(f"bhring_py {bh.__version__}: ok (E0 = {e_tree:.10f}, max |dI| = {diff:.2e})")


if __name__ == "__main__":
    main()

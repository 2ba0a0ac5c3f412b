"""Smoke test of the fracrfk_py extension module.

Build first:  cargo build --release -p fracrfk-py --features extension-module
then run:     python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import math
import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import fracrfk_py

        return fracrfk_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        path = os.path.join(ROOT, "target", profile, "libfracrfk_py.so")
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("fracrfk_py", path)
            spec = importlib.util.spec_from_file_location("fracrfk_py", path, loader=loader)
            mod = importlib.util.module_from_spec(spec)
            loader.exec_module(mod)
            return mod
    sys.exit("fracrfk_py not built; see the module docstring")


def main():
    f = load()

    assert abs(f.gamma(5.0) - 24.0) < 1e-12
    assert abs(f.tail_integral(2, 0.75, 1.0) - 4.0 * math.pi / 3.0) < 1e-12
    c = f.hardy_constant(2, 0.75)
    print(f"hardy constant n=2 sigma=0.75: {c:.10f}")
    print(f"equivalence constant: {f.equivalence_constant(2, 0.75):.6f}")

    grid = f.Grid(2, 24, -1.5, 1.5)
    mask = f.Mask.ball(grid, [0.0, 0.0], 1.0)
    form = f.Form(mask, 0.75)
    pair = form.eigen()
    assert pair.converged
    print(f"ball: {mask.active_count} cells, {form.num_dofs} dofs, lambda {pair.lambda_:.8f}")

    # scaling law
    big = f.Form(mask.rescaled(2.0), 0.75).eigen()
    assert abs(big.lambda_ - 2.0 ** -1.5 * pair.lambda_) < 1e-9 * pair.lambda_

    u = pair.u
    assert abs(form.energy(u) - pair.lambda_) < 1e-8 * pair.lambda_
    assert form.full_space_form(u) > form.energy(u)
    star = form.rearrange(u)
    assert sorted(star) == sorted(u)
    print("rearrangement:", {k: round(v, 6) for k, v in form.compare_rearrangement(u).items()})
    print("equivalence:", {k: round(v, 6) for k, v in form.equivalence(u).items()})

    square = f.Mask.box(grid, [-0.8, -0.8], [0.8, 0.8])
    st = f.optimize(square, 0.75, mode="fixed", max_iter=3)
    assert st["mask"].active_count == square.active_count
    print(f"optimize fixed: lambda {st['lambda_history'][0]:.6f} -> {st['lambda_']:.6f}")

    try:
        f.Form(mask, 1.5)
    except ValueError as e:
        print("rejected sigma 1.5:", e)
    else:
        raise AssertionError("sigma 1.5 accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()

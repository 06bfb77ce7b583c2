"""Smoke test for the chdf extension module.

Build and run from the repository root:

    cargo build --release -p chdf-python --features extension-module
    cp target/release/libchdf.so python/chdf.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import chdf  # noqa: E402


def main():
    grid = chdf.Grid(16, 16, 2 * math.pi, 2 * math.pi)
    xs, ys = grid.x_centers(), grid.y_centers()

    # cos(x)cos(y) is a Neumann eigenmode of -Laplace with eigenvalue 2
    mode = chdf.Field(grid, [math.cos(x) * math.cos(y) for y in ys for x in xs])
    lap = mode.neumann_operator().values()
    err = max(abs(a - 2 * b) for a, b in zip(lap, mode.values()))
    assert err < 1e-10, err
    back = mode.neumann_operator().inverse_neumann_operator().values()
    assert max(abs(a - b) for a, b in zip(back, mode.values())) < 1e-10

    assert abs(chdf.forchheimer_root(1.0, 1.0, 3.0, 2.0) - 1.0) < 1e-12

    params = chdf.ModelParams(theta_c=4.0, sigma2=0.2)
    try:
        chdf.ModelParams(r=2.0)
    except ValueError as e:
        assert "r" in str(e)
    else:
        raise AssertionError("r = 2 accepted")

    phi = chdf.Field(grid, [0.3 * math.cos(x) for y in ys for x in xs])
    state = chdf.State(phi, chdf.Field.constant(grid, 0.4))
    energy = state.energy(params)
    mass = state.phi.mean()
    for _ in range(10):
        state, report = chdf.time_step(state, 1e-3, params)
        assert report["energy_after"] <= energy + 1e-10 * abs(energy)
        energy = report["energy_after"]
    assert abs(state.phi.mean() - mass) < 1e-12
    assert abs(state.time - 0.01) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        cfg = chdf.RunConfig.parse(
            "[grid]\nnx = 8\nny = 8\n[time]\nh = 1e-3\nt_end = 3e-3\n"
            "[initial]\npreset = random_spinodal\namplitude = 0.05\n",
            tmp,
        )
        final, ledger = cfg.run()
        assert final.step_index == 3
        with open(ledger) as f:
            assert len(f.read().strip().splitlines()) == 4
        failed = [name for name, ok, _ in cfg.check() if not ok]
        assert not failed, failed

    print("smoke test passed")


if __name__ == "__main__":
    main()

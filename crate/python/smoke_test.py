"""Quick end-to-end check of the Python extension module."""

import math

import qsd


def main():
    model = qsd.MorseModel()
    gap = model.energies[1] - model.energies[0]
    assert abs(gap - 0.4903) < 1e-3, gap
    up, down = model.rates
    assert math.isclose(up / down, math.exp(-4.0 * model.omega_b), rel_tol=1e-12)
    assert model.dim == 31 and not model.driven and qsd.MorseModel(driven=True).driven

    values, vectors = qsd.hermitian_eig([[2, 1j], [-1j, 2]])
    assert abs(values[0] - 1) < 1e-12 and abs(values[1] - 3) < 1e-12
    rotated = qsd.phase_rotate([[0, 1], [1, 0]], [-1.0, 1.0], math.pi / 2)
    assert abs(rotated[0][1] + 1) < 1e-12

    cfg = qsd.Config(model="two-level", obs=["population:1"], t_final=1.0, dt=0.05, samples=2000, seed=3)
    ref = qsd.run_reference(cfg)
    assert abs(ref.values[-1][0] - 0.8 * math.exp(-0.4)) < 1e-6
    ens = qsd.run_ensemble(cfg)
    mean, std, half = ens.series("population:1")
    assert ens.n_samples == 2000
    assert abs(mean[-1] - ref.values[-1][0]) < 2 * half[-1] + 0.02, (mean[-1], half[-1])

    times, values = qsd.run_trajectory(cfg, 5)
    assert len(times) == len(values) == ens.times.__len__()

    rows = qsd.run_integral_audit(1, 0.25, 100_000)
    assert all(row[-1] for row in rows), [row for row in rows if not row[-1]]

    try:
        qsd.Config(solver="order9")
    except qsd.ConfigError:
        pass
    else:
        raise AssertionError("bad solver accepted")

    bad = qsd.Config(model="two-level", obs="energy", solver="order1", gamma=5, dt=1, t_final=2, samples=8)
    try:
        qsd.run_ensemble(bad)
    except qsd.DivergedError:
        pass
    else:
        raise AssertionError("expected divergence")

    print("python smoke test passed")


if __name__ == "__main__":
    main()

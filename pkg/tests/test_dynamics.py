import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robin_nls.dynamics import (
    SchemeConfig,
    Termination,
    cn_step,
    mms_forcing,
    oracle_run,
    profile_solution,
    refined,
    run_simulation,
)
from robin_nls.grid import Grid, chirped_gaussian, norms
from robin_nls.theory import ModelParams

PARAMS = ModelParams(lam=1, p=2, k=1, r=3, a=0.5)


def test_zero_is_a_fixed_point():
    zero = Grid(10.0, 64).zeros()
    for params in (PARAMS, ModelParams(lam=5, p=4, k=1, r=1, a=0)):
        assert cn_step(zero, 0.0, 0.1, params) == zero
        assert run_simulation(zero, 0.5, params, SchemeConfig(dt0=0.1)).final == zero
    assert oracle_run(zero, 0.1, PARAMS).final == zero


def test_zero_duration_run():
    u0 = chirped_gaussian(Grid(10.0, 64), width=0.5)
    s = run_simulation(u0, 0.0, PARAMS)
    assert len(s.samples) == 1 and s.termination is Termination.COMPLETED and s.t_final == 0


def test_scheme_config_validation():
    for kwargs in (dict(scheme="RK4"), dict(dt0=0), dict(dt0=1e-3, dt_min=1e-2), dict(nl_tol=0), dict(nl_max_iter=0)):
        with pytest.raises(ValueError):
            SchemeConfig(**kwargs)


def test_refined_halves_both_steps():
    g, cfg = refined(Grid(10.0, 64), SchemeConfig(dt0=0.01), 2)
    assert g.N == 256 and cfg.dt0 == 0.0025


@settings(max_examples=10, deadline=None)
@given(phase=st.floats(0, 2 * math.pi))
def test_gauge_invariance(phase):
    g = Grid(20.0, 256)
    u0 = chirped_gaussian(g, 0.7, 0.4, 1.0)
    cfg = SchemeConfig(dt0=5e-3)
    a = run_simulation(u0, 0.1, PARAMS, cfg, sample_every=0.02)
    b = run_simulation(u0 * cmath.exp(1j * phase), 0.1, PARAMS, cfg, sample_every=0.02)
    for name in ("mass", "ux_sq", "lp_pp", "E", "I", "V", "theta1"):
        x, y = a.column(name), b.column(name)
        assert np.allclose(x, y, rtol=1e-10, atol=1e-12), name


def test_one_step_mass_factor():
    g = Grid(20.0, 512)
    u0 = chirped_gaussian(g, 0.8, 0.5, 5.0)
    m0 = norms(u0, 2)[0]
    gaps = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        u1 = cn_step(u0, 0.0, dt, PARAMS)
        m1 = norms(u1, 2)[0]
        ad = PARAMS.a * dt
        # discrete balance of the midpoint rule: exact up to the nonlinear solve
        jump = np.dot(g.weights, np.abs(u1.values - u0.values) ** 2)
        assert m1 * (1 + ad) == pytest.approx(m0 * (1 - ad) + ad * jump / 2, rel=1e-13)
        gaps.append(abs(m1 / m0 - math.exp(-2 * ad)))
    # so the per-step factor matches exp(-2 a dt) to third order
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine > 7


def test_undamped_step_conserves_mass():
    params = PARAMS.replace(a=0.0)
    u0 = chirped_gaussian(Grid(20.0, 512), 0.8, 0.5)
    cfg = SchemeConfig()
    assert norms(cn_step(u0, 0.0, 0.01, params, cfg), 2)[0] == pytest.approx(norms(u0, 2)[0], rel=10 * cfg.nl_tol)


def test_free_evolution_matches_closed_form():
    free = ModelParams(lam=0, p=2, k=0, r=3, validation=True)
    g = Grid(40.0, 1024)
    u0 = g.sample(lambda x: np.exp(-x**2 / 2))
    run = run_simulation(u0, 1.0, free, SchemeConfig(dt0=2e-3))
    s = 1 - 2j
    exact = s**-0.5 * np.exp(-g.x**2 / (2 * s))
    assert math.sqrt(np.dot(g.weights, np.abs(run.final.values - exact) ** 2)) <= 1e-3


def test_oracle_free_evolution_matches_closed_form():
    free = ModelParams(lam=0, p=2, k=0, r=3, validation=True)
    g = Grid(20.0, 128)
    u0 = g.sample(lambda x: np.exp(-x**2 / 2))
    run = oracle_run(u0, 0.2, free, tol=1e-10)
    s = 1 - 0.4j
    exact = s**-0.5 * np.exp(-g.x**2 / (2 * s))
    # the oracle shares the spatial stencil, so only the O(h^2) error remains
    assert np.max(np.abs(run.final.values - exact)) < 2 * g.h**2


def test_cn_agrees_with_oracle():
    g = Grid(20.0, 128)
    u0 = chirped_gaussian(g, 0.5, 0.5, 5.0)
    a = oracle_run(u0, 0.2, PARAMS, tol=1e-10)
    b = run_simulation(u0, 0.2, PARAMS, SchemeConfig(dt0=2e-4))
    assert np.max(np.abs(a.final.values - b.final.values)) < 1e-4


def test_defocusing_control_stays_bounded():
    params = ModelParams(lam=0, p=2, k=1, r=3, a=0, validation=True)
    u0 = chirped_gaussian(Grid(40.0, 1024), 1.0, 0.0)
    s = run_simulation(u0, 10.0, params, SchemeConfig(dt0=1e-2), sample_every=0.1)
    ux = s.column("ux_sq")
    assert s.termination is Termination.COMPLETED
    assert ux.max() <= 2 * ux[0]
    assert ux.max() <= s.samples[0].E * (1 + 1e-6)


def test_solver_failure_is_reported_not_raised():
    u0 = chirped_gaussian(Grid(20.0, 256), 2.0, 1.0)
    cfg = SchemeConfig(dt0=0.05, nl_max_iter=1, dt_min=0.05)
    s = run_simulation(u0, 1.0, PARAMS, cfg)
    assert s.termination is Termination.FAILURE
    assert s.rejected >= 1 and "residual" in s.message and s.final is not None


def test_blowup_run_with_adaptive_steps():
    params = ModelParams(lam=5, p=2, k=1, r=4, a=0)
    u0 = chirped_gaussian(Grid(10.0, 1024), 0.8, 0.1)
    cfg = SchemeConfig(dt0=2e-4, adapt=True, blowup_factor=30.0)
    s = run_simulation(u0, 1.0, params, cfg, sample_every=1e-3)
    assert s.termination is Termination.BLOWUP
    assert s.samples[-1].ux_sq > s.threshold == 30 * s.samples[0].ux_sq
    # steps shrink as the gradient grows, so there are more than t/dt0 of them
    assert s.steps > s.t_final / cfg.dt0
    dts = s.column("dt_used")[1:]
    assert np.all(dts <= cfg.dt0 * (1 + 1e-12)) and np.all(dts >= cfg.dt_min)
    assert dts[-1] < cfg.dt0 / 2


def test_sampling_cadence_and_snapshots(tmp_path):
    u0 = chirped_gaussian(Grid(20.0, 256), 0.5, 0.5)
    s = run_simulation(u0, 0.1, PARAMS, SchemeConfig(dt0=4e-3), sample_every=0.02, snapshot_every=0.05)
    assert np.allclose(s.t, np.arange(6) * 0.02)
    assert np.all(np.diff(s.t) > 0)
    assert [round(t, 9) for t, _ in s.snapshots] == [0.0, 0.052, 0.1]
    assert len(s.write_snapshots(tmp_path)) == 3
    s.write_csv(tmp_path / "series.csv")
    assert len((tmp_path / "series.csv").read_text().splitlines()) == 7


def test_backward_euler_is_first_order():
    u0 = chirped_gaussian(Grid(20.0, 256), 0.5, 0.5, 5.0)
    ref = run_simulation(u0, 0.2, PARAMS, SchemeConfig(dt0=1e-4)).final.values
    errs = [
        np.max(np.abs(run_simulation(u0, 0.2, PARAMS, SchemeConfig(dt0=dt, scheme="BackwardEuler")).final.values - ref))
        for dt in (1e-3, 5e-4)
    ]
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.2)


def test_profile_derivatives_match_finite_differences():
    from robin_nls.dynamics import _fd_t, _fd_x, _fd_xx

    ms = profile_solution(-1 + 2j)
    x = np.linspace(0.1, 8, 40)
    for t in (0.0, 0.7):
        assert np.allclose(ms.u_t(x, t), _fd_t(ms.u, x, t), atol=1e-9)
        assert np.allclose(ms.u_x(x, t), _fd_x(ms.u, x, t), atol=1e-9)
        assert np.allclose(ms.u_xx(x, t), _fd_xx(ms.u, x, t), atol=1e-8)


def test_mms_forcing_closed_form():
    # e^{-t} x^2 e^{-x} with k = a = 0: f = (-i x^2 - (2 - 4x + x^2)) e^{-t} e^{-x}
    params = ModelParams(lam=1, p=2, k=0, r=3, a=0, validation=True)
    f = mms_forcing(profile_solution(-1.0), params)
    x = np.linspace(0, 10, 101)
    for t in (0.0, 0.5):
        expected = (-1j * x**2 - (2 - 4 * x + x**2)) * np.exp(-t - x)
        assert np.allclose(f(x, t), expected, atol=1e-14)


def test_mms_forcing_matches_finite_difference_operator():
    ms = profile_solution(-1 + 2j)
    exact = mms_forcing(ms, PARAMS)
    fd = mms_forcing(ms.u, PARAMS)
    x = np.linspace(0, 8, 33)
    assert np.allclose(exact(x, 0.3), fd(x, 0.3), atol=1e-8)


def test_mms_rejects_incompatible_and_accepts_zero():
    with pytest.raises(ValueError):
        mms_forcing(lambda x, t: np.exp(-x) * (1 + 0 * t), PARAMS)
    f = mms_forcing(lambda x, t: 0 * x, PARAMS)
    assert np.all(f(np.linspace(0, 1, 5), 0.2) == 0)

import json
import math

import numpy as np
import pytest

from robin_nls.diagnostics import (
    RESIDUAL_COLUMNS,
    default_b,
    energy,
    identity_residuals,
    inequality_slack,
    sample_diagnostics,
    theta_functionals,
    virial,
)
from robin_nls.dynamics import SchemeConfig, run_simulation
from robin_nls.grid import Grid, chirped_gaussian
from robin_nls.theory import ModelParams

H2 = (40 / 4096) ** 2


@pytest.fixture(scope="module")
def exp_field():
    return Grid(40.0, 4096).sample(lambda x: np.exp(-x))


def test_energy_of_exponential(exp_field):
    params = ModelParams(lam=1, p=2, k=1, r=2)
    assert energy(exp_field, params) == pytest.approx(0.125, abs=2 * H2)


def test_energy_reductions(exp_field):
    free = ModelParams(lam=0, p=2, k=0, r=2, validation=True)
    assert energy(exp_field, free) == pytest.approx(0.5, abs=H2)
    assert energy(Grid(10.0, 64).zeros(), ModelParams(lam=1, p=2, k=1, r=2)) == 0


def test_theta_functionals_of_exponential(exp_field):
    params = ModelParams(lam=1, p=2, k=1, r=3, a=1)
    assert default_b(params) == -5
    theta, theta1, rho = theta_functionals(exp_field, params)
    assert theta == pytest.approx(0.125, abs=2 * H2)
    assert theta1 == pytest.approx(0.5, abs=10 * H2)
    assert 8 * theta >= theta1


def test_theta_functionals_zero_and_free(exp_field):
    params = ModelParams(lam=1, p=2, k=1, r=3, a=1)
    assert theta_functionals(Grid(10.0, 64).zeros(), params) == (0.0, 0.0, 0.0)
    free = ModelParams(lam=0, p=2, k=1, r=3, a=1, validation=True)
    theta, theta1, _ = theta_functionals(exp_field, free)
    assert theta >= 0 and theta1 >= 0


def test_theta_rejects_b_at_or_above_a(exp_field):
    with pytest.raises(ValueError):
        theta_functionals(exp_field, ModelParams(lam=1, p=2, k=1, r=3, a=0.5), b=1.0)


def test_default_b_fallbacks():
    # b from the blow-up formula exceeds a for r < 2, and is singular at r = 2, p = 2
    assert default_b(ModelParams(lam=1, p=2, k=1, r=1, a=1)) == 0
    assert default_b(ModelParams(lam=1, p=2, k=1, r=2, a=1)) == 0
    assert default_b(ModelParams(lam=1, p=2, k=1, r=4, a=0)) == 0


def test_virial_of_chirped_gaussian():
    f = chirped_gaussian(Grid(40.0, 4096), chirp=1.0)
    I, V, y = virial(f)
    assert I == pytest.approx(math.sqrt(math.pi) / 4, abs=H2)
    assert y == pytest.approx(math.sqrt(math.pi) / 2, abs=2 * H2)
    assert V == pytest.approx(-2 * math.sqrt(math.pi), abs=8 * H2)
    assert y == -V / 4


def test_virial_of_real_and_zero_fields(exp_field):
    I, V, y = virial(exp_field)
    assert V == 0.0 and y == 0.0 and I > 0
    assert virial(Grid(10.0, 64).zeros()) == (0.0, 0.0, 0.0)


def test_slack_floor():
    assert inequality_slack(1e-6, 1e-6, 1.0) == 1e-8
    assert inequality_slack(0.1, 0.1, 2.0) == pytest.approx(0.2)


def _zero_series():
    params = ModelParams(lam=1, p=2, k=1, r=3, a=0.5)
    return params, run_simulation(Grid(10.0, 64).zeros(), 0.1, params, SchemeConfig(dt0=0.01), sample_every=0.01)


def test_zero_solution_has_zero_residuals():
    params, series = _zero_series()
    table = identity_residuals(series, params)
    assert all(v == 0 for v in table.max_abs().values())


def test_too_few_samples():
    params, series = _zero_series()
    with pytest.raises(ValueError):
        identity_residuals(series.samples[:2], params)


def test_undamped_mass_is_conserved_to_solver_tolerance():
    params = ModelParams(lam=1, p=2, k=1, r=3, a=0)
    cfg = SchemeConfig(dt0=2e-3)
    u0 = chirped_gaussian(Grid(20.0, 512), 0.5, 0.5)
    series = run_simulation(u0, 0.5, params, cfg, sample_every=0.01)
    dev = identity_residuals(series, params).max_abs()["mass_deviation"]
    assert dev <= 10 * cfg.nl_tol


def test_residuals_shrink_fourfold_under_refinement():
    params = ModelParams(lam=1, p=2, k=1, r=3, a=0.5)
    maxima = []
    for N, dt in ((512, 4e-3), (1024, 2e-3)):
        u0 = chirped_gaussian(Grid(20.0, N), 0.5, 0.3, center=5.0)
        s = run_simulation(u0, 0.6, params, SchemeConfig(dt0=dt), sample_every=10 * dt)
        maxima.append(identity_residuals(s, params).max_abs())
    for name in RESIDUAL_COLUMNS:
        assert maxima[0][name] / maxima[1][name] > 3.5, name


def test_pointwise_relations_on_samples():
    params = ModelParams(lam=1, p=2, k=1, r=3, a=0.5)
    u0 = chirped_gaussian(Grid(20.0, 512), 0.5, 0.5)
    series = run_simulation(u0, 0.3, params, SchemeConfig(dt0=2e-3), sample_every=0.02)
    table = identity_residuals(series, params)
    for s in series.samples:
        assert s.y == -s.V / 4
    assert np.all(table.trace_margin >= -1e-12)
    assert np.all(table.weighted_margin >= -inequality_slack(2e-3, 20 / 512, 1.0))


def test_residual_table_serializes(tmp_path):
    params = ModelParams(lam=1, p=2, k=1, r=3, a=0.5)
    u0 = chirped_gaussian(Grid(20.0, 256), 0.5, 0.5)
    series = run_simulation(u0, 0.1, params, SchemeConfig(dt0=5e-3), sample_every=0.01)
    table = identity_residuals(series, params)
    table.write_csv(tmp_path / "r.csv")
    table.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("interval,t_lo,t_hi,mass_law")
    assert len(lines) == len(series.samples)
    summary = json.loads((tmp_path / "r.json").read_text())
    assert set(RESIDUAL_COLUMNS) <= set(summary)


def test_sample_matches_pieces():
    params = ModelParams(lam=1, p=2, k=1, r=3, a=1)
    f = chirped_gaussian(Grid(20.0, 512), 0.8, 0.4, 1.0)
    s = sample_diagnostics(f, params, t=0.25)
    assert s.E == pytest.approx(energy(f, params), rel=1e-14)
    assert (s.I, s.V, s.y) == virial(f)
    assert (s.theta, s.theta1, s.rho) == pytest.approx(theta_functionals(f, params), rel=1e-14)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from robin_nls.grid import (
    Field,
    Grid,
    GridTailError,
    TruncationWarning,
    boundary_trace,
    check_tail,
    chirped_gaussian,
    norms,
    read_field_csv,
    second_moment,
    write_field_csv,
)


def exp_field(N, L=40.0):
    return Grid(L, N).sample(lambda x: np.exp(-x))


def test_zero_field_is_all_zero():
    f = Grid(10.0, 64).zeros()
    assert norms(f, 2) == (0.0, 0.0, 0.0)
    assert second_moment(f) == 0.0
    assert boundary_trace(f) == 0


def test_exponential_norms_match_closed_forms():
    mass, ux_sq, lp_pp = norms(exp_field(4096), 2)
    h = 40 / 4096
    assert abs(mass - 0.5) < h**2
    assert abs(ux_sq - 0.5) < h**2
    assert abs(lp_pp - 0.25) < h**2


@pytest.mark.parametrize("index, exact", [(0, 0.5), (1, 0.5), (2, 0.25)])
def test_exponential_quadrature_is_second_order(index, exact):
    errs = [abs(norms(exp_field(N, 20.0), 2)[index] - exact) for N in (256, 512, 1024)]
    for coarse, fine in zip(errs, errs[1:]):
        assert math.log2(coarse / fine) == pytest.approx(2.0, abs=0.05)


def test_gaussian_mass_and_moment():
    g = Grid(40.0, 4096)
    f = g.sample(lambda x: np.exp(-x**2 / 2))
    assert norms(f, 2)[0] == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-6)
    assert second_moment(f) == pytest.approx(math.sqrt(math.pi) / 4, abs=1e-6)


def test_shifted_gaussian_moment_converges_at_second_order():
    # an off-centre packet has a nonzero slope at x = 0, so the trapezoid
    # error is a genuine h^2 term
    exact = quad(lambda x: x**2 * math.exp(-((x - 0.5) ** 2)), 0, math.inf, epsabs=1e-14)[0]
    errs = []
    for N in (64, 128, 256):
        g = Grid(12.0, N)
        errs.append(abs(second_moment(g.sample(lambda x: np.exp(-(x - 0.5) ** 2 / 2))) - exact))
    for coarse, fine in zip(errs, errs[1:]):
        assert math.log2(coarse / fine) >= 1.9


def test_moment_increases_under_shift():
    g = Grid(40.0, 2048)
    moments = [second_moment(chirped_gaussian(g, center=c)) for c in (1.0, 2.0, 3.0)]
    assert moments[0] < moments[1] < moments[2]


def test_exponential_trace_and_sharp_trace_inequality():
    f = exp_field(4096)
    mass, ux_sq, _ = norms(f, 2)
    assert boundary_trace(f) == 1
    assert 2 * math.sqrt(mass * ux_sq) == pytest.approx(1.0, abs=(40 / 4096) ** 2)


@settings(max_examples=60, deadline=None)
@given(
    re=arrays(float, 33, elements=st.floats(-10, 10)),
    im=arrays(float, 33, elements=st.floats(-10, 10)),
)
def test_trace_inequality_holds_discretely(re, im):
    values = re + 1j * im
    values[-1] = 0
    f = Field(values, Grid(3.0, 32))
    mass, ux_sq, lp_pp = norms(f, 3)
    assert mass >= 0 and ux_sq >= 0 and lp_pp >= 0
    assert abs(boundary_trace(f)) ** 2 <= 2 * math.sqrt(mass * ux_sq) * (1 + 1e-12) + 1e-12


@settings(max_examples=30, deadline=None)
@given(
    amp=st.floats(0.1, 3),
    chirp=st.floats(-2, 2),
    center=st.floats(0, 4),
    width=st.floats(0.5, 2),
)
def test_weighted_cauchy_schwarz_on_packets(amp, chirp, center, width):
    g = Grid(30.0, 2048)
    f = chirped_gaussian(g, amp, chirp, center, width)
    mass, ux_sq, _ = norms(f, 2)
    slack = 5 * g.h**2 * (mass + ux_sq)
    assert mass <= 2 * math.sqrt(second_moment(f) * ux_sq) + slack


def test_chirp_sign_sets_current_direction():
    from robin_nls.diagnostics import virial

    g = Grid(40.0, 2048)
    assert virial(chirped_gaussian(g, chirp=0.5))[2] > 0
    assert virial(chirped_gaussian(g, chirp=-0.5))[2] < 0


def test_field_rejects_bad_values():
    g = Grid(10.0, 32)
    with pytest.raises(ValueError):
        Field(np.zeros(10), g)
    with pytest.raises(ValueError):
        Field(np.full(33, np.nan), g)
    bad = np.zeros(33, dtype=complex)
    bad[-1] = 1
    with pytest.raises(ValueError):
        Field(bad, g)


def test_field_is_immutable():
    f = exp_field(64)
    with pytest.raises(ValueError):
        f.values[0] = 2


@pytest.mark.parametrize("L, N", [(0, 64), (-1, 64), (10, 8), (10, 32.5)])
def test_grid_rejects_bad_shapes(L, N):
    with pytest.raises(ValueError):
        Grid(L, N)


def test_csv_round_trip(tmp_path):
    f = chirped_gaussian(Grid(10.0, 64), 0.7, 0.3, 1.0)
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    assert read_field_csv(path) == f


def test_tail_watchdog():
    g = Grid(10.0, 256)
    wide = chirped_gaussian(g, center=8.0)
    with pytest.warns(TruncationWarning):
        check_tail(wide)
    with pytest.raises(GridTailError):
        check_tail(wide, strict=True)
    assert check_tail(chirped_gaussian(g, width=0.5)) < 1e-8

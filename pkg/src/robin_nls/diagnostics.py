"""Functionals of a field and residuals of the balance laws they obey.

Every quantity here is computed from the discrete norms of :mod:`grid`:
mass, gradient norm, ``L^{p+2}`` norm, boundary trace, second moment and
the virial current.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .grid import Field, boundary_trace, derivative, norms, second_moment
from .theory import ModelParams, SingularParameterError, blowup_coefficients

__all__ = [
    "DiagnosticsSample",
    "ResidualTable",
    "energy",
    "virial",
    "theta_functionals",
    "default_b",
    "sample_diagnostics",
    "identity_residuals",
    "inequality_slack",
]


@dataclass(frozen=True)
class DiagnosticsSample:
    t: float
    mass: float
    ux_sq: float
    lp_pp: float
    E: float
    I: float
    V: float
    y: float
    theta: float
    theta1: float
    rho: float
    trace_abs: float
    dt_used: float = 0.0

    @property
    def h1_sq(self) -> float:
        return self.mass + self.ux_sq


def energy(f: Field, params: ModelParams) -> float:
    _, ux_sq, lp_pp = norms(f, params.p)
    trace = abs(boundary_trace(f))
    r, p = params.r, params.p
    return ux_sq - 2 * params.lam / (r + 2) * trace ** (r + 2) + 2 * params.k / (p + 2) * lp_pp


def virial(f: Field) -> tuple[float, float, float]:
    """Return ``(I, V, y)`` with ``I = int x^2|u|^2``, ``V = -4 Im int conj(u) x u_x``, ``y = -V/4``."""
    I = second_moment(f)
    g = f.grid
    current = np.dot(g.weights, np.conj(f.values) * g.x * derivative(f)).imag
    # "+ 0.0" turns a signed zero into 0.0 so real fields print as 0.0
    V = -4.0 * float(current) + 0.0
    return I, V, -V / 4.0 + 0.0


def default_b(params: ModelParams) -> float:
    """Blow-up coefficient ``b`` when it lies below ``a``, else 0.

    The weighted energy identity holds for every ``b``; the blow-up value
    only matters where the certificate can apply. Outside that range (or
    where its formula is singular) ``b = 0`` keeps the weights finite.
    """
    try:
        b = blowup_coefficients(params)[1]
    except SingularParameterError:
        return 0.0
    if b < params.a or (params.a == 0 and b == 0):
        return b
    return 0.0


def _weights(params: ModelParams, b: float) -> tuple[float, float, float]:
    """``(2a-2b, boundary ratio, power ratio)`` entering theta and rho."""
    a, r, p = params.a, params.r, params.p
    if a > b:
        gap = 2 * a - 2 * b
        return gap, (a * (r + 2) - 2 * b) / gap, (a * (p + 2) - 2 * b) / gap
    if a == 0 and b == 0:
        # limit along b = beta * a with beta from the blow-up coefficient
        M = max(8.0, 2.0 * p)
        denom = 4 * (r + 2) - 2 * M
        beta = (r + 2) * (4 - M) / denom if denom != 0 else 0.0
        gap1 = 2 - 2 * beta
        return 0.0, ((r + 2) - 2 * beta) / gap1, ((p + 2) - 2 * beta) / gap1
    raise ValueError(f"theta functionals need a > b, got a={a}, b={b}")


def _theta_terms(X, P, B, params, b):
    r, p, k, lam = params.r, params.p, params.k, params.lam
    gap, cb, cp = _weights(params, b)
    boundary = 2 * lam / (r + 2) * B
    power = 2 * k / (p + 2) * P
    theta = X - cb * boundary + power
    theta1 = 8 * X + 4 * k * p / (p + 2) * P - 4 * lam * B
    rho = -gap * (X - cb * boundary + cp * power)
    return theta, theta1, rho


def theta_functionals(f: Field, params: ModelParams, b: float | None = None) -> tuple[float, float, float]:
    """Return ``(theta, theta1, rho)``.

    ``theta`` and ``rho`` need ``a > b``; with ``a = b = 0`` the weights are
    taken in the limit ``b = beta a`` along the blow-up coefficient and
    ``rho`` vanishes. ``theta1`` does not depend on ``b``.
    """
    if b is None:
        b = default_b(params)
    _, X, P = norms(f, params.p)
    B = abs(boundary_trace(f)) ** (params.r + 2)
    return _theta_terms(X, P, B, params, b)


def sample_diagnostics(
    f: Field, params: ModelParams, t: float = 0.0, b: float | None = None, dt_used: float = 0.0
) -> DiagnosticsSample:
    if b is None:
        b = default_b(params)
    mass, X, P = norms(f, params.p)
    trace = abs(boundary_trace(f))
    B = trace ** (params.r + 2)
    E = X - 2 * params.lam / (params.r + 2) * B + 2 * params.k / (params.p + 2) * P
    I, V, y = virial(f)
    theta, theta1, rho = _theta_terms(X, P, B, params, b)
    return DiagnosticsSample(
        t=float(t), mass=mass, ux_sq=X, lp_pp=P, E=E, I=I, V=V, y=y,
        theta=theta, theta1=theta1, rho=rho, trace_abs=trace, dt_used=float(dt_used),
    )


def inequality_slack(dt: float, h: float, scale: float) -> float:
    return max(1e-8, 5 * (dt**2 + h**2) * scale)


RESIDUAL_COLUMNS = (
    "mass_law",
    "energy_rate",
    "energy_integral",
    "moment_rate",
    "virial_rate",
)
MARGIN_COLUMNS = (
    "theta_margin",
    "running_theta_margin",
    "trace_margin",
    "weighted_margin",
)


@dataclass
class ResidualTable:
    t_lo: np.ndarray
    t_hi: np.ndarray
    mass_law: np.ndarray
    energy_rate: np.ndarray
    energy_integral: np.ndarray
    moment_rate: np.ndarray
    virial_rate: np.ndarray
    # margins are per sample (>= -slack means the inequality holds)
    t: np.ndarray
    mass_deviation: np.ndarray
    theta_margin: np.ndarray
    running_theta_margin: np.ndarray
    running_theta: np.ndarray
    trace_margin: np.ndarray
    weighted_margin: np.ndarray
    M: float
    b: float

    def max_abs(self) -> dict[str, float]:
        out = {name: float(np.max(np.abs(getattr(self, name)), initial=0.0)) for name in RESIDUAL_COLUMNS}
        out["mass_deviation"] = float(np.max(np.abs(self.mass_deviation), initial=0.0))
        return out

    def summary(self) -> dict:
        out = {}
        for name in RESIDUAL_COLUMNS + ("mass_deviation",):
            values = np.abs(getattr(self, name))
            out[name] = {
                "max": float(values.max(initial=0.0)),
                "mean": float(values.mean()) if values.size else 0.0,
            }
        for name in MARGIN_COLUMNS:
            values = getattr(self, name)
            out[name] = {"min": float(values.min(initial=math.inf)) if values.size else None}
        return out

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval", "t_lo", "t_hi", *RESIDUAL_COLUMNS, *MARGIN_COLUMNS])
            for n in range(len(self.t_lo)):
                row = [n, self.t_lo[n], self.t_hi[n]]
                row += [getattr(self, c)[n] for c in RESIDUAL_COLUMNS]
                # margins reported at the right end of each interval
                row += [getattr(self, c)[n + 1] for c in MARGIN_COLUMNS]
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _column(samples, name):
    return np.array([getattr(s, name) for s in samples], dtype=float)


def identity_residuals(series, params: ModelParams, b: float | None = None) -> ResidualTable:
    """Residuals of the balance laws along a sampled trajectory.

    Rates use one-sided differences between consecutive samples balanced
    against the trapezoid average of the right-hand side, which is centred
    at the interval midpoint, so all residuals are second order in the
    sample spacing. Only the leading stretch of uniformly spaced samples is
    used (a run that stops early on blow-up ends off-cadence).
    """
    samples = list(series.samples if hasattr(series, "samples") else series)
    if len(samples) < 3:
        raise ValueError("identity residuals need at least 3 samples")
    t = _column(samples, "t")
    steps = np.diff(t)
    uniform = np.isclose(steps, steps[0], rtol=1e-6, atol=0)
    n_uniform = len(steps) if uniform.all() else int(np.argmin(uniform))
    samples = samples[: n_uniform + 1]
    if len(samples) < 3:
        raise ValueError("fewer than 3 uniformly spaced samples")
    t = t[: n_uniform + 1]

    if b is None:
        b = default_b(params)
    a, r, p, k, lam = params.a, params.r, params.p, params.k, params.lam
    M = max(8.0, 2.0 * p)

    mass = _column(samples, "mass")
    X = _column(samples, "ux_sq")
    P = _column(samples, "lp_pp")
    E = _column(samples, "E")
    I = _column(samples, "I")
    V = _column(samples, "V")
    theta = _column(samples, "theta")
    theta1 = _column(samples, "theta1")
    rho = _column(samples, "rho")
    B = _column(samples, "trace_abs") ** (r + 2)
    trace2 = _column(samples, "trace_abs") ** 2

    dt = np.diff(t)

    def avg(q):
        return 0.5 * (q[1:] + q[:-1])

    def rate(q):
        return np.diff(q) / dt

    mass0 = mass[0] if mass[0] > 0 else 1.0
    mass_law = (rate(mass) + 2 * a * avg(mass)) / mass0
    energy_rhs = -2 * a * E - 2 * a * k * p / (p + 2) * P + 2 * a * lam * r / (r + 2) * B
    energy_rate = rate(E) - avg(energy_rhs)

    weight = np.exp(2 * b * t)
    cum_rho = np.concatenate([[0.0], np.cumsum(dt * avg(weight * rho))])
    energy_integral = (E * weight - E[0] - cum_rho)[1:]

    moment_rate = rate(I) + 2 * a * avg(I) - avg(V)
    virial_rate = rate(V) + 2 * a * avg(V) - avg(theta1)

    running = np.concatenate([[0.0], np.cumsum(dt * avg(theta * weight))])
    mass_dev = (mass - np.exp(-2 * a * t) * mass[0]) / mass0

    return ResidualTable(
        t_lo=t[:-1], t_hi=t[1:],
        mass_law=mass_law, energy_rate=energy_rate, energy_integral=energy_integral,
        moment_rate=moment_rate, virial_rate=virial_rate,
        t=t, mass_deviation=mass_dev,
        theta_margin=M * theta - theta1,
        running_theta_margin=-running,
        running_theta=running,
        trace_margin=2 * np.sqrt(mass * X) - trace2,
        weighted_margin=2 * np.sqrt(I * X) - mass,
        M=M, b=float(b),
    )


def samples_to_rows(samples):
    names = [f.name for f in fields(DiagnosticsSample)]
    return names, [[getattr(s, n) for n in names] for s in samples]


def sample_dict(s: DiagnosticsSample) -> dict:
    return asdict(s)

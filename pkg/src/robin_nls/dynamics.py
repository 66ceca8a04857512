"""Time integration of the damped half-line NLS with a nonlinear Robin source.

The main integrator is Crank-Nicolson on the uniform grid. The boundary
condition ``u_x(0) = -lam |u(0)|^r u(0)`` eliminates a ghost node through
``(u_1 - u_{-1}) / (2h)``, which turns the first row of the Laplacian into
``2(u_1 - u_0)/h^2 + 2 lam |u_0|^r u_0 / h``. Each step solves for the
time-centred state ``w = (u^{n+1} + u^n)/2``:

* Picard iteration freezes the interior coefficient ``k |w|^p`` (a real
  diagonal, so every iterate conserves discrete mass exactly);
* the remaining system is tridiagonal plus one scalar nonlinearity in the
  boundary unknown, reduced to a 2x2 real Newton solve by superposition.

``oracle_run`` integrates the same semi-discrete system with an adaptive
explicit Runge-Kutta pair and serves as an independent cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lapack

from .diagnostics import DiagnosticsSample, default_b, sample_diagnostics, samples_to_rows
from .grid import Field, Grid, check_tail, norms, write_field_csv
from .theory import ModelParams

__all__ = [
    "SchemeConfig",
    "TimeSeries",
    "Termination",
    "NonlinearSolveFailure",
    "OracleFailure",
    "ManufacturedSolution",
    "cn_step",
    "run_simulation",
    "oracle_run",
    "rhs",
    "mms_forcing",
    "profile_solution",
    "refined",
    "SERIES_COLUMNS",
]

SCHEMES = {"CN": 0.5, "BackwardEuler": 1.0, "OracleRK": None}

SERIES_COLUMNS = (
    "t", "mass", "ux_sq", "lp_pp", "E", "I", "V", "y",
    "theta", "theta1", "trace_abs", "dt_used",
)


class NonlinearSolveFailure(RuntimeError):
    def __init__(self, message, residual=math.inf):
        super().__init__(message)
        self.residual = residual


class OracleFailure(RuntimeError):
    pass


class Termination(str, Enum):
    COMPLETED = "Completed"
    BLOWUP = "BlowupDetected"
    FAILURE = "SolverFailure"


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping controls.

    ``scheme`` is ``"CN"`` (default), ``"OracleRK"`` (explicit adaptive
    Runge-Kutta, short windows only) or ``"BackwardEuler"``, a first-order
    variant kept for negative testing of the convergence checks.
    The blow-up threshold is ``blowup_threshold`` when given, else
    ``blowup_factor`` times the initial ``||u_x||^2``.
    """

    dt0: float = 1e-3
    scheme: str = "CN"
    nl_tol: float = 1e-12
    nl_max_iter: int = 50
    adapt: bool = False
    dt_min: float = 1e-9
    blowup_factor: float = 1e6
    blowup_threshold: float | None = None
    oracle_tol: float = 1e-9
    forcing: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {sorted(SCHEMES)}")
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if not 0 < self.dt_min <= self.dt0:
            raise ValueError("need 0 < dt_min <= dt0")
        if not self.nl_tol > 0:
            raise ValueError("nl_tol must be positive")
        if self.nl_max_iter < 1:
            raise ValueError("nl_max_iter must be at least 1")

    @property
    def theta(self) -> float:
        return SCHEMES[self.scheme]


def refined(grid: Grid, cfg: SchemeConfig, levels: int = 1) -> tuple[Grid, SchemeConfig]:
    """Halve ``h`` and ``dt`` ``levels`` times."""
    f = 2**levels
    return grid.refine(levels), replace(cfg, dt0=cfg.dt0 / f, dt_min=min(cfg.dt_min, cfg.dt0 / f))


# -- semi-discrete operator ---------------------------------------------------


def _laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """Neumann-ghost / Dirichlet Laplacian on the unknowns ``u[0:N]``."""
    out = np.empty_like(u)
    out[0] = 2 * (u[1] - u[0])
    out[1:-1] = u[:-2] - 2 * u[1:-1] + u[2:]
    out[-1] = u[-2] - 2 * u[-1]
    return out / h**2


def rhs(u: np.ndarray, t: float, params: ModelParams, grid: Grid, forcing=None) -> np.ndarray:
    """``du/dt`` of the semi-discrete system for the unknowns at ``x_0 .. x_{N-1}``."""
    h = grid.h
    D2 = _laplacian(u, h)
    D2[0] += 2 * params.lam / h * abs(u[0]) ** params.r * u[0]
    out = -1j * D2 + 1j * params.k * np.abs(u) ** params.p * u - params.a * u
    if forcing is not None:
        out -= 1j * forcing(grid.x[:-1], t)
    return out


# -- implicit step ------------------------------------------------------------


def _boundary_solve(alpha, gamma, c, r, s0, tol=1e-14, max_iter=60):
    """Solve ``s + i gamma c |s|^r s = alpha`` for complex ``s`` by Newton."""
    if c == 0:
        return alpha

    def G(s):
        return s + 1j * gamma * c * abs(s) ** r * s - alpha

    s = complex(s0)
    g = G(s)
    scale = max(1.0, abs(alpha))
    for _ in range(max_iter):
        if abs(g) <= tol * scale:
            return s
        rho = abs(s)
        q = rho**r
        if rho > 0:
            dq = r * rho ** (r - 2)
            col_re = 1 + 1j * gamma * c * (q + s * dq * s.real)
            col_im = 1j + 1j * gamma * c * (1j * q + s * dq * s.imag)
        else:
            col_re = 1 + 1j * gamma * c * q
            col_im = 1j + 1j * gamma * c * 1j * q
        J = np.array([[col_re.real, col_im.real], [col_re.imag, col_im.imag]])
        try:
            dx, dy = np.linalg.solve(J, [-g.real, -g.imag])
        except np.linalg.LinAlgError as exc:
            raise NonlinearSolveFailure("singular boundary Jacobian", abs(g)) from exc
        step = complex(dx, dy)
        lam = 1.0
        for _ in range(40):
            trial = s + lam * step
            g_trial = G(trial)
            if abs(g_trial) < abs(g) or abs(g_trial) <= tol * scale:
                break
            lam *= 0.5
        else:
            # no descent possible; accept if already at roundoff
            if abs(g) <= 1e3 * tol * scale:
                return s
            raise NonlinearSolveFailure("boundary Newton stalled", abs(g))
        s, g = trial, g_trial
    if abs(g) <= 1e3 * tol * scale:
        return s
    raise NonlinearSolveFailure("boundary Newton did not converge", abs(g))


def _boundary_response(dl, d, du, tol=1e-30):
    """``T^{-1} e_0`` for the tridiagonal ``T``.

    The column decays geometrically away from ``x = 0``; it is solved on the
    shortest prefix where it has fallen below ``tol`` (relative), which keeps
    the elimination out of subnormal arithmetic.
    """
    n = d.size
    m = min(n, 256)
    while True:
        rhs_ = np.zeros((m, 1), dtype=complex)
        rhs_[0, 0] = 1.0
        _, _, _, z, info = lapack.zgtsv(dl[: m - 1], d[:m], du[: m - 1], rhs_)
        if info != 0:
            raise NonlinearSolveFailure(f"tridiagonal solve failed (info={info})")
        z = z[:, 0]
        if m == n or abs(z[-1]) <= tol * abs(z[0]):
            out = np.zeros(n, dtype=complex)
            out[:m] = z
            return out
        m = min(n, 4 * m)


def _implicit_step(u, t, dt, params, grid, cfg, guess=None):
    """One theta-method step on the unknowns ``u[0:N]``; returns ``(u_new, iterations)``.

    Unknown is the theta-point state ``w = theta u^{n+1} + (1 - theta) u^n``
    solving ``(w - u^n) / (theta dt) = F(w)``.
    """
    theta = cfg.theta
    h = grid.h
    n = u.size
    inv = 1.0 / (theta * dt)
    off = 1j / h**2
    dl = np.full(n - 1, off, dtype=complex)
    du = np.full(n - 1, off, dtype=complex)
    du[0] = 2 * off
    base_diag = inv + params.a - 2j / h**2

    b = inv * u
    if cfg.forcing is not None:
        b = b - 1j * cfg.forcing(grid.x[:-1], t + theta * dt)
    b = b.reshape(n, 1)
    c = 2 * params.lam / h
    r = params.r

    w = u.copy() if guess is None else guess.copy()
    nonlinear = params.k != 0
    resid = math.inf
    z2 = None
    for it in range(1, cfg.nl_max_iter + 1):
        d = base_diag - 1j * params.k * np.abs(w) ** params.p if nonlinear else np.full(n, base_diag)
        _, _, _, z, info = lapack.zgtsv(dl, d, du, b)
        if info != 0:
            raise NonlinearSolveFailure(f"tridiagonal solve failed (info={info})")
        z1 = z[:, 0]
        if c != 0:
            if z2 is None or nonlinear:
                z2 = _boundary_response(dl, d, du)
            s = _boundary_solve(z1[0], z2[0], c, r, w[0])
            w_new = z1 - 1j * c * abs(s) ** r * s * z2
            w_new[0] = s
        else:
            w_new = z1
        if not np.all(np.isfinite(w_new)):
            raise NonlinearSolveFailure("non-finite iterate")
        resid = float(np.max(np.abs(w_new - w)))
        w = w_new
        if not nonlinear or resid <= cfg.nl_tol * max(1.0, float(np.max(np.abs(w)))):
            return (w - (1 - theta) * u) / theta, it
    raise NonlinearSolveFailure(
        f"Picard iteration did not converge in {cfg.nl_max_iter} iterations", resid
    )


def cn_step(state: Field, t: float, dt: float, params: ModelParams, cfg: SchemeConfig | None = None) -> Field:
    """Advance ``state`` from ``t`` to ``t + dt`` with one implicit step."""
    cfg = cfg or SchemeConfig()
    if not dt > 0:
        raise ValueError("dt must be positive")
    if cfg.theta is None:
        raise ValueError("cn_step needs an implicit scheme")
    u_new, _ = _implicit_step(state.values[:-1], t, dt, params, state.grid, cfg)
    return Field(np.append(u_new, 0.0), state.grid)


# -- runs ---------------------------------------------------------------------


@dataclass
class TimeSeries:
    samples: list[DiagnosticsSample]
    termination: Termination
    t_final: float
    params: ModelParams
    grid: Grid
    cfg: SchemeConfig
    threshold: float = math.inf
    snapshots: list[tuple[float, Field]] = field(default_factory=list)
    final: Field | None = None
    message: str = ""
    steps: int = 0
    rejected: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SERIES_COLUMNS)
            for s in self.samples:
                writer.writerow([repr(float(getattr(s, c))) for c in SERIES_COLUMNS])

    def write_snapshots(self, directory) -> list[Path]:
        directory = Path(directory)
        paths = []
        for i, (t, f) in enumerate(self.snapshots):
            path = directory / f"snapshot_{i:04d}.csv"
            write_field_csv(f, path)
            paths.append(path)
        return paths


def _blowup_threshold(cfg: SchemeConfig, ux0: float) -> float:
    if cfg.blowup_threshold is not None:
        return cfg.blowup_threshold
    return cfg.blowup_factor * ux0 if ux0 > 0 else math.inf


def _sample_times(t_end, every):
    if every is None or every <= 0:
        return [t_end]
    n = int(math.floor(t_end / every + 1e-9))
    times = [k * every for k in range(1, n + 1)]
    if not times or times[-1] < t_end * (1 - 1e-12):
        times.append(t_end)
    return times


def run_simulation(
    u0: Field,
    t_end: float,
    params: ModelParams,
    cfg: SchemeConfig | None = None,
    sample_every: float | None = None,
    snapshot_every: float | None = None,
) -> TimeSeries:
    """Integrate from ``u0`` up to ``t_end``.

    Diagnostics are recorded at multiples of ``sample_every``. The run
    stops early with ``BlowupDetected`` once ``||u_x||^2`` exceeds the
    threshold, or with ``SolverFailure`` when even ``dt_min`` cannot be
    taken; neither raises. With ``cfg.adapt`` the step follows
    ``dt0 / (1 + ||u_x||^2 / ||u_x(0)||^2)`` clipped to ``[dt_min, dt0]``.
    """
    cfg = cfg or SchemeConfig()
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if cfg.scheme == "OracleRK":
        return oracle_run(u0, t_end, params, cfg.oracle_tol, sample_every=sample_every, forcing=cfg.forcing)
    check_tail(u0, 0)
    grid = u0.grid
    b = default_b(params)
    _, ux0, _ = norms(u0, params.p)
    threshold = _blowup_threshold(cfg, ux0)
    samples = [sample_diagnostics(u0, params, 0.0, b)]
    snapshots = [(0.0, u0)] if snapshot_every else []
    series = TimeSeries(samples, Termination.COMPLETED, 0.0, params, grid, cfg, threshold, snapshots, u0)
    if t_end == 0:
        return series

    targets = _sample_times(t_end, sample_every)
    snap_targets = _sample_times(t_end, snapshot_every) if snapshot_every else []
    snap_i = 0
    u = u0.values[:-1].copy()
    u_prev, dt_prev = None, None
    t = 0.0
    ux = ux0
    for target in targets:
        while t < target:
            dt_base = cfg.dt0
            if cfg.adapt and ux0 > 0:
                dt_base = min(cfg.dt0, max(cfg.dt_min, cfg.dt0 / (1 + ux / ux0)))
            remaining = target - t
            dt = remaining if remaining <= dt_base * (1 + 1e-6) else dt_base
            while True:
                guess = None
                if u_prev is not None:
                    guess = u + cfg.theta * (dt / dt_prev) * (u - u_prev)
                try:
                    u_new, _ = _implicit_step(u, t, dt, params, grid, cfg, guess)
                    break
                except NonlinearSolveFailure as exc:
                    series.rejected += 1
                    dt *= 0.5
                    if dt < cfg.dt_min:
                        series.termination = Termination.FAILURE
                        series.message = f"{exc} (residual {exc.residual:.3e}) at t={t:.6g}"
                        series.t_final = t
                        series.final = Field(np.append(u, 0.0), grid)
                        return series
            u_prev, dt_prev, u = u, dt, u_new
            t = target if dt == remaining else t + dt
            series.steps += 1
            ux = float(np.sum(np.abs(np.diff(np.append(u, 0.0))) ** 2) / grid.h)
            if ux > threshold:
                f = Field(np.append(u, 0.0), grid)
                samples.append(sample_diagnostics(f, params, t, b, dt))
                series.termination = Termination.BLOWUP
                series.message = f"||u_x||^2 = {ux:.6g} exceeded {threshold:.6g}"
                series.t_final = t
                series.final = f
                return series
            if snap_i < len(snap_targets) and t >= snap_targets[snap_i] * (1 - 1e-12):
                snapshots.append((t, Field(np.append(u, 0.0), grid)))
                snap_i += 1
        f = Field(np.append(u, 0.0), grid)
        samples.append(sample_diagnostics(f, params, t, b, dt))
    series.t_final = t
    series.final = Field(np.append(u, 0.0), grid)
    return series


def oracle_run(
    u0: Field,
    t_end: float,
    params: ModelParams,
    tol: float = 1e-9,
    sample_every: float | None = None,
    forcing=None,
) -> TimeSeries:
    """Same spatial operator, integrated with the explicit DOP853 pair.

    Explicit stability limits ``dt`` to roughly ``h^2``; use short windows
    and coarse grids.
    """
    grid = u0.grid
    b = default_b(params)
    samples = [sample_diagnostics(u0, params, 0.0, b)]
    cfg = SchemeConfig(scheme="OracleRK", oracle_tol=tol)
    series = TimeSeries(samples, Termination.COMPLETED, 0.0, params, grid, cfg, final=u0)
    if t_end == 0:
        return series
    targets = _sample_times(t_end, sample_every)
    scale = max(1.0, float(np.max(np.abs(u0.values))))
    sol = solve_ivp(
        lambda t, y: rhs(y, t, params, grid, forcing),
        (0.0, t_end),
        u0.values[:-1].astype(complex),
        method="DOP853",
        t_eval=targets,
        rtol=tol,
        atol=tol * scale,
    )
    if sol.status != 0:
        raise OracleFailure(sol.message)
    f = u0
    for k, t in enumerate(sol.t):
        f = Field(np.append(sol.y[:, k], 0.0), grid)
        samples.append(sample_diagnostics(f, params, t, b))
    series.t_final = float(sol.t[-1])
    series.final = f
    series.steps = int(sol.nfev)
    return series


# -- manufactured solutions ---------------------------------------------------


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact field ``u(x, t)`` with closed-form ``u_t``, ``u_x`` and ``u_xx``."""

    u: Callable
    u_t: Callable | None = None
    u_x: Callable | None = None
    u_xx: Callable | None = None


def profile_solution(omega: complex = -1.0) -> ManufacturedSolution:
    """``u = e^{omega t} x^2 e^{-x}``; it satisfies ``u(0,t) = u_x(0,t) = 0``."""

    def u(x, t):
        return np.exp(omega * t) * x**2 * np.exp(-x)

    def u_t(x, t):
        return omega * u(x, t)

    def u_x(x, t):
        return np.exp(omega * t) * (2 * x - x**2) * np.exp(-x)

    def u_xx(x, t):
        return np.exp(omega * t) * (2 - 4 * x + x**2) * np.exp(-x)

    return ManufacturedSolution(u, u_t, u_x, u_xx)


def _fd_t(fn, x, t, d=1e-3):
    return (-fn(x, t + 2 * d) + 8 * fn(x, t + d) - 8 * fn(x, t - d) + fn(x, t - 2 * d)) / (12 * d)


def _fd_x(fn, x, t, d=1e-3):
    return (-fn(x + 2 * d, t) + 8 * fn(x + d, t) - 8 * fn(x - d, t) + fn(x - 2 * d, t)) / (12 * d)


def _fd_xx(fn, x, t, d=1e-3):
    return (
        -fn(x + 2 * d, t) + 16 * fn(x + d, t) - 30 * fn(x, t) + 16 * fn(x - d, t) - fn(x - 2 * d, t)
    ) / (12 * d**2)


def mms_forcing(exact, params: ModelParams, check_times=(0.0, 0.5, 1.0), tol=1e-12):
    """Source ``f = i u_t - u_xx + k|u|^p u + i a u`` that makes ``exact`` a solution.

    ``exact`` is a :class:`ManufacturedSolution` or a bare callable
    ``u(x, t)``; missing derivatives fall back to fourth-order finite
    differences. The exact field must satisfy ``u(0,t) = u_x(0,t) = 0`` so the
    nonlinear boundary condition holds without a boundary source.
    """
    if not isinstance(exact, ManufacturedSolution):
        exact = ManufacturedSolution(exact)
    u = exact.u
    u_t = exact.u_t or (lambda x, t: _fd_t(u, x, t))
    u_x = exact.u_x or (lambda x, t: _fd_x(u, x, t))
    u_xx = exact.u_xx or (lambda x, t: _fd_xx(u, x, t))
    zero = np.zeros(1)
    for t in check_times:
        v0 = abs(complex(np.asarray(u(zero, t)).ravel()[0]))
        d0 = abs(complex(np.asarray(u_x(zero, t)).ravel()[0]))
        if v0 > tol or d0 > tol:
            raise ValueError(
                f"manufactured solution violates boundary compatibility at t={t}: "
                f"|u(0)|={v0:.3e}, |u_x(0)|={d0:.3e}"
            )
    k, p, a = params.k, params.p, params.a

    def forcing(x, t):
        ue = u(x, t)
        return 1j * u_t(x, t) - u_xx(x, t) + k * np.abs(ue) ** p * ue + 1j * a * ue

    return forcing


def series_rows(series: TimeSeries):
    return samples_to_rows(series.samples)

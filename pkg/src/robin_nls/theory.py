"""Closed-form parameter logic for the damped half-line NLS with a nonlinear Robin source.

The model is ::

    i u_t - u_xx + k |u|^p u + i a u = 0,   x > 0
    u_x(0, t) = -lam |u(0, t)|^r u(0, t)

This module classifies ``(r, p)`` into the five regimes of the phase table,
evaluates the blow-up coefficients and predicted blow-up times, and builds
the smallness certificates used by the small-data decay estimates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

from .grid import Field, check_tail

__all__ = [
    "ModelParams",
    "Row",
    "RegimeClass",
    "BlowupCertificate",
    "SmallnessReport",
    "SingularParameterError",
    "RegimeError",
    "InconsistentCertificateError",
    "classify_regime",
    "blowup_coefficients",
    "mu_exponent",
    "critical_exponent",
    "check_blowup_hypotheses",
    "predicted_blowup_time",
    "smallness_report",
    "supremum_smallness_bound",
]

DEFAULT_EPSILON_FRACTION = 0.1


class SingularParameterError(ValueError):
    """The denominator ``4(r+2) - 2M`` of the blow-up coefficient vanishes."""


class RegimeError(ValueError):
    pass


class InconsistentCertificateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model.

    ``lam``, ``p``, ``k``, ``r`` must be positive and ``a`` nonnegative.
    ``validation=True`` additionally admits ``lam = 0`` and/or ``k = 0``; that
    mode exists only for oracle reductions (free evolution, manufactured
    solutions).
    """

    lam: float
    p: float
    k: float
    r: float
    a: float = 0.0
    validation: bool = False

    def __post_init__(self):
        for name in ("lam", "p", "k", "r", "a"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite real, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.p <= 0:
            raise ValueError(f"interior power p must be positive, got {self.p}")
        if self.r <= 0:
            raise ValueError(f"boundary power r must be positive, got {self.r}")
        if self.a < 0:
            raise ValueError(f"damping a must be nonnegative, got {self.a}")
        floor_ok = (lambda v: v >= 0) if self.validation else (lambda v: v > 0)
        if not floor_ok(self.lam):
            raise ValueError(f"lam={self.lam} not admissible (validation={self.validation})")
        if not floor_ok(self.k):
            raise ValueError(f"k={self.k} not admissible (validation={self.validation})")

    def replace(self, **changes) -> "ModelParams":
        return ModelParams(**{**asdict(self), **changes})


class Row(str, Enum):
    R1 = "R1"  # r < 2
    R2 = "R2"  # 2 <= r < p/2
    R3 = "R3"  # r = 2, p <= 4
    R4 = "R4"  # r > 2, p/2 <= r <= p - 2
    R5 = "R5"  # r > 2, r > p - 2


ROW_CONDITIONS = {
    Row.R1: "r < 2",
    Row.R2: "2 <= r < p/2",
    Row.R3: "r = 2, p <= 4",
    Row.R4: "r > 2, p/2 <= r <= p-2",
    Row.R5: "r > 2, r > p-2",
}


@dataclass(frozen=True)
class RegimeClass:
    row: Row
    blowup_status: str  # "No" | "Open" | "Yes-conditional"
    global_status: str  # "Yes" | "SmallDataOnly" | "Open"
    rate_label: str
    nominal_rate: float | None
    epsilon: float
    predicted_rate: float | None
    mu: float | None = None

    @property
    def small_data_only(self) -> bool:
        return self.global_status == "SmallDataOnly"


def _row_of(r: float, p: float) -> Row:
    if r < 2:
        return Row.R1
    if r < p / 2:
        return Row.R2
    if r == 2:
        # r = 2 and r >= p/2 means p <= 4
        return Row.R3
    if r <= p - 2:
        return Row.R4
    return Row.R5


def classify_regime(params: ModelParams, epsilon: float | None = None) -> RegimeClass:
    """Place ``(r, p)`` in exactly one row of the phase table.

    The decay exponent of the H^1 norm is only meaningful for ``a > 0``; with
    ``a = 0`` the rate fields are ``None``. ``epsilon`` defaults to a tenth
    of the nominal rate in the two rows whose rate carries a margin.
    """
    r, p, a = params.r, params.p, params.a
    row = _row_of(r, p)
    mu = mu_exponent(params) if row is Row.R2 else None
    if row is Row.R1:
        blowup, glob, label, nominal = "No", "Yes", "2a-eps", 2 * a
    elif row is Row.R2:
        blowup, glob, label, nominal = "No", "Yes", "a*mu-eps", a * mu
    elif row in (Row.R3, Row.R4):
        blowup, glob, label, nominal = "Open", "SmallDataOnly", "2a (small data)", 2 * a
    else:
        blowup, glob, label, nominal = "Yes-conditional", "SmallDataOnly", "2a (small data)", 2 * a

    if a == 0:
        return RegimeClass(row, blowup, glob, label, None, 0.0, None, mu)
    if row in (Row.R1, Row.R2):
        eps = DEFAULT_EPSILON_FRACTION * nominal if epsilon is None else float(epsilon)
        predicted = nominal - eps
    else:
        eps = 0.0
        predicted = nominal
    return RegimeClass(row, blowup, glob, label, nominal, eps, predicted, mu)


def critical_exponent(p: float) -> float:
    """Conjectured critical boundary power ``max{2, p - 2}``."""
    return max(2.0, p - 2.0)


def blowup_coefficients(params: ModelParams) -> tuple[float, float, float]:
    """Return ``(M, b, kappa)`` with ``M = max{8, 2p}``,
    ``b = a (r+2)(4-M) / (4(r+2) - 2M)`` and ``kappa = (r-2)/2``.

    ``kappa`` may be zero or negative; callers check ``r > 2`` themselves.
    """
    r, p, a = params.r, params.p, params.a
    M = max(8.0, 2.0 * p)
    denom = 4.0 * (r + 2.0) - 2.0 * M
    if abs(denom) <= 1e-12 * max(1.0, 4.0 * (r + 2.0)):
        raise SingularParameterError(
            f"4(r+2) - 2M vanishes at r={r}, p={p} (r = M/2 - 2)"
        )
    b = a * (r + 2.0) * (4.0 - M) / denom
    kappa = (r - 2.0) / 2.0
    return M, b, kappa


def mu_exponent(params: ModelParams) -> float:
    r, p = params.r, params.p
    if not (2 <= r < p / 2):
        raise RegimeError(f"mu is defined for 2 <= r < p/2, got r={r}, p={p}")
    return (p + 2) * (p - 2 * r) / (p * (p + 2) - 2 * r)


@dataclass(frozen=True)
class BlowupCertificate:
    M: float
    b: float
    kappa: float
    E0: float
    I0: float
    y0: float
    cond3_lhs: float
    cond3_rhs: float
    power_condition: bool
    energy_condition: bool
    virial_condition: bool
    hypotheses_met: bool
    T_predicted: float | None = None

    @property
    def V0(self) -> float:
        return -4.0 * self.y0

    def to_dict(self) -> dict:
        return asdict(self)


def check_blowup_hypotheses(params: ModelParams, u0: Field) -> BlowupCertificate:
    """Evaluate the blow-up hypotheses on initial data.

    They are ``r > max{2, p-2}``, ``E(0) <= 0`` and
    ``(a-b)/2 * I(0) < Im int x u0' conj(u0)``. With ``a = 0`` the last one is
    just ``y(0) > 0``. The predicted blow-up time is attached when all three
    hold. Raises ``GridTailError`` if the data is polluted by the truncation.
    """
    from .diagnostics import energy, virial

    check_tail(u0, 2, strict=True)
    M = max(8.0, 2.0 * params.p)
    kappa = (params.r - 2.0) / 2.0
    power_ok = params.r > max(2.0, params.p - 2.0)
    try:
        _, b, _ = blowup_coefficients(params)
    except SingularParameterError:
        # only reachable outside the power condition
        b = math.nan
    E0 = energy(u0, params)
    I0, _, y0 = virial(u0)
    lhs = (params.a - b) / 2.0 * I0 if params.a > 0 else 0.0
    energy_ok = E0 <= 0.0
    virial_ok = bool(lhs < y0)
    met = bool(power_ok and energy_ok and virial_ok)
    cert = BlowupCertificate(
        M=M, b=b, kappa=kappa, E0=E0, I0=I0, y0=y0,
        cond3_lhs=lhs, cond3_rhs=y0,
        power_condition=power_ok, energy_condition=energy_ok,
        virial_condition=virial_ok, hypotheses_met=met,
    )
    if met:
        cert = BlowupCertificate(**{**cert.to_dict(), "T_predicted": predicted_blowup_time(cert, params)})
    return cert


def predicted_blowup_time(cert: BlowupCertificate, params: ModelParams) -> float:
    """Upper bound on the blow-up time.

    Damped: ``-ln(((2a-2b) I(0) + V(0)) / V(0)) / (2a-2b)``, the zero of the
    upper bound on ``e^{2bt} I(t)``. Undamped: ``I(0) / (kappa y(0))``.
    """
    if not cert.hypotheses_met:
        raise InconsistentCertificateError("blow-up hypotheses are not met")
    if params.a > 0:
        rate = 2 * params.a - 2 * cert.b
        V0 = cert.V0
        if not V0 < 0:
            raise InconsistentCertificateError(f"V(0) = {V0} must be negative")
        arg = (rate * cert.I0 + V0) / V0
        if not 0 < arg < 1:
            raise InconsistentCertificateError(f"log argument {arg} outside (0, 1)")
        return -math.log(arg) / rate
    if cert.kappa <= 0 or cert.y0 <= 0:
        raise InconsistentCertificateError("need kappa > 0 and y(0) > 0")
    return cert.I0 / (cert.kappa * cert.y0)


def supremum_smallness_bound(sigma: float) -> float:
    """Right side of ``C1 C2^gamma <= (sigma-1) sigma^(-gamma-1)``."""
    gamma = 1.0 / (sigma - 1.0)
    return (sigma - 1.0) * sigma ** (-gamma - 1.0)


@dataclass(frozen=True)
class SmallnessReport:
    sigma: float
    gamma: float | None
    C1: float
    C2: float
    supremum_applicable: bool
    supremum_ok: bool
    mass_ok: bool
    mass0: float
    E0: float
    mu: float | None = None
    delta: float | None = None
    phi_bound: float | None = None
    # damped variant: the power term picks up a factor 1 + 4r/(r+2)
    C2_damped: float | None = None
    damped_supremum_ok: bool = False
    S_bound: float | None = None
    mass_bound: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def smallness_report(params: ModelParams, u0: Field) -> SmallnessReport:
    from .diagnostics import energy
    from .grid import norms

    r, p, k, lam = params.r, params.p, params.k, params.lam
    mass, ux_sq, lp_pp = norms(u0, p)
    C1 = ux_sq + 2 * k / (p + 2) * lp_pp
    C2 = 2 ** ((r + 4) / 2) * lam / (r + 2) * mass ** ((r + 2) / 4)
    sigma = (r + 2) / 4
    E0 = energy(u0, params)
    mu = mu_exponent(params) if 2 <= r < p / 2 else None
    delta = 2 - 4 * r / p

    mass_ok = bool(4 * lam * mass < 1)
    mass_bound = None
    if mass_ok:
        q = 4 * lam * mass
        mass_bound = abs(E0) / (1 - q) * math.exp(2 * lam * mass / (1 - q))

    if sigma <= 1:
        return SmallnessReport(
            sigma=sigma, gamma=None, C1=C1, C2=C2,
            supremum_applicable=False, supremum_ok=False, mass_ok=mass_ok,
            mass0=mass, E0=E0, mu=mu, delta=delta, mass_bound=mass_bound,
        )

    gamma = 1 / (sigma - 1)
    bound = supremum_smallness_bound(sigma)
    start_ok = ux_sq <= C1
    sup_ok = bool(start_ok and C1 * C2**gamma <= bound)
    C2_damped = (1 + 4 * r / (r + 2)) * C2
    damped_supremum_ok = bool(start_ok and C1 * C2_damped**gamma <= bound)
    return SmallnessReport(
        sigma=sigma, gamma=gamma, C1=C1, C2=C2,
        supremum_applicable=True, supremum_ok=sup_ok, mass_ok=mass_ok,
        mass0=mass, E0=E0, mu=mu, delta=delta,
        phi_bound=sigma / (sigma - 1) * C1 if sup_ok else None,
        C2_damped=C2_damped, damped_supremum_ok=damped_supremum_ok,
        S_bound=2 * (r + 2) / (r - 2) * C1,
        mass_bound=mass_bound,
    )

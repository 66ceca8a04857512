"""Verdicts on finished runs: blow-up versus decay.

Blow-up is accepted only when the threshold crossing survives one level of
joint ``(dt, h)`` refinement; decay is measured by a log-linear fit of the
``H^1`` norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .dynamics import SchemeConfig, Termination, TimeSeries, refined, run_simulation
from .grid import Field, Grid
from .theory import (
    BlowupCertificate,
    ModelParams,
    SingularParameterError,
    SmallnessReport,
    blowup_coefficients,
)

__all__ = [
    "BlowupVerdict",
    "RateFit",
    "VerdictStatus",
    "detect_blowup",
    "fit_decay_rate",
    "check_small_data_bound",
    "small_data_bound",
    "run_with_refinement",
    "needs_refinement",
    "DEFAULT_REFINEMENT_TOL",
    "DEFAULT_EPSILON_FRACTION",
    "ENVELOPE_SLACK",
]

DEFAULT_REFINEMENT_TOL = 0.1
DEFAULT_EPSILON_FRACTION = 0.1
ENVELOPE_SLACK = 0.05
MIN_FIT_SAMPLES = 10
NEAR_THRESHOLD_FRACTION = 0.1


class VerdictStatus:
    BLOWUP = "BlowupDetected"
    NONE = "NoBlowup"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class BlowupVerdict:
    detected: bool
    t_detect: float | None
    refinement_consistent: bool
    envelope_margin: float
    z_min: float
    status: str = VerdictStatus.NONE
    t_refined: float | None = None
    envelope_relative_margin: float = math.nan
    z_max_increase: float = math.nan
    T_predicted: float | None = None

    def __post_init__(self):
        if self.detected != (self.t_detect is not None):
            raise ValueError("t_detect must be given exactly when blow-up is detected")

    def to_dict(self) -> dict:
        return {k: _json_float(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class RateFit:
    slope: float
    window: tuple[float, float]
    goodness: float
    target: float
    epsilon: float
    n_samples: int = 0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError(f"degenerate fit window {self.window}")
        if not 0.0 <= self.goodness <= 1.0:
            raise ValueError(f"goodness {self.goodness} outside [0, 1]")

    @property
    def threshold(self) -> float:
        return -(self.target - self.epsilon)

    @property
    def passed(self) -> bool:
        return self.slope <= self.threshold

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        out["threshold"] = self.threshold
        out["passed"] = self.passed
        return {k: _json_float(v) for k, v in out.items()}


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# -- blow-up ------------------------------------------------------------------


def _crossing_time(series: TimeSeries, threshold: float | None) -> float | None:
    """First sample time at which ``||u_x||^2`` exceeds ``threshold``.

    ``None`` means the run's own threshold, whose crossing is the final
    sample of a run stopped with ``BlowupDetected``.
    """
    level = series.threshold if threshold is None else threshold
    for s in series.samples:
        if s.ux_sq > level:
            return s.t
    return None


def _check_matches(series: TimeSeries, cert: BlowupCertificate) -> None:
    params = series.params
    try:
        M, b, kappa = blowup_coefficients(params)
    except SingularParameterError:
        M, b, kappa = max(8.0, 2.0 * params.p), math.nan, (params.r - 2.0) / 2.0
    same_b = (math.isnan(b) and math.isnan(cert.b)) or math.isclose(b, cert.b, rel_tol=1e-12, abs_tol=1e-12)
    if not (math.isclose(M, cert.M) and same_b and math.isclose(kappa, cert.kappa)):
        raise ValueError("certificate was computed for different model parameters")
    s0 = series.samples[0]
    scale = max(1.0, abs(cert.I0), abs(cert.E0))
    if abs(s0.I - cert.I0) > 1e-9 * scale or abs(s0.E - cert.E0) > 1e-9 * scale:
        raise ValueError("certificate was computed from different initial data")


def detect_blowup(
    series: TimeSeries,
    cert: BlowupCertificate,
    refined_series: TimeSeries | None = None,
    tol: float = DEFAULT_REFINEMENT_TOL,
    threshold: float | None = None,
) -> BlowupVerdict:
    """Decide whether ``series`` shows genuine blow-up.

    ``refined_series`` is the same run at half ``dt`` and ``h``. A crossing
    counts only if the refined run also stopped with ``BlowupDetected``
    within ``tol`` (relative) of the coarse stopping time. ``threshold``
    re-reads the coarse run at a higher ``||u_x||^2`` level; consistency is
    judged on the runs' own stopping times, so raising ``threshold`` can
    only remove detections.

    The envelope (undamped case) is the lower bound
    ``y(0) sqrt(I(0)) / (I(0) - kappa y(0) t)`` on ``||u_x||``; the z-track
    (damped case) is ``e^{2bt} I(t)``.
    """
    _check_matches(series, cert)
    params = series.params
    coarse_stop = series.t_final if series.termination is Termination.BLOWUP else None

    consistent = True
    t_ref = None
    if refined_series is not None:
        if refined_series.params != params:
            raise ValueError("refined run uses different model parameters")
        if refined_series.termination is Termination.BLOWUP:
            t_ref = refined_series.t_final
        if coarse_stop is None:
            consistent = t_ref is None and refined_series.termination is series.termination
        else:
            consistent = t_ref is not None and abs(t_ref - coarse_stop) <= tol * coarse_stop
    elif coarse_stop is not None:
        # without a refined rerun a crossing cannot be confirmed
        consistent = False

    crossing = _crossing_time(series, threshold)
    detected = crossing is not None and consistent
    if detected:
        status = VerdictStatus.BLOWUP
    elif series.termination is Termination.FAILURE or not consistent:
        status = VerdictStatus.INCONCLUSIVE
    else:
        status = VerdictStatus.NONE

    t = series.t
    before = t < series.t_final if series.termination is Termination.BLOWUP else np.ones_like(t, bool)
    if not before.any():
        before[0] = True
    ux = np.sqrt(series.column("ux_sq"))
    I = series.column("I")

    margin, rel_margin = math.nan, math.nan
    if params.a == 0 and cert.kappa > 0 and cert.y0 > 0 and cert.I0 > 0:
        tt = t[before]
        denom = cert.I0 - cert.kappa * cert.y0 * tt
        ok = denom > 0
        if ok.any():
            env = cert.y0 * math.sqrt(cert.I0) / denom[ok]
            gap = ux[before][ok] - env
            margin = float(gap.min())
            rel_margin = float((gap / env).min())

    z_min, z_rise = math.nan, math.nan
    if cert.power_condition and math.isfinite(cert.b):
        z = np.exp(2 * cert.b * t) * I
        z_min = float(z.min())
        z_rise = float(np.max(np.diff(z), initial=-math.inf)) if z.size > 1 else math.nan
        if not math.isfinite(z_rise):
            z_rise = math.nan

    return BlowupVerdict(
        detected=detected,
        t_detect=crossing if detected else None,
        refinement_consistent=consistent,
        envelope_margin=margin,
        z_min=z_min,
        status=status,
        t_refined=t_ref,
        envelope_relative_margin=rel_margin,
        z_max_increase=z_rise,
        T_predicted=cert.T_predicted,
    )


def needs_refinement(series: TimeSeries) -> bool:
    """Whether a verdict on ``series`` hinges on the threshold.

    True when the run stopped early or its ``||u_x||^2`` came within a
    decade of the blow-up threshold.
    """
    if series.termination is not Termination.COMPLETED:
        return True
    if not math.isfinite(series.threshold):
        return False
    peak = max(s.ux_sq for s in series.samples)
    return peak > NEAR_THRESHOLD_FRACTION * series.threshold


def run_with_refinement(
    make_u0: Callable[[Grid], Field],
    params: ModelParams,
    grid: Grid,
    cfg: SchemeConfig,
    t_end: float,
    sample_every: float | None = None,
    levels: int = 1,
) -> tuple[TimeSeries, TimeSeries]:
    """Run on ``grid`` and again with ``dt`` and ``h`` halved ``levels`` times.

    Initial data is rebuilt on each grid by ``make_u0`` rather than
    interpolated. The refined run samples at the same times.
    """
    coarse = run_simulation(make_u0(grid), t_end, params, cfg, sample_every=sample_every)
    fine_grid, fine_cfg = refined(grid, cfg, levels)
    # keep the absolute threshold so both runs stop at the same level
    fine_cfg = _same_threshold(fine_cfg, coarse.threshold)
    fine = run_simulation(make_u0(fine_grid), t_end, params, fine_cfg, sample_every=sample_every)
    return coarse, fine


def _same_threshold(cfg: SchemeConfig, threshold: float) -> SchemeConfig:
    from dataclasses import replace

    if not math.isfinite(threshold):
        return cfg
    return replace(cfg, blowup_threshold=threshold)


# -- decay rates --------------------------------------------------------------


def _times_and_h1(series):
    samples = series.samples if hasattr(series, "samples") else list(series)
    t = np.array([s.t for s in samples], dtype=float)
    h1 = np.array([s.mass + s.ux_sq for s in samples], dtype=float)
    return t, h1


def fit_decay_rate(
    series,
    window: tuple[float, float] | None = None,
    target_rate: float = 0.0,
    epsilon: float | None = None,
) -> RateFit:
    """Least-squares slope of ``ln(||u||^2 + ||u_x||^2)`` against ``t``.

    The default window is the second half of the run. ``epsilon`` defaults
    to a tenth of ``target_rate``; the fit passes when
    ``slope <= -(target_rate - epsilon)``.
    """
    t, h1 = _times_and_h1(series)
    if t.size == 0:
        raise ValueError("empty series")
    if window is None:
        window = (0.5 * t[-1], float(t[-1]))
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError(f"degenerate fit window ({lo}, {hi})")
    eps_t = 1e-9 * max(1.0, abs(hi))
    sel = (t >= lo - eps_t) & (t <= hi + eps_t)
    if sel.sum() < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples in [{lo}, {hi}], got {int(sel.sum())}")
    y = h1[sel]
    if not np.all(y > 0):
        raise ValueError("H^1 norm must be positive on the fit window")
    x = t[sel]
    logs = np.log(y)
    slope, intercept = np.polyfit(x, logs, 1)
    resid = logs - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot > 0:
        goodness = 1.0 - ss_res / ss_tot
    else:
        goodness = 1.0 if ss_res <= 1e-24 else 0.0
    goodness = min(1.0, max(0.0, goodness))
    if epsilon is None:
        epsilon = DEFAULT_EPSILON_FRACTION * target_rate
    return RateFit(
        slope=float(slope), window=(lo, hi), goodness=goodness,
        target=float(target_rate), epsilon=float(epsilon), n_samples=int(sel.sum()),
    )


# -- small-data bounds ----------------------------------------------------------


def small_data_bound(report: SmallnessReport) -> tuple[str, float]:
    """``(branch, bound)`` for ``sup ||u_x||^2 e^{2at}``.

    The supremum bound ``2(r+2)/(r-2) C1`` applies when the supremum-type
    smallness holds; otherwise the ``r = 2`` bound built from ``|E(0)|`` and
    the mass applies when ``4 lambda ||u0||^2 < 1``.
    """
    if report.supremum_ok and report.S_bound is not None:
        return "supremum", report.S_bound
    if report.mass_ok and report.mass_bound is not None:
        return "mass", report.mass_bound
    raise ValueError("no small-data bound applies to this initial data")


def check_small_data_bound(series: TimeSeries, report: SmallnessReport, slack: float = ENVELOPE_SLACK) -> bool:
    """True iff ``sup_t ||u_x||^2 e^{2at}`` stays within the bound (+ ``slack``)."""
    _, bound = small_data_bound(report)
    a = series.params.a
    t = series.t
    weighted = series.column("ux_sq") * np.exp(2 * a * t)
    return bool(weighted.max(initial=0.0) <= bound * (1 + slack))

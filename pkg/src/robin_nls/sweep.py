"""Parameter sweeps and the empirical phase table.

Each cell builds chirped-Gaussian data, evaluates the blow-up certificate
and the smallness constants, integrates, and compares the outcome with the
row of the phase table its ``(r, p)`` falls in.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

from .detector import (
    BlowupVerdict,
    RateFit,
    VerdictStatus,
    detect_blowup,
    fit_decay_rate,
    needs_refinement,
)
from .dynamics import SchemeConfig, Termination, refined, run_simulation
from .grid import Grid, chirped_gaussian
from .theory import (
    BlowupCertificate,
    ModelParams,
    RegimeClass,
    Row,
    SmallnessReport,
    check_blowup_hypotheses,
    classify_regime,
    critical_exponent,
    smallness_report,
)

__all__ = [
    "Agreement",
    "InitialFamily",
    "SweepPlan",
    "CellResult",
    "PhaseTable",
    "PHASE_COLUMNS",
    "run_sweep",
    "run_cell",
    "aggregate_phase_table",
    "table_agreement",
    "conjecture_marker",
]

PHASE_COLUMNS = (
    "r",
    "p",
    "a",
    "lambda",
    "amplitude",
    "chirp",
    "row_label",
    "certificate_met",
    "verdict",
    "rate_slope",
    "agreement",
    "conjecture_marker",
)

# a threshold the grids used in sweeps can actually reach
SWEEP_BLOWUP_FACTOR = 30.0


class Agreement(str, Enum):
    AGREE = "Agree"
    DISAGREE = "Disagree"
    OPEN = "Open-cell"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class InitialFamily:
    """``A exp(-(x - x0)^2 / (2 w^2)) exp(i c x^2)``."""

    amplitude: float
    chirp: float
    center: float = 2.0
    width: float = 1.0

    def __call__(self, grid: Grid):
        return chirped_gaussian(grid, self.amplitude, self.chirp, self.center, self.width)


def _default_scheme() -> SchemeConfig:
    return SchemeConfig(dt0=1e-3, adapt=True, blowup_factor=SWEEP_BLOWUP_FACTOR)


@dataclass(frozen=True)
class SweepPlan:
    """Cartesian product of the axes, enumerated in a fixed order.

    ``refine`` is the repetition policy: ``"near-threshold"`` reruns a cell
    at half ``dt`` and ``h`` when the coarse run stopped early or came within
    a decade of the blow-up threshold, ``"always"`` reruns every cell and
    ``"never"`` skips reruns (blow-up can then not be confirmed).
    """

    r: tuple[float, ...]
    p: tuple[float, ...]
    a: tuple[float, ...] = (0.0,)
    lam: tuple[float, ...] = (1.0,)
    amplitude: tuple[float, ...] = (1.0,)
    chirp: tuple[float, ...] = (0.0,)
    k: float = 1.0
    center: float = 2.0
    width: float = 1.0
    L: float = 40.0
    N: int = 1024
    scheme: SchemeConfig = field(default_factory=_default_scheme)
    t_end: float = 10.0
    sample_every: float = 0.1
    refine: str = "near-threshold"
    refinement_tol: float = 0.1
    fit_window: tuple[float, float] | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("r", "p", "a", "lam", "amplitude", "chirp"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"sweep axis {name!r} is empty")
            object.__setattr__(self, name, values)
        if self.refine not in ("near-threshold", "always", "never"):
            raise ValueError(f"unknown refinement policy {self.refine!r}")
        if not self.t_end > 0 or not self.sample_every > 0:
            raise ValueError("t_end and sample_every must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        Grid(self.L, self.N)
        # builds every ModelParams, which rejects inadmissible combinations
        self.cells()

    def cells(self) -> list[tuple[int, ModelParams, InitialFamily]]:
        out = []
        combos = itertools.product(self.r, self.p, self.a, self.lam, self.amplitude, self.chirp)
        for i, (r, p, a, lam, amp, chirp) in enumerate(combos):
            params = ModelParams(lam=lam, p=p, k=self.k, r=r, a=a)
            out.append((i, params, InitialFamily(amp, chirp, self.center, self.width)))
        return out

    @property
    def grid(self) -> Grid:
        return Grid(self.L, self.N)


@dataclass
class CellResult:
    index: int
    params: ModelParams
    family: InitialFamily
    regime: RegimeClass | None
    certificate: BlowupCertificate | None
    verdict: BlowupVerdict | None
    rate_fit: RateFit | None
    agreement: Agreement
    smallness: SmallnessReport | None = None
    termination: str = ""
    refined_termination: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "params": asdict(self.params),
            "amplitude": self.family.amplitude,
            "chirp": self.family.chirp,
            "row": self.regime.row.value if self.regime else None,
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "rate_fit": self.rate_fit.to_dict() if self.rate_fit else None,
            "agreement": self.agreement.value,
            "termination": self.termination,
            "refined_termination": self.refined_termination,
            "error": self.error,
        }


def _small_data_claim(regime: RegimeClass, report: SmallnessReport | None) -> bool:
    """Whether the small-data global-existence results cover this data."""
    if report is None:
        return False
    if regime.row is Row.R3:
        return report.mass_ok
    if regime.row in (Row.R4, Row.R5):
        return report.supremum_ok
    return False


def table_agreement(
    regime: RegimeClass,
    cert: BlowupCertificate | None,
    report: SmallnessReport | None,
    verdict: BlowupVerdict | None,
    rate_fit: RateFit | None = None,
) -> Agreement:
    """Compare one cell's outcome with its phase-table row.

    Rows 1-2 claim global solutions that decay when ``a > 0``. Rows 3-4 leave
    blow-up open: only small data covered by the global results can agree,
    anything else is an open cell and never a disagreement. Row 5 claims
    blow-up for certified data and global existence for small data.
    """
    small = _small_data_claim(regime, report)
    if regime.row in (Row.R3, Row.R4):
        if small and verdict is not None and verdict.status == VerdictStatus.NONE:
            return Agreement.AGREE
        return Agreement.OPEN
    if verdict is None or verdict.status == VerdictStatus.INCONCLUSIVE:
        return Agreement.INCONCLUSIVE
    blew_up = verdict.status == VerdictStatus.BLOWUP
    if regime.row in (Row.R1, Row.R2):
        if blew_up:
            return Agreement.DISAGREE
        if rate_fit is not None and rate_fit.slope >= 0:
            return Agreement.DISAGREE
        return Agreement.AGREE
    certified = cert is not None and cert.hypotheses_met
    if certified:
        return Agreement.AGREE if blew_up else Agreement.DISAGREE
    if small:
        return Agreement.DISAGREE if blew_up else Agreement.AGREE
    return Agreement.OPEN


def run_cell(plan: SweepPlan, index: int) -> CellResult:
    """Run one cell; failures become an ``Inconclusive`` result."""
    _, params, family = plan.cells()[index]
    regime = cert = report = verdict = fit = None
    termination = ""
    refined_term = None
    try:
        regime = classify_regime(params)
        grid = plan.grid
        u0 = family(grid)
        cert = check_blowup_hypotheses(params, u0)
        report = smallness_report(params, u0)
        coarse = run_simulation(u0, plan.t_end, params, plan.scheme, sample_every=plan.sample_every)
        termination = coarse.termination.value
        fine = None
        if plan.refine == "always" or (plan.refine == "near-threshold" and needs_refinement(coarse)):
            fine_grid, fine_cfg = refined(grid, plan.scheme)
            if math.isfinite(coarse.threshold):
                fine_cfg = replace(fine_cfg, blowup_threshold=coarse.threshold)
            fine = run_simulation(family(fine_grid), plan.t_end, params, fine_cfg, sample_every=plan.sample_every)
            refined_term = fine.termination.value
        verdict = detect_blowup(coarse, cert, fine, tol=plan.refinement_tol)
        if params.a > 0 and coarse.termination is Termination.COMPLETED and regime.nominal_rate:
            try:
                fit = fit_decay_rate(coarse, plan.fit_window, regime.nominal_rate, regime.epsilon or None)
            except ValueError:
                fit = None
        agreement = table_agreement(regime, cert, report, verdict, fit)
        return CellResult(index, params, family, regime, cert, verdict, fit, agreement, report,
                          termination, refined_term)
    except Exception as exc:  # a failing cell must not abort the sweep
        agreement = Agreement.OPEN if regime is not None and regime.row in (Row.R3, Row.R4) else Agreement.INCONCLUSIVE
        return CellResult(index, params, family, regime, cert, verdict, fit, agreement, report,
                          termination, refined_term, error=f"{type(exc).__name__}: {exc}")


def _run_cell_star(args):
    return run_cell(*args)


def run_sweep(plan: SweepPlan, workers: int | None = None) -> list[CellResult]:
    """Run every cell; results come back ordered by cell index."""
    workers = plan.workers if workers is None else workers
    jobs = [(plan, i) for i, _, _ in plan.cells()]
    if workers <= 1 or len(jobs) <= 1:
        results = [_run_cell_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_star, jobs))
    return sorted(results, key=lambda c: c.index)


# -- phase table ----------------------------------------------------------------


def conjecture_marker(r: float, p: float) -> str:
    """Position of ``r`` relative to the conjectured critical power ``max{2, p-2}``."""
    r_star = critical_exponent(p)
    if r < r_star:
        return "subcritical"
    if r == r_star:
        return "critical"
    return "supercritical"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class PhaseTable:
    rows: tuple[dict, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PHASE_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in PHASE_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "PhaseTable":
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != PHASE_COLUMNS:
                raise ValueError(f"{path}: not a phase table (columns {reader.fieldnames})")
            rows = []
            for raw in reader:
                row = dict(raw)
                for c in ("r", "p", "a", "lambda", "amplitude", "chirp"):
                    row[c] = float(row[c])
                row["certificate_met"] = row["certificate_met"] == "true"
                row["rate_slope"] = float(row["rate_slope"]) if row["rate_slope"] else None
                rows.append(row)
        return cls(tuple(rows))

    def counts(self) -> dict[str, dict[str, int]]:
        """Agreement counts per phase-table row."""
        out: dict[str, dict[str, int]] = {row.value: {a.value: 0 for a in Agreement} for row in Row}
        for row in self.rows:
            out[row["row_label"]][row["agreement"]] += 1
        return out


def aggregate_phase_table(results) -> PhaseTable:
    """One CSV row per cell, ordered by ``(r, p)`` and then by cell index."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    rows = []
    for res in sorted(results, key=lambda c: (c.params.r, c.params.p, c.index)):
        p = res.params
        rows.append({
            "r": float(p.r),
            "p": float(p.p),
            "a": float(p.a),
            "lambda": float(p.lam),
            "amplitude": float(res.family.amplitude),
            "chirp": float(res.family.chirp),
            "row_label": classify_regime(p).row.value,
            "certificate_met": bool(res.certificate.hypotheses_met) if res.certificate else False,
            "verdict": res.verdict.status if res.verdict else VerdictStatus.INCONCLUSIVE,
            "rate_slope": res.rate_fit.slope if res.rate_fit else None,
            "agreement": res.agreement.value,
            "conjecture_marker": conjecture_marker(p.r, p.p),
        })
    return PhaseTable(tuple(rows))

"""Perturbation sweeps, log-log rate fits and report emission."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pydantic  # noqa: E402
import scipy  # noqa: E402
from jinja2 import Template  # noqa: E402

from probmetrics import __version__  # noqa: E402
from probmetrics.config import get_settings  # noqa: E402
from probmetrics.exceptions import NumericalError, PreconditionError, ProbMetricsError  # noqa: E402
from probmetrics.models import GaussianMixture, PerturbationKind  # noqa: E402
from probmetrics.schemas import Scenario, SweepReport, SweepRow  # noqa: E402
from probmetrics.services import bounds, distributions, transport  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["h", "A", "rho_p", "tv", "rhs1", "rhs2", "psup", "prhs", "ok1", "ok2", "okp"]
REPORT_FORMATS = ("csv", "json", "svg", "png")
ENTROPIC_ATOMS = 64
TEMPLATE_PATH = Path(__file__).resolve().parent.parent / "templates" / "loglog.svg.j2"


# ============================================================================
# Scenarios
# ============================================================================

def perturb(scenario: Scenario, h: float) -> Tuple[GaussianMixture, GaussianMixture]:
    """
    The pair (xi, eta_h) of a scenario at scale h.

    Args:
        scenario: sweep definition
        h: perturbation scale

    Returns:
        Tuple of the reference law and the perturbed law.
    """
    base = GaussianMixture.from_spec(scenario.base)
    if scenario.kind == PerturbationKind.TRANSLATE:
        shift = np.zeros(base.d)
        shift[0] = h
        return base, distributions.translate(base, shift)
    if scenario.kind == PerturbationKind.SCALE:
        return base, distributions.dilate(base, 1.0 + h)
    if scenario.kind == PerturbationKind.MIXTURE_WEIGHT:
        return base, distributions.shift_weight(base, h / 2)
    if scenario.kind == PerturbationKind.SMOOTHED_SEQUENCE:
        if scenario.contaminant is None:
            raise PreconditionError("smoothed-sequence scenarios need a contaminant")
        contaminant = GaussianMixture.from_spec(scenario.contaminant)
        sigma = scenario.smoothing_sigma
        perturbed = distributions.contaminate(base, contaminant, h)
        return distributions.smooth(base, sigma), distributions.smooth(perturbed, sigma)
    raise PreconditionError(f"unknown perturbation kind {scenario.kind!r}")


def _entropic_cross_check(xi: GaussianMixture, eta: GaussianMixture, scenario: Scenario) -> float:
    if xi.d == 1:
        atoms_a = distributions.quantile_atoms(xi, ENTROPIC_ATOMS)
        atoms_b = distributions.quantile_atoms(eta, ENTROPIC_ATOMS)
    else:
        atoms_a = distributions.sample(xi, ENTROPIC_ATOMS, scenario.seed)
        atoms_b = distributions.sample(eta, ENTROPIC_ATOMS, scenario.seed + 1)
    return transport.ot_entropic(atoms_a, atoms_b, scenario.params.q).value


def run_row(scenario: Scenario, h: float) -> SweepRow:
    """Distances and the three certificates at one scale; failures are recorded in the row."""
    try:
        xi, eta = perturb(scenario, h)
        params = scenario.params
        resolution = scenario.resolution
        A = transport.wasserstein(xi, eta, params.q).value
        rho = transport.rho_p(xi, eta, params.p, resolution=resolution).value
        tv = transport.tv_mass(xi, eta, resolution=resolution).value
        cert1 = bounds.certificate_lemma1(xi, eta, params, A=A, resolution=resolution)
        cert2 = bounds.certificate_lemma2(xi, eta, params, A=A, resolution=resolution)
        certp = bounds.certificate_pointwise(xi, eta, params, scenario.alpha, A=A, resolution=resolution)
        entropic = _entropic_cross_check(xi, eta, scenario) if scenario.cross_check_entropic else None
    except ProbMetricsError as exc:
        logger.warning("scenario %s, h=%g failed: %s", scenario.name, h, exc)
        return SweepRow(h=h, error=f"{type(exc).__name__}: {exc}")
    return SweepRow(
        h=h,
        A=A,
        rho_p=rho,
        tv=tv,
        rhs1=cert1.rhs,
        rhs2=cert2.rhs,
        psup=certp.lhs,
        prhs=certp.rhs,
        ok1=cert1.satisfied,
        ok2=cert2.satisfied,
        okp=certp.satisfied,
        A_entropic=entropic,
    )


def _metadata(scenario: Scenario) -> dict:
    return {
        "kind": scenario.kind.value,
        "seed": scenario.seed,
        "resolution": scenario.resolution or "default",
        "probmetrics": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def run_sweep(scenario: Scenario, workers: Optional[int] = None) -> SweepReport:
    """
    Run every scale of a scenario and fit the log-log rate of rho_p against A.

    Rows run on a thread pool and are returned in the scenario's h order.

    Raises:
        NumericalError: more than SWEEP_MAX_FAILED_FRACTION of the rows failed.
    """
    settings = get_settings()
    workers = workers or settings.SWEEP_WORKERS
    logger.info("sweep %s: %d scales, %d workers", scenario.name, len(scenario.h), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda h: run_row(scenario, h), scenario.h))

    failed = sum(row.failed for row in rows)
    if failed > settings.SWEEP_MAX_FAILED_FRACTION * len(rows):
        raise NumericalError(f"sweep {scenario.name}: {failed} of {len(rows)} rows failed")

    report = SweepReport(scenario=scenario.name, rows=rows, metadata=_metadata(scenario))
    fit_rows = _fit_rows(rows)
    if len(fit_rows) >= 3:
        slope, stderr, intercept = fit_loglog([r.A for r in fit_rows], [r.rho_p for r in fit_rows])
        report = report.model_copy(
            update={"slope": slope, "stderr": stderr, "intercept": intercept, "fitted_rows": len(fit_rows)}
        )
        logger.info("sweep %s: slope %.4f +- %.4f over %d rows", scenario.name, slope, stderr, len(fit_rows))
    return report


# ============================================================================
# Rate fitting
# ============================================================================

def _fit_rows(rows: Iterable[SweepRow]) -> List[SweepRow]:
    return [r for r in rows if not r.failed and r.A is not None and 0 < r.A < 1 and r.rho_p and r.rho_p > 0]


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """OLS of log y on log x; returns (slope, standard error of the slope, intercept)."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    n = x.size
    if n < 3:
        raise PreconditionError(f"a rate fit needs at least 3 points, got {n}")
    design = np.stack([np.ones(n), x], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ np.array([intercept, slope])
    spread = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(residual @ residual) / (n - 2) / spread) if spread > 0 else math.inf
    return float(slope), stderr, float(intercept)


def fit_rate(rows: Sequence[SweepRow]) -> Tuple[float, float]:
    """Slope and its standard error of log rho_p against log A over rows with 0 < A < 1."""
    usable = _fit_rows(rows)
    if len(usable) < 3:
        raise PreconditionError(f"rate fit needs at least 3 rows with 0 < A < 1, got {len(usable)}")
    slope, stderr, _ = fit_loglog([r.A for r in usable], [r.rho_p for r in usable])
    return slope, stderr


# ============================================================================
# Reports
# ============================================================================

def _loglog_series(report: SweepReport, width: int, height: int, margin: int) -> Tuple[list, str, str]:
    usable = sorted((r for r in report.rows if not r.failed and r.A and r.A > 0), key=lambda r: r.A)
    columns = [("measured", "rho_p", "#1f77b4", "measured rho_p"), ("lemma1", "rhs1", "#d62728", "lemma1 rhs"),
               ("lemma2", "rhs2", "#2ca02c", "lemma2 rhs")]
    values = [(math.log10(r.A), [getattr(r, c[1]) for c in columns]) for r in usable]
    xs = [x for x, _ in values]
    ys = [math.log10(v) for _, row in values for v in row if v and v > 0]
    if not xs or not ys:
        return [dict(name=name, color=color, label=label, points="") for name, _, color, label in columns], "", ""
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def pixel(x: float, y: float) -> str:
        px = margin + (x - x_lo) / x_span * (width - 2 * margin)
        py = height - margin - (y - y_lo) / y_span * (height - 2 * margin)
        return f"{px:.2f},{py:.2f}"

    series = []
    for index, (name, _, color, label) in enumerate(columns):
        points = [pixel(x, math.log10(row[index])) for x, row in values if row[index] and row[index] > 0]
        series.append(dict(name=name, color=color, label=label, points=" ".join(points)))
    return series, f"{x_lo:.3g}, {x_hi:.3g}", f"{y_lo:.3g}, {y_hi:.3g}"


def render_svg(report: SweepReport, width: int = 640, height: int = 420, margin: int = 48) -> str:
    series, x_range, y_range = _loglog_series(report, width, height, margin)
    template = Template(TEMPLATE_PATH.read_text())
    return template.render(
        scenario=report.scenario, series_list=series, width=width, height=height, margin=margin,
        x_range=x_range, y_range=y_range,
    )


def _write_png(report: SweepReport, path: Path) -> None:
    usable = sorted((r for r in report.rows if not r.failed and r.A and r.A > 0), key=lambda r: r.A)
    figure = plt.figure(figsize=(7, 5))
    ax = figure.add_subplot(111)
    for column, label in (("rho_p", "measured rho_p"), ("rhs1", "lemma1 rhs"), ("rhs2", "lemma2 rhs")):
        points = [(r.A, getattr(r, column)) for r in usable if getattr(r, column)]
        if points:
            ax.loglog(*zip(*points), marker="o", label=label)
    ax.set_xlabel("A = W_q")
    ax.set_title(report.scenario)
    if usable:
        ax.legend()
    figure.savefig(path, metadata={"Software": None})
    plt.close(figure)


def emit_report(report: SweepReport, out_dir, formats: Sequence[str] = ("csv", "json", "svg")) -> List[Path]:
    """
    Write the report in each requested format to ``out_dir``.

    Returns:
        Paths of the written files, in the order of ``formats``.
    """
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise PreconditionError(f"unknown report formats: {', '.join(sorted(unknown))}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out_dir / f"{report.scenario}.{fmt}"
        if fmt == "csv":
            frame = pd.DataFrame([row.model_dump() for row in report.rows], columns=CSV_COLUMNS)
            frame.to_csv(path, index=False, lineterminator="\n")
        elif fmt == "json":
            path.write_text(report.model_dump_json(indent=2) + "\n")
        elif fmt == "svg":
            path.write_text(render_svg(report))
        else:
            _write_png(report, path)
        written.append(path)
        logger.info("report written: %s", path)
    return written

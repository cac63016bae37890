######################################################################
#
# The pyProbMetrics CLI wraps the distance, envelope, certificate and
# sweep services.
#
######################################################################
import json
import sys
from pathlib import Path

import plac
from pydantic import ValidationError

from probmetrics.config import configure_logging
from probmetrics.exceptions import CertificateViolation, PreconditionError, ProbMetricsError
from probmetrics.models import GaussianMixture
from probmetrics.schemas import BoundParams, Scenario, ScenarioSuite
from probmetrics.services import bounds, distributions, harness, spectral, transport


def _read_law(path):
    if path is None:
        raise PreconditionError("missing input document")
    return distributions.law_from_json(Path(path).read_text())


def _read_mixture(path) -> GaussianMixture:
    law = _read_law(path)
    if not isinstance(law, GaussianMixture):
        raise PreconditionError(f"{path} is not a mixture document")
    return law


def _read_scenarios(path) -> list:
    if path is None:
        raise PreconditionError("sweep needs --scenario")
    document = json.loads(Path(path).read_text())
    if "scenarios" in document:
        return ScenarioSuite.model_validate(document).scenarios
    return [Scenario.model_validate(document)]


def _dist(a, b, metric, p, q):
    law_a, law_b = _read_law(a), _read_law(b)
    if metric == "rho_p":
        return transport.rho_p(law_a, law_b, p)
    if metric == "tv":
        return transport.tv_mass(law_a, law_b)
    if metric == "fm":
        return transport.fm_upper(law_a, law_b)
    return transport.wasserstein(law_a, law_b, q)


def _envelope(path, side, K, L):
    dist = _read_mixture(path)
    grid = distributions.discretize(dist, distributions.common_box(dist, dist), distributions.grid_resolution(dist.d))
    if side == "density":
        return spectral.poly_envelope(grid, K, L)
    if side == "frequency":
        return spectral.poly_envelope(spectral.char_fn_grid(grid), K, L)
    return spectral.exp_envelope(spectral.char_fn_grid(grid), K)


def _certify(a, b, p, q, eps, regime, alpha):
    law_a, law_b = _read_mixture(a), _read_mixture(b)
    params = BoundParams(p=p, q=q, epsilon=eps, d=law_a.d)
    if regime == "lemma1":
        return bounds.certificate_lemma1(law_a, law_b, params)
    if regime == "lemma2":
        return bounds.certificate_lemma2(law_a, law_b, params)
    multiindex = [int(x) for x in alpha.split(",")] if alpha else None
    return bounds.certificate_pointwise(law_a, law_b, params, multiindex)


def _sweep(scenario, out, formats):
    violations = []
    for sc in _read_scenarios(scenario):
        print(f"> Sweep {sc.name}: {sc.kind.value}, {len(sc.h)} scales.")
        report = harness.run_sweep(sc)
        for path in harness.emit_report(report, Path(out), [f.strip() for f in formats.split(",") if f.strip()]):
            print(f">  written {path}")
        if report.slope is not None:
            print(f">  log-log slope {report.slope:.4f} +- {report.stderr:.4f} ({report.fitted_rows} rows)")
        failed = [row.h for row in report.rows if row.failed]
        if failed:
            print(f">  {len(failed)} failed rows: {failed}")
        violated = [row.h for row in report.rows if row.violated]
        if violated:
            violations.append(CertificateViolation(sc.name, violated))
    if violations:
        raise violations[0]


def main(
    cmd: ("(dist|envelope|certify|sweep)"),
    a: ("first law (mixture or atom-set JSON)", "option", "a") = None,
    b: ("second law (mixture or atom-set JSON)", "option", "b") = None,
    metric: ("distance for dist", "option", "m", str, ["rho_p", "tv", "wq", "fm"]) = "wq",
    p: ("weight power", "option", "p", float) = 2.0,
    q: ("Wasserstein exponent", "option", "q", float) = 2.0,
    input: ("mixture JSON for envelope", "option", "i") = None,
    side: ("envelope side", "option", "s", str, ["density", "frequency", "exponential"]) = "frequency",
    K: ("highest derivative order", "option", "K", int) = 4,
    L: ("highest polynomial power", "option", "L", int) = 6,
    eps: ("exponent slack epsilon", "option", "e", float) = 0.1,
    regime: ("certificate regime", "option", "r", str, ["lemma1", "lemma2", "pointwise"]) = "lemma1",
    alpha: ("multiindex for pointwise, comma separated", "option", "A") = None,
    scenario: ("scenario or scenario-suite JSON", "option", "c") = None,
    out: ("report directory", "option", "o") = "reports",
    formats: ("report formats, comma separated", "option", "f") = "csv,json,svg",
    verbose: ("log numerical details", "flag", "v") = False,
):
    configure_logging("DEBUG" if verbose else None)

    if cmd == "dist":
        print(_dist(a, b, metric, p, q).model_dump_json(indent=2))

    elif cmd == "envelope":
        print(_envelope(input, side, K, L).model_dump_json(indent=2))

    elif cmd == "certify":
        certificate = _certify(a, b, p, q, eps, regime, alpha)
        print(certificate.model_dump_json(indent=2))
        print(f"> {certificate.regime.value}: lhs {certificate.lhs:.6g} <= rhs {certificate.rhs:.6g} "
              f"is {certificate.satisfied}.", file=sys.stderr)

    elif cmd == "sweep":
        _sweep(scenario, out, formats)
        print("> Done.")

    else:
        raise PreconditionError(f"command {cmd} is not implemented")


def run(argv=None) -> int:
    """Run the command line and map errors onto exit codes."""
    try:
        plac.call(main, sys.argv[1:] if argv is None else list(argv))
    except ProbMetricsError as exc:
        print(f"> {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"> invalid input: {exc}", file=sys.stderr)
        return PreconditionError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(run())

"""Command-line interface: ``reliafit fit|srgm|simulate|validate``.

Exit codes: 0 ok, 1 input or configuration error, 2 a fit did not converge,
3 goodness-of-fit rejection.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .distfit import DistKind, FitError, fit_cumulative
from .ingest import (
    GRANULARITIES,
    FailureSeries,
    IngestError,
    build_series,
    event_timeline,
    is_grouped_header,
    parse_events,
    parse_grouped,
    parse_timestamp,
    regroup,
    sort_versions,
    write_events_csv,
    write_grouped_csv,
)
from .metrics import rank_models
from .report import RunReport, VersionEntry, digest, dist_summary, safe_name, srgm_summary, warning
from .simgen import (
    SimSpec,
    SpecError,
    expand_to_events,
    simulate,
    timeline_to_events,
)
from .srgm import (
    InsufficientDataError,
    SrgmFitError,
    SrgmKind,
    cvm_gof,
    fit_curve_srgm,
    fit_power_law_mle,
)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_GOF = 0, 1, 2, 3
SEED_ENV = "RELIAFIT_SEED"


class InputError(Exception):
    pass


def _fail(message: str) -> int:
    print(f"reliafit: error: {message}", file=sys.stderr)
    return EXIT_INPUT


# -- input loading -------------------------------------------------------------


def load_input(path: str):
    """Return ``(raw bytes, events or None, grouped series or None)``."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    raw = p.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None
    try:
        if is_grouped_header(text):
            return raw, None, parse_grouped(io.StringIO(text))
        fmt = "json-lines" if p.suffix.lower() in (".jsonl", ".ndjson", ".json") else "csv"
        return raw, parse_events(io.StringIO(text), fmt), None
    except IngestError as exc:
        raise InputError(f"{path}: {exc}") from None


def _pick_app(apps: set[str], requested: str | None) -> str:
    if requested is not None:
        if requested not in apps:
            raise InputError(f"app {requested!r} not found; available: {', '.join(sorted(apps))}")
        return requested
    if len(apps) != 1:
        raise InputError(f"input holds several apps ({', '.join(sorted(apps))}); pass --app")
    return next(iter(apps))


def select_series(events, grouped, app: str | None, version: str, granularity: str) -> list[FailureSeries]:
    if grouped is not None:
        app_id = _pick_app({s.app_id for s in grouped}, app)
        pool = {s.version: s for s in grouped if s.app_id == app_id}
        versions = sort_versions(pool) if version == "all" else [version]
        out = []
        for v in versions:
            if v not in pool:
                raise InputError(f"no data for app {app_id!r} version {v!r}")
            s = pool[v]
            if s.granularity != granularity:
                try:
                    s = regroup(s, granularity)
                except ValueError as exc:
                    raise InputError(str(exc)) from None
            out.append(s)
        return out
    app_id = _pick_app({e.app_id for e in events}, app)
    present = {e.version for e in events if e.app_id == app_id}
    versions = sort_versions(present) if version == "all" else [version]
    try:
        return [build_series(events, app_id, v, granularity) for v in versions]
    except IngestError as exc:
        raise InputError(str(exc)) from None


# -- fit ---------------------------------------------------------------------


def _fit_version(series: FailureSeries, models: list[DistKind], actual_total, with_srgm: bool):
    entry = VersionEntry(series.version, series.granularity, len(series))
    warnings: list[str] = []
    fitted = []
    nonconverged = False
    subject = series.version
    for kind in models:
        if len(series) < kind.n_free + 1:
            warnings.append(warning("skipped", f"{subject}/{kind.value}",
                                    f"needs {kind.n_free + 1} periods, series has {len(series)}"))
            continue
        try:
            model = fit_cumulative(series, kind, actual_total)
        except FitError as exc:
            nonconverged = True
            code = "degenerate" if "degenerate" in str(exc) else "nonconverged"
            warnings.append(warning(code, f"{subject}/{kind.value}", str(exc)))
            continue
        except ValueError as exc:
            warnings.append(warning("skipped", f"{subject}/{kind.value}", str(exc)))
            continue
        if model.t_max == 0.0:
            warnings.append(warning("mode_at_origin", f"{subject}/{kind.value}", "t_max = 0"))
        if model.metrics.adj_r_square != model.metrics.adj_r_square:
            warnings.append(warning("adj_r2_undefined", f"{subject}/{kind.value}", "SST = 0"))
        fitted.append(model)
    if fitted:
        ranked = rank_models(fitted)
        entry.ranking = [m.name for m in ranked]
        entry.dist_fits = [dist_summary(m) for m in fitted]
    if with_srgm:
        for kind in (SrgmKind.musa_basic, SrgmKind.musa_okumoto):
            try:
                fit = fit_curve_srgm(series, kind)
            except (SrgmFitError, InsufficientDataError, ValueError) as exc:
                warnings.append(warning("skipped", f"{subject}/{kind.value}", str(exc)))
                continue
            if not fit.converged:
                nonconverged = True
                warnings.append(warning("nonconverged", f"{subject}/{kind.value}", fit.message))
            entry.srgm_fits.append(srgm_summary(fit))
    return entry, fitted, warnings, nonconverged


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def write_curve(path: Path, series: FailureSeries, model) -> None:
    lines = ["t,observed_cum,fitted_cum"]
    for (t, yhat), obs in zip(model.fitted_curve, series.cumulative):
        lines.append(f"{_num(t)},{_num(obs)},{yhat!r}")
    path.write_text("\n".join(lines) + "\n")


def write_svg(path: Path, series: FailureSeries, models) -> None:
    """Minimal static chart of observed vs fitted cumulative failures."""
    w, h, pad = 480, 320, 40
    t = series.t
    ymax = max([float(series.cumulative.max())] + [max(y for _, y in m.fitted_curve) for m in models]) or 1.0
    tmax = float(t[-1]) if t[-1] > 0 else 1.0

    def xy(tx, ty):
        return pad + (w - 2 * pad) * tx / tmax, h - pad - (h - 2 * pad) * ty / ymax

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2:.0f}" y="{h - 8}" text-anchor="middle" font-size="12">period</text>',
        f'<text x="12" y="{h / 2:.0f}" font-size="12" transform="rotate(-90 12 {h / 2:.0f})"'
        ' text-anchor="middle">cumulative failures</text>',
    ]
    for ti, yi in zip(t, series.cumulative):
        x, y = xy(ti, yi)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="black"/>')
    for k, m in enumerate(models):
        pts = " ".join("{:.2f},{:.2f}".format(*xy(ti, yi)) for ti, yi in m.fitted_curve)
        color = colors[k % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - pad - 70}" y="{pad + 14 * k}" font-size="11" fill="{color}">{m.name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def cmd_fit(args) -> int:
    try:
        models = [DistKind(m.strip()) for m in args.models.split(",") if m.strip()]
    except ValueError as exc:
        return _fail(f"--models: {exc}")
    if not models:
        return _fail("--models: no models given")
    try:
        raw, events, grouped = load_input(args.input)
        series_list = select_series(events, grouped, args.app, args.version, args.granularity)
    except InputError as exc:
        return _fail(str(exc))

    jobs = max(1, args.jobs)
    work = lambda s: _fit_version(s, models, args.actual_total, args.srgm)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, series_list))
    else:
        results = [work(s) for s in series_list]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(digest(raw))
    any_nonconverged = False
    for series, (entry, fitted, warns, nonconv) in zip(series_list, results):
        report.per_version.append(entry)
        report.warnings.extend(warns)
        any_nonconverged |= nonconv
        for model in fitted:
            write_curve(out / f"{safe_name(series.version)}_{model.name}.csv", series, model)
        if args.svg and fitted:
            write_svg(out / f"{safe_name(series.version)}.svg", series, fitted)
    (out / "report.json").write_text(report.to_json())
    for w in report.warnings:
        print(f"reliafit: warning: {w}", file=sys.stderr)
    return EXIT_NONCONVERGED if any_nonconverged else EXIT_OK


# -- srgm --------------------------------------------------------------------


def cmd_srgm(args) -> int:
    try:
        raw, events, grouped = load_input(args.input)
        kind = SrgmKind(args.model)
    except InputError as exc:
        return _fail(str(exc))
    except ValueError:
        return _fail(f"unknown model {args.model!r}")
    warnings: list[str] = []
    try:
        if kind is SrgmKind.power_law:
            if events is None:
                raise InputError("the power-law model needs event timestamps, not grouped counts")
            app_id = _pick_app({e.app_id for e in events}, args.app)
            version = args.version or _only_version(events, app_id)
            end = parse_timestamp(args.end) if args.end else None
            truncation = args.truncation or ("time" if end is not None else "failure")
            if truncation == "time" and end is None:
                raise InputError("time truncation needs --end")
            try:
                timeline = event_timeline(events, app_id, version, end)
            except (IngestError, ValueError) as exc:
                raise InputError(str(exc)) from None
            fit = fit_power_law_mle(timeline, truncation)
            if args.gof:
                fit = _with_gof(fit, cvm_gof(timeline, fit, args.significance))
        else:
            if args.version is None and events is not None:
                args.version = _only_version(events, _pick_app({e.app_id for e in events}, args.app))
            series = select_series(events, grouped, args.app, args.version or "all", args.granularity)
            if len(series) != 1:
                raise InputError("pass --version to choose one series")
            fit = fit_curve_srgm(series[0], kind)
            if args.gof:
                warnings.append(warning("gof_not_applicable", kind.value, "no test for grouped fits"))
            if not fit.converged:
                warnings.append(warning("nonconverged", kind.value, fit.message))
    except InputError as exc:
        return _fail(str(exc))
    except InsufficientDataError as exc:
        return _fail(f"insufficient data: {exc}")
    except SrgmFitError as exc:
        return _fail(str(exc))
    except ValueError as exc:
        return _fail(str(exc))

    doc = {"input_digest": digest(raw), "tool_version": __version__, "fit": srgm_summary(fit),
           "warnings": warnings}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    for w in warnings:
        print(f"reliafit: warning: {w}", file=sys.stderr)
    if fit.gof is not None and not fit.gof.passed:
        print(f"reliafit: goodness-of-fit rejected: statistic {fit.gof.statistic:.6g} > "
              f"critical value {fit.gof.critical_value:.6g} (m={fit.gof.m}, "
              f"significance {fit.gof.significance:g})", file=sys.stderr)
        return EXIT_GOF
    if not fit.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def _only_version(events, app_id: str) -> str:
    versions = sort_versions({e.version for e in events if e.app_id == app_id})
    if len(versions) != 1:
        raise InputError(f"several versions present ({', '.join(versions)}); pass --version")
    return versions[0]


def _with_gof(fit, verdict):
    from dataclasses import replace

    return replace(fit, gof=verdict)


# -- simulate / validate -----------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        return _fail(f"spec file not found: {args.spec}")
    except json.JSONDecodeError as exc:
        return _fail(f"{args.spec}: invalid JSON ({exc.msg})")
    try:
        spec = SimSpec.from_dict(doc)
    except SpecError as exc:
        return _fail(f"{args.spec}: invalid field {exc}")
    override = os.environ.get(SEED_ENV)
    if override:
        try:
            spec = spec.with_seed(int(override))
        except ValueError:
            return _fail(f"{SEED_ENV} must be an integer, got {override!r}")
    data = simulate(spec)
    buf = io.StringIO()
    if isinstance(data, FailureSeries):
        if spec.noise == "none":
            write_grouped_csv([data], buf)
        else:
            write_events_csv(expand_to_events(data), buf)
    else:
        write_events_csv(timeline_to_events(data, spec.app_id, spec.version, spec.origin), buf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(buf.getvalue().encode("utf-8"))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        _, events, grouped = load_input(args.input)
    except InputError as exc:
        return _fail(str(exc))
    if grouped is not None:
        for s in grouped:
            print(f"{s.app_id}\t{s.version}\t{s.granularity}\t{len(s)} periods\t{s.total:g} failures")
        return EXIT_OK
    counts: dict[tuple[str, str], int] = {}
    for e in events:
        counts[(e.app_id, e.version)] = counts.get((e.app_id, e.version), 0) + 1
    for app in sorted({a for a, _ in counts}):
        for v in sort_versions(v for a, v in counts if a == app):
            print(f"{app}\t{v}\t{counts[(app, v)]} events")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other input errors; 2 means nonconvergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reliafit", description=__doc__.splitlines()[0])
    parser.add_argument("--version-info", action="version", version=f"reliafit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit Weibull/Gamma cumulative models per version")
    p.add_argument("--input", required=True)
    p.add_argument("--app")
    p.add_argument("--version", default="all", help="version to fit, or 'all' (default)")
    p.add_argument("--granularity", choices=GRANULARITIES, default="day")
    p.add_argument("--models", default="weibull,gamma,rayleigh,sshaped")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--svg", action="store_true", help="also render <version>.svg")
    p.add_argument("--actual-total", type=float, help="known defect total, enables MRE")
    p.add_argument("--srgm", action="store_true", help="also fit the Musa models")
    p.add_argument("--jobs", type=int, default=1, help="versions fitted in parallel")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("srgm", help="fit a reliability growth model")
    p.add_argument("--input", required=True)
    p.add_argument("--app")
    p.add_argument("--version")
    p.add_argument("--model", choices=[k.value for k in SrgmKind], default="power_law")
    p.add_argument("--granularity", choices=GRANULARITIES, default="day")
    p.add_argument("--truncation", choices=("time", "failure"))
    p.add_argument("--end", help="observation end (ISO 8601 UTC); implies time truncation")
    p.add_argument("--gof", action="store_true", help="run the Cramer-von Mises test")
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--out", help="also write the JSON result here")
    p.set_defaults(func=cmd_srgm)

    p = sub.add_parser("simulate", help="generate synthetic failure data from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="parse an input file and summarize it")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # last resort: no tracebacks on the terminal
        return _fail(f"unexpected failure: {type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())

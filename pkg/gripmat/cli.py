"""Command-line interface for gripmat."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .classify import classify as classify_fit
from .classify import load_class_config
from .config import Settings, load_settings
from .core import (
    ModelKind,
    ModelParams,
    SampleSpec,
    ViscoelasticFit,
    synthesize_cycle,
    synthetic_raw_cycle,
)
from .errors import (
    ConvergenceError,
    GripmatError,
    IdentifiabilityError,
    InsufficientDataError,
    ManifestError,
    ParameterError,
)
from .ingest import (
    CSV_HEADER,
    load_device_profile,
    load_manifest,
    load_raw_cycle,
    to_force_cycle,
)
from .pipeline import (
    aggregate_records,
    cv40,
    linear_modulus,
    local_modulus,
    process_cycle,
    read_curve,
    smooth_curve,
    welch_t_test,
    window_sweep,
    write_curve,
)
from .util import dump_json, read_json, safe_write_file, shipped_names
from .visco import (
    compare_devices,
    eta_from_speeds,
    fit_model,
    loop_energy,
)

app = typer.Typer(
    name="gripmat",
    help="Estimate material elasticity and viscoelasticity from gripper compression cycles",
    no_args_is_help=True,
)
console = Console()
logger = logging.getLogger(__name__)

ITEM_ERRORS = (GripmatError, OSError, ValueError, TypeError, KeyError)
MODULUS_METHODS = ("local", "linear", "cv40")
FIT_MODELS = ("kv", "hc", "energy")
MODEL_NAMES = {"kv": ModelKind.KELVIN_VOIGT, "hc": ModelKind.HUNT_CROSSLEY}
EXIT_PARTIAL = 1
EXIT_USAGE = 2

T = TypeVar("T")


@dataclass(frozen=True)
class RunContext:
    settings: Settings
    out_dir: Path
    jobs: int
    seed: int


@dataclass
class Outcome:
    item: str
    value: Any = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def failure(self) -> dict[str, Any]:
        return {
            "item": self.item,
            "error_type": type(self.error).__name__,
            "message": str(self.error),
        }


def _configure_logging(verbose: int) -> None:
    package_logger = logging.getLogger("gripmat")
    for handler in list(package_logger.handlers):
        if isinstance(handler, RichHandler):
            package_logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False)
    handler.setLevel(
        logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG,
    )
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG if verbose > 1 else logging.INFO)


@contextmanager
def _command_log(run: RunContext, command: str) -> Iterator[Path]:
    """Mirror package log records into ``<out-dir>/<command>.log``."""
    run.out_dir.mkdir(parents=True, exist_ok=True)
    path = run.out_dir / f"{command}.log"
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    package_logger = logging.getLogger("gripmat")
    package_logger.addHandler(handler)
    try:
        yield path
    finally:
        package_logger.removeHandler(handler)
        handler.close()


def _usage_error(message: str) -> typer.Exit:
    console.print(f"[red]Error:[/red] {message}")
    return typer.Exit(EXIT_USAGE)


def _run_batch(items: Sequence[T], worker: Callable[[T], Any], jobs: int) -> list[Outcome]:
    """Apply ``worker`` to every item; results keep input order."""

    def attempt(item: T) -> Outcome:
        try:
            return Outcome(str(item), worker(item))
        except ITEM_ERRORS as e:
            logger.error("%s: %s", item, e)
            return Outcome(str(item), error=e)

    if jobs <= 1:
        return [attempt(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(attempt, items))


def _report_outcomes(outcomes: Sequence[Outcome], verb: str) -> list[dict[str, Any]]:
    failures = []
    for outcome in outcomes:
        if outcome.ok:
            console.print(f"[green]✓[/green] {verb} {outcome.item}")
        else:
            console.print(f"[red]✗[/red] {outcome.item}: {outcome.error}")
            failures.append(outcome.failure())
    return failures


def _finish(failures: Sequence[dict[str, Any]], total: int) -> None:
    if failures:
        console.print(
            f"\n[yellow]Warning:[/yellow] {len(failures)} of {total} item(s) failed",
        )
        raise typer.Exit(EXIT_PARTIAL)


def _none_if_nan(value: float) -> float | None:
    return None if math.isnan(value) else value


def _curve_stem(manifest_path: Path) -> str:
    return manifest_path.name.removesuffix(".json").removesuffix(".manifest")


@app.callback()
def main(
    ctx: typer.Context,
    config: Path | None = typer.Option(
        None,
        "--config",
        help="Settings JSON (default: user config file when present)",
    ),
    out_dir: Path = typer.Option(
        Path("gripmat-out"),
        "--out-dir",
        help="Directory for outputs and command logs",
    ),
    jobs: int = typer.Option(1, "--jobs", "-j", help="Number of files processed in parallel"),
    seed: int = typer.Option(0, "--seed", help="Random seed for synthetic noise"),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="More log output"),
) -> None:
    """Estimate material elasticity and viscoelasticity from gripper compression cycles."""
    _configure_logging(verbose)
    if jobs < 1:
        raise _usage_error("--jobs must be at least 1")
    try:
        settings = load_settings(config)
    except (GripmatError, ValueError) as e:
        raise _usage_error(str(e)) from e
    ctx.obj = RunContext(settings=settings, out_dir=out_dir, jobs=jobs, seed=seed)


@app.command()
def convert(
    ctx: typer.Context,
    manifests: list[Path] = typer.Argument(..., help="Cycle manifest files"),
) -> None:
    """Convert raw cycles into processed stress/strain curve CSVs."""
    run: RunContext = ctx.obj
    stems = [_curve_stem(path) for path in manifests]
    duplicates = sorted({stem for stem in stems if stems.count(stem) > 1})
    if duplicates:
        raise _usage_error(f"manifests map to the same output name: {', '.join(duplicates)}")

    def worker(path: Path) -> tuple[Path, int]:
        manifest = load_manifest(path)
        raw = load_raw_cycle(manifest)
        curve = process_cycle(
            to_force_cycle(raw),
            raw.sample,
            raw.device,
            run.settings,
            manifest.contact,
        )
        written = write_curve(curve, run.out_dir / f"{_curve_stem(path)}.curve.csv")
        return written, curve.extrapolated

    with _command_log(run, "convert"):
        outcomes = _run_batch(manifests, worker, run.jobs)
        failures = _report_outcomes(outcomes, "Converted")
        summary = {
            "converted": [
                {"manifest": o.item, "curve": str(o.value[0]), "extrapolated": o.value[1]}
                for o in outcomes
                if o.ok
            ],
            "failures": failures,
        }
        safe_write_file(run.out_dir / "convert.json", dump_json(summary))
    console.print(f"Converted {len(outcomes) - len(failures)} cycle(s) into {run.out_dir}")
    _finish(failures, len(outcomes))


def _parse_points(points: str | None, default: Sequence[float]) -> list[float]:
    if points is None:
        return list(default)
    try:
        return [float(p) for p in points.replace(" ", "").split(",") if p]
    except ValueError as e:
        raise _usage_error(f"invalid strain points '{points}'") from e


@app.command()
def estimate(
    ctx: typer.Context,
    curves: list[Path] = typer.Argument(..., help="Processed curve CSVs"),
    method: list[str] | None = typer.Option(
        None,
        "--method",
        "-m",
        help="local, linear or cv40 (repeatable; default all)",
    ),
    points: str | None = typer.Option(
        None,
        "--points",
        help="Comma separated strain points for local estimates",
    ),
    halfwidth: float | None = typer.Option(None, "--halfwidth", help="Local window half width"),
    sweep: bool = typer.Option(False, "--sweep", help="Also record the window-size sweep"),
    smooth: bool | None = typer.Option(
        None,
        "--smooth/--no-smooth",
        help="Savitzky-Golay smoothing before estimation (default from settings)",
    ),
) -> None:
    """Estimate Young's moduli and CV40 for each curve."""
    run: RunContext = ctx.obj
    methods = method or list(MODULUS_METHODS)
    unknown = sorted(set(methods) - set(MODULUS_METHODS))
    if unknown:
        raise _usage_error(f"unknown method(s): {', '.join(unknown)}")
    modulus = run.settings.modulus
    strain_points = _parse_points(points, modulus.strain_points)
    window = modulus.halfwidth if halfwidth is None else halfwidth
    if window <= 0:
        raise _usage_error("--halfwidth must be positive")
    smoothing = run.settings.smoothing
    do_smooth = smoothing.enabled if smooth is None else smooth

    def worker(path: Path) -> dict[str, list[dict[str, Any]]]:
        curve = read_curve(path)
        if do_smooth:
            curve = smooth_curve(curve, smoothing.window, smoothing.order, smoothing.min_samples)
        provenance = {
            "source": str(path),
            "label": curve.label,
            "cycle_index": curve.cycle_index,
            "speed_mm_s": _none_if_nan(curve.speed_mm_s),
        }
        found: dict[str, list[dict[str, Any]]] = {"estimates": [], "skipped": [], "sweeps": []}

        def skip(name: str, reason: Exception, point: float | None = None) -> None:
            found["skipped"].append(
                {"curve": str(path), "method": name, "strain_point": point, "reason": str(reason)},
            )

        if "local" in methods:
            for point in strain_points:
                try:
                    record = local_modulus(curve, point, window).to_dict()
                except InsufficientDataError as e:
                    skip("local", e, point)
                    continue
                record["provenance"] = provenance
                found["estimates"].append(record)
                if sweep:
                    try:
                        result = window_sweep(curve, point, modulus.sweep_halfwidths)
                    except InsufficientDataError:
                        continue
                    found["sweeps"].append({**result.to_dict(), "provenance": provenance})
        if "linear" in methods:
            try:
                record = linear_modulus(curve).to_dict()
                record["provenance"] = provenance
                found["estimates"].append(record)
            except InsufficientDataError as e:
                skip("linear", e)
        if "cv40" in methods:
            try:
                found["estimates"].append(
                    {"method": "cv40", "cv40_kpa": cv40(curve), "provenance": provenance},
                )
            except InsufficientDataError as e:
                skip("cv40", e)
        return found

    with _command_log(run, "estimate"):
        outcomes = _run_batch(curves, worker, run.jobs)
        failures = _report_outcomes(outcomes, "Estimated")
        result: dict[str, Any] = {"estimates": [], "skipped": [], "failures": failures}
        if sweep:
            result["sweeps"] = []
        for outcome in outcomes:
            if outcome.ok:
                for key in result:
                    if key != "failures":
                        result[key].extend(outcome.value[key])
        safe_write_file(run.out_dir / "estimates.json", dump_json(result))

    table = Table(title="Modulus estimates")
    table.add_column("Sample", style="cyan")
    table.add_column("Method", style="magenta")
    table.add_column("Strain")
    table.add_column("Value [kPa]", justify="right")
    table.add_column("R²", justify="right")
    for record in result["estimates"]:
        value = record.get("E_kpa", record.get("cv40_kpa"))
        point = record.get("strain_point")
        table.add_row(
            record["provenance"]["label"],
            record["method"],
            "" if point is None else f"{point:g}",
            f"{value:.4g}",
            f"{record['r2']:.4f}" if "r2" in record else "",
        )
    console.print(table)
    if result["skipped"]:
        console.print(f"[yellow]Skipped {len(result['skipped'])} infeasible estimate(s)[/yellow]")
    _finish(failures, len(outcomes))


@app.command()
def fit(
    ctx: typer.Context,
    curves: list[Path] = typer.Argument(..., help="Processed curve CSVs"),
    model: str = typer.Option("hc", "--model", help="kv, hc or energy"),
    smooth: bool = typer.Option(False, "--smooth/--no-smooth", help="Smooth stress first"),
) -> None:
    """Fit Kelvin-Voigt, Hunt-Crossley or energy-loss damping to each curve."""
    run: RunContext = ctx.obj
    if model not in FIT_MODELS:
        raise _usage_error(f"unknown model '{model}' (choose from {', '.join(FIT_MODELS)})")
    visco = run.settings.visco
    smoothing = run.settings.smoothing

    def load(path: Path) -> Any:
        curve = read_curve(path)
        if smooth:
            curve = smooth_curve(curve, smoothing.window, smoothing.order, smoothing.min_samples)
        return curve

    with _command_log(run, "fit"):
        if model == "energy":
            result, failures, total = _fit_energy(curves, load, run.jobs)
        else:
            kind = MODEL_NAMES[model]

            def worker(path: Path) -> ViscoelasticFit:
                return fit_model(
                    load(path),
                    kind,
                    eps_min=visco.eps_min,
                    cov_threshold=visco.cov_threshold,
                    max_iter=visco.max_iter,
                    lambda0=visco.lambda0,
                )

            outcomes = _run_batch(curves, worker, run.jobs)
            failures = _report_outcomes(outcomes, "Fitted")
            for outcome, failure in zip(
                [o for o in outcomes if not o.ok],
                failures,
                strict=True,
            ):
                if isinstance(outcome.error, ConvergenceError) and outcome.error.best is not None:
                    failure["best"] = outcome.error.best.to_dict()
            fits = [o.value for o in outcomes if o.ok]
            total = len(outcomes)
            identifiable = sum(f.identifiable for f in fits)
            result = {
                "model": kind.value,
                "fits": [f.to_dict() for f in fits],
                "failures": failures,
                "summary": {
                    "total": total,
                    "fitted": len(fits),
                    "identifiable": identifiable,
                    "not_identifiable": len(fits) - identifiable,
                    "failed": len(failures),
                },
            }
            _print_fits(fits)
        safe_write_file(run.out_dir / "fits.json", dump_json(result))
    _finish(failures, total)


def _fit_energy(
    curves: Sequence[Path],
    load: Callable[[Path], Any],
    jobs: int,
) -> tuple[dict[str, Any], list[dict[str, Any]], int]:
    outcomes = _run_batch(curves, lambda path: loop_energy(load(path)), jobs)
    failures = _report_outcomes(outcomes, "Measured loop of")
    by_label: dict[str, list[Any]] = {}
    for outcome in outcomes:
        if outcome.ok:
            by_label.setdefault(outcome.value.label, []).append(outcome.value)
    series = []
    for label, loops in by_label.items():
        try:
            series.append(eta_from_speeds(loops))
        except GripmatError as e:
            console.print(f"[red]✗[/red] {label}: {e}")
            failures.append(Outcome(label, error=e).failure())
    table = Table(title="Energy-loss damping")
    table.add_column("Sample", style="cyan")
    table.add_column("Loops", justify="right")
    table.add_column("η [Pa·s]", justify="right")
    table.add_column("R²", justify="right")
    for item in series:
        table.add_row(item.label, str(len(item.mean_strain_rates)), f"{item.eta_loss:.5g}", f"{item.r2:.4f}")
    console.print(table)
    result = {
        "model": "energy_loss",
        "series": [s.to_dict() for s in series],
        "failures": failures,
        "summary": {"total": len(outcomes), "fitted": len(series), "failed": len(failures)},
    }
    return result, failures, len(outcomes)


def _print_fits(fits: Sequence[ViscoelasticFit]) -> None:
    table = Table(title="Viscoelastic fits")
    table.add_column("Sample", style="cyan")
    table.add_column("K [N/m²]", justify="right")
    table.add_column("η [Pa·s]", justify="right")
    table.add_column("n", justify="right")
    table.add_column("R²", justify="right")
    table.add_column("Identifiable", style="magenta")
    for item in fits:
        table.add_row(
            item.label,
            f"{item.K_pa:.5g}",
            f"{item.eta_pa_s:.5g}",
            f"{item.n:.3f}",
            f"{item.r2:.3f}",
            "yes" if item.identifiable else "no",
        )
    console.print(table)
    identifiable = sum(f.identifiable for f in fits)
    console.print(f"Identifiable damping: {identifiable} of {len(fits)}")


def _load_fits(path: Path) -> list[ViscoelasticFit]:
    data = read_json(path)
    if not isinstance(data, dict) or "fits" not in data:
        raise ManifestError("expected a fits document with a 'fits' list", path)
    try:
        return [ViscoelasticFit.from_dict(entry) for entry in data["fits"]]
    except (KeyError, ValueError) as e:
        raise ManifestError(f"invalid fit entry: {e}", path) from e


@app.command()
def classify(
    ctx: typer.Context,
    fits_file: Path = typer.Argument(..., help="fits.json written by 'gripmat fit'"),
    classes: str | None = typer.Option(
        None,
        "--classes",
        help="Class config JSON or shipped name (default: waste_sorting)",
    ),
) -> None:
    """Sort fitted samples into material classes."""
    run: RunContext = ctx.obj
    try:
        config = load_class_config(classes)
        fits = _load_fits(fits_file)
    except (GripmatError, ValueError) as e:
        raise _usage_error(str(e)) from e

    with _command_log(run, "classify"):
        decisions = []
        refusals = []
        for item in fits:
            name = item.label or item.source
            try:
                decision = classify_fit(item, config)
            except IdentifiabilityError as e:
                console.print(f"[red]✗[/red] {name}: {e}")
                refusals.append({"item": name, "error_type": type(e).__name__, "message": str(e)})
                continue
            decisions.append(decision)
            console.print(f"[green]✓[/green] {name} → {decision.material}")

        counts = {c.label: 0 for c in config.classes}
        for decision in decisions:
            counts[decision.material] += 1
        result = {
            "classes": config.source,
            "decisions": [d.to_dict() for d in decisions],
            "refusals": refusals,
            "counts": counts,
        }
        safe_write_file(run.out_dir / "decisions.json", dump_json(result))

    table = Table(title="Material classes")
    table.add_column("Class", style="cyan")
    table.add_column("Samples", justify="right")
    for label, count in counts.items():
        table.add_row(label, str(count))
    console.print(table)
    _finish(refusals, len(fits))


@app.command()
def synth(
    ctx: typer.Context,
    name: str = typer.Option("synthetic", "--name", help="Base name of the written files"),
    model: str = typer.Option("kv", "--model", help="kv or hc"),
    K: float = typer.Option(..., "--K", help="Stiffness K [N/m²]"),
    eta: float = typer.Option(0.0, "--eta", help="Damping η [Pa·s]"),
    n: float = typer.Option(1.0, "--n", help="Hunt-Crossley exponent"),
    strain_max: float = typer.Option(0.6, "--strain-max", help="Peak strain, in (0, 1)"),
    strain_rate: float = typer.Option(0.1, "--strain-rate", help="Strain rate [1/s]"),
    samples: int = typer.Option(2000, "--samples", help="Samples per phase"),
    noise: float = typer.Option(0.0, "--noise", help="Relative stress noise sigma"),
    device: str = typer.Option("ft300", "--device", help="Device profile (file or shipped name)"),
    L0: float = typer.Option(50.0, "--L0", help="Object width at contact [mm]"),
    face_area: float = typer.Option(1000.0, "--face-area", help="Contact face area [mm²]"),
    label: str | None = typer.Option(None, "--label", help="Sample label (default: --name)"),
    cycle_index: int = typer.Option(1, "--cycle-index", help="Cycle number"),
) -> None:
    """Write a synthetic cycle as a manifest, raw CSV and sample spec."""
    run: RunContext = ctx.obj
    if model not in MODEL_NAMES:
        raise _usage_error(f"unknown model '{model}' (choose from kv, hc)")
    try:
        profile = load_device_profile(device)
        sample = SampleSpec(
            label=label or name,
            dimensions_mm=(face_area / 25.0, 25.0, L0),
            contact_face_area_mm2=face_area,
            nominal_width_mm=L0,
        )
        cycle = synthesize_cycle(
            ModelParams(MODEL_NAMES[model], K, eta, n),
            strain_max,
            strain_rate,
            samples,
            noise_rel=noise,
            seed=run.seed,
        )
        raw = synthetic_raw_cycle(cycle, profile, sample, L0, cycle_index=cycle_index)
    except (GripmatError, ValueError) as e:
        raise _usage_error(str(e)) from e

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in zip(raw.t.tolist(), raw.position.tolist(), raw.effort.tolist()):
        writer.writerow([repr(value) for value in row])

    device_ref = str(Path(device).resolve()) if Path(device).exists() else device
    manifest = {
        "device_profile": device_ref,
        "sample_spec": f"{name}.sample.json",
        "speed": raw.speed.to_dict(),
        "csv": f"{name}.csv",
        "cycle_index": cycle_index,
        # The trace starts from exactly zero force, so any rise is contact.
        "contact": {"floor_n": 0.0},
    }
    out = run.out_dir
    safe_write_file(out / f"{name}.csv", buffer.getvalue())
    safe_write_file(out / f"{name}.sample.json", dump_json(sample.to_dict()))
    manifest_path = out / f"{name}.manifest.json"
    safe_write_file(manifest_path, dump_json(manifest))
    console.print(f"[green]✓[/green] Created {manifest_path}")
    console.print(f"{len(raw)} samples, {model} K={K:g} η={eta:g} n={n:g}, seed {run.seed}")


def _flatten(record: dict[str, Any]) -> dict[str, Any]:
    return {**record, **record.get("provenance", {})}


def _report_sections(documents: Sequence[Any], paths: Sequence[Path]) -> dict[str, list[dict[str, Any]]]:
    sections: dict[str, list[dict[str, Any]]] = {}
    for data, path in zip(documents, paths, strict=True):
        if isinstance(data, dict) and "estimates" in data:
            for record in data["estimates"]:
                flat = _flatten(record)
                sections.setdefault(f"modulus_{flat['method']}", []).append(flat)
        elif isinstance(data, dict) and "fits" in data:
            for record in data["fits"]:
                sections.setdefault(record["model"], []).append(record)
        elif isinstance(data, dict) and "series" in data:
            for record in data["series"]:
                sections.setdefault("energy_loss", []).append(record)
        else:
            raise ManifestError("not an estimates, fits or energy document", path)
    return sections


SECTION_QUANTITIES = {
    "modulus_local": ("E_kpa",),
    "modulus_linear": ("E_kpa",),
    "modulus_cv40": ("cv40_kpa",),
    ModelKind.KELVIN_VOIGT.value: ("K_pa", "eta_pa_s"),
    ModelKind.HUNT_CROSSLEY.value: ("K_pa", "eta_pa_s", "n"),
    "energy_loss": ("eta_pa_s",),
}


def _parse_ttest(spec: str) -> tuple[str, str, str]:
    key, _, groups = spec.partition("=")
    first, _, second = groups.partition(",")
    if not (key and first and second):
        raise _usage_error(f"invalid --ttest '{spec}', expected KEY=A,B")
    return key, first, second


def _matches(value: Any, wanted: str) -> bool:
    if value is None:
        return wanted.lower() in ("none", "null")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        try:
            return float(value) == float(wanted)
        except ValueError:
            return False
    return str(value) == wanted


@app.command()
def report(
    ctx: typer.Context,
    inputs: list[Path] = typer.Argument(..., help="estimates.json / fits.json files"),
    group_by: str = typer.Option(
        "cycle_index,speed_mm_s",
        "--group-by",
        help="Comma separated grouping keys",
    ),
    ttest: list[str] | None = typer.Option(
        None,
        "--ttest",
        help="Welch t-test between two groups, e.g. cycle_index=1,5 (repeatable)",
    ),
) -> None:
    """Aggregate estimates and fits; write tables and plot-ready CSVs."""
    run: RunContext = ctx.obj
    keys = [k for k in group_by.replace(" ", "").split(",") if k]
    tests = [_parse_ttest(spec) for spec in ttest or []]
    try:
        sections = _report_sections([read_json(p) for p in inputs], inputs)
    except (GripmatError, KeyError) as e:
        raise _usage_error(str(e)) from e

    with _command_log(run, "report"):
        aggregate: dict[str, Any] = {}
        rows = []
        for section, records in sections.items():
            section_keys = ["strain_point", *keys] if section == "modulus_local" else keys
            entries = []
            for quantity in SECTION_QUANTITIES.get(section, ()):
                for item in aggregate_records(records, quantity, section_keys):
                    entries.append(item.to_dict())
                    rows.append(
                        [
                            section,
                            quantity,
                            ";".join(f"{k}={v}" for k, v in item.keys),
                            repr(item.mean),
                            repr(item.std),
                            repr(item.error_ratio),
                            item.count,
                        ],
                    )
            aggregate[section] = entries

        ttests = []
        for key, first, second in tests:
            for section, records in sections.items():
                quantity = SECTION_QUANTITIES.get(section, ("",))[0]
                a = [r[quantity] for r in records if _matches(r.get(key), first)]
                b = [r[quantity] for r in records if _matches(r.get(key), second)]
                entry: dict[str, Any] = {
                    "section": section,
                    "quantity": quantity,
                    "key": key,
                    "groups": [first, second],
                    "n": [len(a), len(b)],
                }
                try:
                    result = welch_t_test(a, b)
                except ParameterError as e:
                    entry["skipped"] = str(e)
                else:
                    entry.update({"t": result.t, "p": result.p, "df": result.df})
                ttests.append(entry)

        safe_write_file(
            run.out_dir / "aggregate.json",
            dump_json({"group_by": keys, "sections": aggregate, "ttests": ttests}),
        )
        safe_write_file(
            run.out_dir / "aggregate.csv",
            _csv_text(
                ["section", "quantity", "group", "mean", "std", "error_ratio", "count"],
                rows,
            ),
        )
        scatter = [
            [
                record.get("label", ""),
                section,
                repr(record["K_pa"]),
                repr(record["eta_pa_s"]),
                repr(record.get("n", 1.0)),
                record.get("cycle_index", ""),
                "" if record.get("speed_mm_s") is None else repr(record["speed_mm_s"]),
            ]
            for section in (ModelKind.KELVIN_VOIGT.value, ModelKind.HUNT_CROSSLEY.value)
            for record in sections.get(section, [])
        ]
        safe_write_file(
            run.out_dir / "scatter.csv",
            _csv_text(
                ["label", "model", "K_pa", "eta_pa_s", "n", "cycle_index", "speed_mm_s"],
                scatter,
            ),
        )

    table = Table(title="Aggregates")
    table.add_column("Section", style="cyan")
    table.add_column("Quantity", style="magenta")
    table.add_column("Group")
    table.add_column("Mean", justify="right")
    table.add_column("Std/mean", justify="right")
    table.add_column("N", justify="right")
    for row in rows:
        table.add_row(row[0], row[1], row[2], f"{float(row[3]):.5g}", f"{float(row[5]):.3f}", str(row[6]))
    console.print(table)
    for entry in ttests:
        if "p" in entry:
            console.print(
                f"{entry['section']} {entry['key']} {entry['groups'][0]} vs {entry['groups'][1]}: "
                f"t={entry['t']:.3g} p={entry['p']:.3g}",
            )
    console.print(f"[green]✓[/green] Wrote {run.out_dir / 'aggregate.json'}")


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


@app.command()
def compare(
    ctx: typer.Context,
    fits_a: Path = typer.Argument(..., help="fits.json from the first device"),
    fits_b: Path = typer.Argument(..., help="fits.json from the second device"),
) -> None:
    """Correlate K and η between two devices over shared samples."""
    run: RunContext = ctx.obj
    try:
        agreement = compare_devices(_load_fits(fits_a), _load_fits(fits_b))
    except (GripmatError, ValueError) as e:
        raise _usage_error(str(e)) from e
    safe_write_file(run.out_dir / "comparison.json", dump_json(agreement.to_dict()))

    table = Table(title=f"Device agreement over {len(agreement.labels)} samples")
    table.add_column("Parameter", style="cyan")
    table.add_column("R²", justify="right")
    table.add_column("Spearman ρ", justify="right")
    table.add_row("K", f"{agreement.r2_K:.3f}", f"{agreement.spearman_K:.3f}")
    table.add_row("η", f"{agreement.r2_eta:.3f}", f"{agreement.spearman_eta:.3f}")
    console.print(table)


@app.command(name="profiles")
def list_profiles() -> None:
    """List the shipped device profiles."""
    table = Table(title="Device profiles")
    table.add_column("Name", style="cyan")
    table.add_column("Effort", style="magenta")
    table.add_column("Sampling")
    table.add_column("Jaw area [mm²]", justify="right")
    table.add_column("Stroke [mm]", justify="right")
    names = shipped_names("profiles")
    for name in names:
        profile = load_device_profile(name)
        table.add_row(
            profile.name,
            profile.effort_unit.value,
            profile.sampling_mode.value,
            f"{profile.jaw_area_mm2:g}",
            f"{profile.stroke_mm:g}",
        )
    console.print(table)
    console.print(f"\nTotal: {len(names)} profiles")

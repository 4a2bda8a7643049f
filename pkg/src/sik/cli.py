"""
Command-line interface for design evaluation, certificates and Monte-Carlo studies.
"""

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import yaml

from sik import __version__
from sik.design import good_event_probability
from sik.exceptions import ConfigError, NumericalError
from sik.harness import (
    Experiment,
    check_theorem_bound,
    emit_results,
    load_experiment,
    run_mse_study,
    run_reconstruction,
    write_bundle,
)
from sik.models import ExperimentConfig, OutputFormat
from sik.reporting import ReportRenderer

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# Commands whose only table is JSON.
SUMMARY_FORMATS = (OutputFormat.JSON, OutputFormat.MARKDOWN, OutputFormat.HTML)

SAMPLE_CONFIG: Dict[str, Any] = {
    "name": "three-spikes",
    "kernel": {"family": "gaussian", "sigma": 0.2, "normalize": True},
    "ground_truth": [
        {"weight": 0.4, "position": -0.7},
        {"weight": 0.3, "position": -0.3},
        {"weight": -0.2, "position": 0.3},
    ],
    "sensor_sets": [
        {"name": "uniform9", "uniform": 9},
        {"name": "selected", "x": [-0.8, -0.6, -0.4, -0.1, 0.1, 0.4]},
    ],
    "beta0": [2.0],
    "p": [1e4],
    "samples": 100,
    "seed": 0,
    "output_dir": "results",
}


def handle_errors(func: Callable[..., None]) -> Callable[..., None]:
    """Map library errors to exit codes: 2 for configuration, 3 for numerical failures."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            func(*args, **kwargs)
        except (ConfigError, KeyError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except NumericalError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def common_options(
    formats: Sequence[OutputFormat] = tuple(OutputFormat),
) -> Callable[[Callable[..., None]], Callable[..., None]]:
    """Config argument plus the output, format and verbosity options shared by all commands."""

    def decorate(func: Callable[..., None]) -> Callable[..., None]:
        func = click.option(
            "-v", "--verbose", is_flag=True, default=False, help="Log solver progress (DEBUG)"
        )(func)
        func = click.option(
            "-f",
            "--format",
            "output_format",
            type=click.Choice([f.value for f in formats]),
            default=OutputFormat.JSON.value,
            help="/".join(f.value for f in formats) + "; md/html add a rendered summary",
        )(func)
        func = click.option(
            "-o", "--out", type=click.Path(), default=None, help="Output directory (config output_dir by default)"
        )(func)
        return click.argument("config", type=click.Path(exists=True))(func)

    return decorate


def _setup(config: str, out: Optional[str], verbose: bool) -> tuple:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = load_experiment(config)
    out_dir = Path(out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _write_json(path: Path, payload: Any) -> Path:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def _summary(output_format: str, out_dir: Path, name: str, context: Dict[str, Any]) -> Optional[Path]:
    fmt = OutputFormat(output_format)
    if fmt not in (OutputFormat.MARKDOWN, OutputFormat.HTML):
        return None
    path = out_dir / f"{name}.{fmt.value}"
    return ReportRenderer().render_to_file(name, context, path, fmt)


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """
    Grid-free sparse inverse problems: design, certificates and error studies.

    Every command reads one experiment config (YAML or JSON) describing the
    kernel, the ground-truth measure and named sensor sets.
    """
    pass


@main.command()
@common_options(SUMMARY_FORMATS)
@handle_errors
def criterion(config: str, out: Optional[str], output_format: str, verbose: bool) -> None:
    """
    Evaluate the closed-form design criterion for every sensor set, beta0 and p.

    Examples:

    \b
    sik criterion configs/sensor_designs.yaml --format md
    """
    cfg, out_dir = _setup(config, out, verbose)
    exp = Experiment(cfg)
    rows = []
    for spec in cfg.active_sensor_sets():
        for beta0 in cfg.beta0:
            for p in cfg.p:
                design = exp.design(spec.name, beta0, p)
                rows.append({"sensor_set": spec.name, "design": design})
                mark = "✓" if design.identifiable else "✗"
                click.echo(
                    f"{mark} {spec.name} beta0={beta0:g} p={p:g}: expected_mse={design.expected_mse:.6e}"
                    f" cond={design.condition_number:.3e}"
                )
    payload = [
        {"sensor_set": r["sensor_set"], **json.loads(r["design"].model_dump_json())} for r in rows
    ]
    _write_json(out_dir / "criterion.json", payload)
    _summary(output_format, out_dir, "criterion", {"title": "Design criterion", "experiment": cfg.name, "rows": rows})
    click.echo(f"Results written to {out_dir}")


@main.command()
@common_options(SUMMARY_FORMATS)
@handle_errors
def certify(config: str, out: Optional[str], output_format: str, verbose: bool) -> None:
    """
    Check admissibility of the pre-certificate for every sensor set.

    A singular Fisher information is reported as inadmissible.
    """
    cfg, out_dir = _setup(config, out, verbose)
    exp = Experiment(cfg)
    rows = []
    for spec in cfg.active_sensor_sets():
        report = exp.admissibility(spec.name)
        rows.append({"sensor_set": spec.name, "report": report})
        if report is None:
            click.echo(f"✗ {spec.name}: singular Fisher information")
        elif report.admissible:
            click.echo(f"✓ {spec.name}: admissible, theta*={report.theta_star:.4e}")
        else:
            click.echo(f"✗ {spec.name}: {report.failure} (max |eta|={report.max_abs:.4f})")
    payload = {
        r["sensor_set"]: (json.loads(r["report"].model_dump_json()) if r["report"] else None) for r in rows
    }
    _write_json(out_dir / "certificate.json", payload)
    _summary(output_format, out_dir, "certificate", {"title": "Pre-certificate admissibility", "experiment": cfg.name, "rows": rows})
    click.echo(f"Results written to {out_dir}")


@main.command()
@common_options()
@click.option("-s", "--sensor-set", default=None, help="Sensor set name (first active set by default)")
@click.option("--seed", type=int, default=None, help="Noise seed; exact data when omitted")
@click.option("--beta0", type=float, default=None, help="Override the first configured beta0")
@handle_errors
def reconstruct(
    config: str,
    out: Optional[str],
    output_format: str,
    verbose: bool,
    sensor_set: Optional[str],
    seed: Optional[int],
    beta0: Optional[float],
) -> None:
    """
    Run PDAP (and Gauss-Newton) on one data set and write the artifact bundle.

    Examples:

    \b
    # exact data, pre-certificate classification
    sik reconstruct configs/sensor_designs.yaml -s uniform6
    \b
    # noisy data
    sik reconstruct configs/nine_sensors.yaml --seed 7 --beta0 0.5
    """
    cfg, out_dir = _setup(config, out, verbose)
    name = sensor_set or cfg.active_sensor_sets()[0].name
    bundle = run_reconstruction(cfg, name, seed=seed, beta0=beta0)
    written = write_bundle(bundle, out_dir)
    mark = "✓" if bundle.pdap_report.status.value == "converged" else "✗"
    click.echo(f"{mark} PDAP {bundle.pdap_report.status.value}: {bundle.mu_bar.n_atoms} atoms")
    if bundle.gn_report is not None:
        mark = "✓" if bundle.gn_report.status.value == "converged" else "✗"
        click.echo(f"{mark} Gauss-Newton {bundle.gn_report.status.value}")
    if bundle.admissibility is not None:
        mark = "✓" if bundle.admissibility.admissible else "✗"
        click.echo(f"{mark} pre-certificate {'admissible' if bundle.admissibility.admissible else bundle.admissibility.failure}")
    elif bundle.exact_data:
        click.echo("✗ pre-certificate unavailable: singular Fisher information")
    _summary(
        output_format,
        out_dir,
        "reconstruction",
        {
            "title": f"Reconstruction with {name}",
            "sensor_set": name,
            "beta": bundle.beta,
            "exact": bundle.exact_data,
            "seed": seed,
            "mu_bar": bundle.mu_bar.to_json(),
            "mu_hat": bundle.mu_hat.to_json() if bundle.mu_hat is not None else None,
            "pdap": bundle.pdap_report,
            "gauss_newton": bundle.gn_report,
            "hk_pdap_vs_gn": bundle.hk_pdap_vs_gn,
            "admissibility": bundle.admissibility,
        },
    )
    click.echo(f"{len(written)} files written to {out_dir}")


@main.command()
@common_options()
@click.option("-t", "--threads", type=int, default=1, show_default=True, help="Worker threads per study cell")
@click.option("--check-bound", is_flag=True, default=False, help="Compare PDAP errors with the theoretical bound")
@handle_errors
def mse(
    config: str,
    out: Optional[str],
    output_format: str,
    verbose: bool,
    threads: int,
    check_bound: bool,
) -> None:
    """
    Monte-Carlo MSE study; writes results.csv and results.json.

    Output bytes do not depend on --threads.
    """
    if threads < 1:
        raise click.BadParameter("must be at least 1", param_hint="--threads")
    cfg, out_dir = _setup(config, out, verbose)
    records = run_mse_study(cfg, threads=threads)
    csv_path, _ = emit_results(records, out_dir)
    for r in records:
        click.echo(
            f"  {r.sensor_set} beta0={r.beta0:g} p={r.p:g} {r.estimator.value}: "
            f"{r.mean_hk2:.6e} ± {r.stderr:.1e} (closed form {r.expected_mse:.6e})"
        )
    checks = []
    if check_bound:
        exp = Experiment(cfg)
        constants = {}
        for r in records:
            key = (r.sensor_set, r.beta0, r.p)
            if key not in constants:
                constants[key] = exp.constants(*key)
        checks = check_theorem_bound(records, constants)
        for c in checks:
            mark = "✓" if c.holds else "✗"
            click.echo(f"{mark} {c.sensor_set} beta0={c.beta0:g} p={c.p:g}: {c.empirical:.4e} <= {c.bound:.4e}")
        _write_json(out_dir / "bound_check.json", [json.loads(c.model_dump_json()) for c in checks])
    _summary(
        output_format,
        out_dir,
        "mse",
        {"title": "Monte-Carlo MSE", "experiment": cfg.name, "records": records, "checks": checks},
    )
    click.echo(f"Results written to {csv_path}")


@main.command()
@common_options(SUMMARY_FORMATS)
@click.option("-s", "--sensor-set", default=None, help="Sensor set name (first active set by default)")
@handle_errors
def constants(
    config: str, out: Optional[str], output_format: str, verbose: bool, sensor_set: Optional[str]
) -> None:
    """
    Compute the explicit constants of the worst-case error bound.

    theta is taken from the config, otherwise from the pre-certificate.
    """
    cfg, out_dir = _setup(config, out, verbose)
    exp = Experiment(cfg)
    name = sensor_set or cfg.active_sensor_sets()[0].name
    results: List[Dict[str, Any]] = []
    for beta0 in cfg.beta0:
        for p in cfg.p:
            consts = exp.constants(name, beta0, p)
            prob = good_event_probability(consts, consts.n_obs, p, beta0)
            results.append({**json.loads(consts.model_dump_json()), "good_event_probability": prob})
            click.echo(
                f"  beta0={beta0:g} p={p:g}: C1={consts.C1:.4e} C4={consts.C4:.4e} "
                f"p_bar={consts.p_bar:.4e} P(good)>={prob:.4f}"
            )
            last = (consts, prob)
    _write_json(out_dir / "constants.json", {"sensor_set": name, "cells": results})
    _summary(
        output_format,
        out_dir,
        "constants",
        {
            "title": "Theory constants",
            "sensor_set": name,
            "constants": last[0],
            "good_event_probability": last[1],
        },
    )
    click.echo(f"Results written to {out_dir}")


@main.command()
@click.option("-o", "--output", type=click.Path(), required=True, help="Path of the sample config")
@click.option(
    "-f",
    "--format",
    "output_format",
    type=click.Choice(["yaml", "json"]),
    default="yaml",
    help="Config file format",
)
def init(output: str, output_format: str) -> None:
    """
    Write a sample experiment config to edit.

    \b
    sik init -o my_experiment.yaml
    """
    ExperimentConfig(**SAMPLE_CONFIG)
    output_path = Path(output)
    with open(output_path, "w") as f:
        if output_format == "yaml":
            yaml.dump(SAMPLE_CONFIG, f, default_flow_style=False, sort_keys=False)
        else:
            json.dump(SAMPLE_CONFIG, f, indent=2)
    click.echo(f"Sample config created: {output_path}")
    click.echo("\nEdit it, then run for example:")
    click.echo(f"  sik criterion {output_path}")


if __name__ == "__main__":
    main()

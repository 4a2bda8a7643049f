"""
Declarative experiments: synthetic data, Monte-Carlo MSE studies, single
reconstructions and result persistence.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from sik.certificates import (
    certificate_curve,
    pre_certificate,
    regularized_certificate,
    theta_admissibility,
)
from sik.design import (
    SINGULAR_THRESHOLD,
    design_criterion,
    fisher_system,
    good_event_flags,
    theory_constants,
)
from sik.exceptions import ConfigError, NumericalError, SingularFisherError
from sik.forward import Observation, misfit_norm, sample_seed, synthesize
from sik.kernels import Kernel, KernelBounds, kernel_bounds, make_kernel
from sik.measures import (
    ParamVec,
    SparseMeasure,
    params_from_measure,
    weighted_norm,
    weighting_from,
)
from sik.metrics import hk_distance
from sik.models import (
    AdmissibilityReport,
    BoundCheck,
    DesignReport,
    Estimator,
    ExperimentConfig,
    ResultRecord,
    SampleOutcome,
    SensorConfig,
    SolveReport,
    SolveStatus,
    TheoryConstants,
)
from sik.solvers import linearized_estimate, solve_blasso_pdap, stationary_gauss_newton

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "experiment",
    "sensor_set",
    "beta0",
    "p",
    "estimator",
    "mean_hk2",
    "stderr",
    "expected_mse",
    "samples",
    "seed",
]


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment config from JSON or YAML (chosen by suffix).

    Raises:
        ConfigError: On unknown suffixes, unreadable files or invalid content.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        with open(path) as f:
            if suffix in (".yaml", ".yml"):
                data = yaml.safe_load(f)
            elif suffix == ".json":
                data = json.load(f)
            else:
                raise ConfigError(f"unsupported config format '{suffix}' (use .json, .yaml or .yml)")
        return ExperimentConfig(**(data or {}))
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def fmt(value: Any) -> str:
    """Fixed CSV formatting: nine significant digits in scientific notation for floats."""
    if isinstance(value, bool) or value is None:
        return "" if value is None else str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "{:.9e}".format(float(value))
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


class Experiment:
    """
    Resolved experiment: kernel, reference measure and per-design caches.

    The caches (kernel bounds, admissibility per sensor set) are filled lazily
    and are safe to read from worker threads once populated.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.kernel: Kernel = make_kernel(config.kernel)
        self.truth = SparseMeasure.from_specs(config.ground_truth, config.kernel.source_domain)
        self.m_ref: ParamVec = params_from_measure(self.truth)
        self._bounds: Optional[KernelBounds] = None
        self._admissibility: Dict[str, Optional[AdmissibilityReport]] = {}

    @property
    def domain(self):
        return self.config.kernel.source_domain

    def sensors(self, name: str, p: float) -> SensorConfig:
        try:
            spec = self.config.sensor_set(name)
        except KeyError:
            raise ConfigError(f"unknown sensor set '{name}'") from None
        sensors = spec.build(self.config.kernel.obs_domain, p)
        if sensors.dim != self.kernel.dim or not self.config.kernel.obs_domain.contains(sensors.points):
            raise ConfigError(f"sensor set '{name}' does not fit the observation domain")
        return sensors

    @property
    def bounds(self) -> KernelBounds:
        if self._bounds is None:
            self._bounds = kernel_bounds(self.kernel, self.config.bounds_resolution)
        return self._bounds

    def design(self, name: str, beta0: float, p: float) -> DesignReport:
        return design_criterion(
            self.kernel, self.sensors(name, p), self.m_ref, beta0, self.config.max_condition
        )

    def admissibility(self, name: str) -> Optional[AdmissibilityReport]:
        """Pre-certificate admissibility, or None when the Fisher information is singular."""
        if name not in self._admissibility:
            sensors = self.sensors(name, self.config.p[0])
            try:
                eta = pre_certificate(self.kernel, sensors, self.m_ref)
                report = theta_admissibility(eta, self.truth, self.config.certificate_resolution)
            except SingularFisherError:
                report = None
            self._admissibility[name] = report
        return self._admissibility[name]

    def theta(self, name: str) -> Optional[float]:
        if self.config.theta is not None:
            return self.config.theta
        report = self.admissibility(name)
        return report.theta_star if report is not None else None

    def constants(self, name: str, beta0: float, p: float) -> TheoryConstants:
        theta = self.theta(name)
        if theta is None:
            raise SingularFisherError(
                math.inf, f"sensor set '{name}' has no admissible pre-certificate; set 'theta'"
            )
        return theory_constants(
            self.kernel, self.sensors(name, p), self.m_ref, theta, beta0, p, bounds=self.bounds
        )


def _as_measure(m: ParamVec, exp: Experiment) -> SparseMeasure:
    return SparseMeasure.from_atoms(zip(m.q, m.positions), exp.domain)


def _safe_hk2(mu: SparseMeasure, nu: SparseMeasure, exp: Experiment) -> float:
    try:
        return hk_distance(mu, nu, exp.config.hk) ** 2
    except NumericalError as exc:
        logger.warning("HK solve failed: %s", exc)
        return math.nan


def run_sample(
    exp: Experiment,
    sensors: SensorConfig,
    beta0: float,
    index: int,
    constants: Optional[TheoryConstants] = None,
) -> SampleOutcome:
    """Draw noise sample `index`, run the enabled estimators and score them against the truth."""
    cfg = exp.config
    seed = sample_seed(cfg.seed, index)
    obs = synthesize(exp.kernel, sensors, exp.truth, seed)
    beta = beta0 / math.sqrt(sensors.p)
    enabled = cfg.estimators.enabled()
    outcome = SampleOutcome(index=index, seed=seed)

    mu_bar = None
    if Estimator.PDAP in enabled:
        mu_bar, report = solve_blasso_pdap(exp.kernel, sensors, obs, beta, cfg.pdap)
        outcome.hk2[Estimator.PDAP] = _safe_hk2(mu_bar, exp.truth, exp)
        outcome.status[Estimator.PDAP] = report.status
        outcome.pdap_atoms = mu_bar.n_atoms

    mu_hat = None
    if Estimator.GAUSS_NEWTON in enabled:
        m_hat, report = stationary_gauss_newton(
            exp.kernel, sensors, obs, beta, exp.m_ref, cfg.gauss_newton
        )
        mu_hat = _as_measure(m_hat, exp)
        outcome.hk2[Estimator.GAUSS_NEWTON] = _safe_hk2(mu_hat, exp.truth, exp)
        outcome.status[Estimator.GAUSS_NEWTON] = report.status

    if Estimator.LINEARIZED in enabled:
        try:
            dm = linearized_estimate(sensors, exp.kernel, exp.m_ref, obs.epsilon, beta)
            weighting = weighting_from(exp.m_ref.q, exp.m_ref.dim)
            outcome.hk2[Estimator.LINEARIZED] = weighted_norm(dm, weighting) ** 2
            outcome.status[Estimator.LINEARIZED] = SolveStatus.CONVERGED
        except SingularFisherError:
            outcome.hk2[Estimator.LINEARIZED] = math.nan
            outcome.status[Estimator.LINEARIZED] = SolveStatus.SINGULAR

    if mu_bar is not None and mu_hat is not None and mu_bar.n_atoms == exp.truth.n_atoms:
        outcome.hk_pdap_vs_gn = math.sqrt(max(_safe_hk2(mu_bar, mu_hat, exp), 0.0))
    if constants is not None:
        flags = good_event_flags(constants, misfit_norm(obs.epsilon, sensors), beta)
        outcome.good_event = flags.all
    return outcome


@dataclass
class StudyCell:
    """All samples of one (sensor set, beta0, p) combination and their aggregates."""

    sensor_set: str
    beta0: float
    p: float
    design: DesignReport
    samples: List[SampleOutcome]
    records: List[ResultRecord] = field(default_factory=list)
    constants: Optional[TheoryConstants] = None


def _aggregate(values: Sequence[float]) -> Tuple[float, float, int]:
    arr = np.asarray(values, dtype=float)
    finite = arr[np.isfinite(arr)]
    failures = int(arr.size - finite.size)
    if finite.size == 0:
        return math.nan, math.nan, failures
    mean = float(np.mean(finite))
    stderr = float(np.std(finite, ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0
    return mean, stderr, failures


def run_study_cell(
    exp: Experiment,
    sensor_set: str,
    beta0: float,
    p: float,
    threads: int = 1,
) -> StudyCell:
    """
    Monte-Carlo evaluation of one design at one (beta0, p).

    Samples run on a thread pool; outcomes are collected by index and
    aggregated in index order, so results never depend on `threads`.
    """
    cfg = exp.config
    sensors = exp.sensors(sensor_set, p)
    design = exp.design(sensor_set, beta0, p)
    constants = None
    try:
        constants = exp.constants(sensor_set, beta0, p)
    except SingularFisherError as exc:
        logger.info("no theory constants for '%s': %s", sensor_set, exc)

    indices = range(cfg.samples)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda i: run_sample(exp, sensors, beta0, i, constants), indices))
    else:
        samples = [run_sample(exp, sensors, beta0, i, constants) for i in indices]

    admissibility = exp.admissibility(sensor_set)
    cell = StudyCell(sensor_set, beta0, p, design, samples, constants=constants)
    n_true = exp.truth.n_atoms
    for estimator in cfg.estimators.enabled():
        values = [s.hk2.get(estimator, math.nan) for s in samples]
        mean, stderr, failures = _aggregate(values)
        failures = max(
            failures,
            sum(1 for s in samples if s.status.get(estimator, SolveStatus.CONVERGED) != SolveStatus.CONVERGED),
        )
        exact = None
        if estimator == Estimator.PDAP:
            exact = float(np.mean([s.pdap_atoms == n_true for s in samples]))
        good = None
        if constants is not None:
            good = float(np.mean([bool(s.good_event) for s in samples]))
        cell.records.append(
            ResultRecord(
                experiment=cfg.name,
                sensor_set=sensor_set,
                beta0=beta0,
                p=p,
                estimator=estimator,
                mean_hk2=mean,
                stderr=stderr,
                expected_mse=design.expected_mse,
                samples=cfg.samples,
                seed=cfg.seed,
                failures=failures,
                admissible=admissibility.admissible if admissibility is not None else False,
                exact_support_fraction=exact,
                good_event_fraction=good,
            )
        )
    logger.info(
        "study %s beta0=%g p=%g: %s",
        sensor_set,
        beta0,
        p,
        ", ".join(f"{r.estimator.value}={r.mean_hk2:.6e}" for r in cell.records),
    )
    return cell


def run_mse_study(config: ExperimentConfig, threads: int = 1) -> List[ResultRecord]:
    """
    Monte-Carlo MSE study over every active sensor set, beta0 and p.

    The regularization parameter follows beta = beta0 / sqrt(p).
    """
    exp = Experiment(config)
    records: List[ResultRecord] = []
    for spec in config.active_sensor_sets():
        for beta0 in config.beta0:
            for p in config.p:
                records.extend(run_study_cell(exp, spec.name, beta0, p, threads).records)
    return records


def run_parameter_sweep(
    config: ExperimentConfig,
    beta0s: Sequence[float] = (0.5, 1.0, 2.0),
    ps: Sequence[float] = (1e4, 1e5, 1e6),
    threads: int = 1,
) -> List[ResultRecord]:
    """PDAP over the beta0 x p grid; each record carries its exact-support fraction."""
    sweep = config.model_copy(
        update={
            "beta0": list(beta0s),
            "p": list(ps),
            "estimators": config.estimators.model_copy(
                update={"pdap": True, "gauss_newton": False, "linearized": False}
            ),
        }
    )
    return run_mse_study(sweep, threads)


def check_theorem_bound(
    records: Iterable[ResultRecord],
    constants: Union[TheoryConstants, Mapping[Tuple[str, float, float], TheoryConstants]],
) -> List[BoundCheck]:
    """Compare each PDAP record with 8 * expected_mse + bad_event_bound."""
    checks = []
    for record in records:
        if record.estimator != Estimator.PDAP:
            continue
        if isinstance(constants, TheoryConstants):
            cell = constants
        else:
            cell = constants[(record.sensor_set, record.beta0, record.p)]
        bound = 8.0 * record.expected_mse + cell.bad_event_bound
        checks.append(
            BoundCheck(
                sensor_set=record.sensor_set,
                beta0=record.beta0,
                p=record.p,
                estimator=record.estimator,
                empirical=record.mean_hk2,
                bound=bound,
                holds=bool(record.mean_hk2 <= bound),
            )
        )
    return checks


def emit_results(
    records: Sequence[ResultRecord], out_dir: Union[str, Path], stem: str = "results"
) -> Tuple[Path, Path]:
    """
    Write `<stem>.csv` (fixed header) and its `<stem>.json` mirror, overwriting both.

    Returns:
        Paths of the CSV and JSON files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in records:
            data = record.model_dump()
            writer.writerow([fmt(data[key]) for key in CSV_HEADER])
    with open(json_path, "w") as f:
        f.write(json.dumps([json.loads(r.model_dump_json()) for r in records], indent=2))
        f.write("\n")
    return csv_path, json_path


@dataclass
class ReconstructionBundle:
    """Everything one reconstruction produces."""

    sensor_set: str
    sensors: SensorConfig
    beta: float
    observation: Observation
    mu_bar: SparseMeasure
    pdap_report: SolveReport
    mu_hat: Optional[SparseMeasure]
    gn_report: Optional[SolveReport]
    admissibility: Optional[AdmissibilityReport]
    curve: Tuple[np.ndarray, np.ndarray]
    hk_pdap_vs_gn: Optional[float] = None

    @property
    def exact_data(self) -> bool:
        return self.observation.seed is None


def run_reconstruction(
    config: ExperimentConfig,
    sensor_set: str,
    seed: Optional[int] = None,
    beta0: Optional[float] = None,
    p: Optional[float] = None,
    observation: Optional[np.ndarray] = None,
) -> ReconstructionBundle:
    """
    Reconstruct from exact (`seed` None) or noisy data for one design.

    Exact data carries the pre-certificate curve and its admissibility report;
    noisy data carries the certificate of the computed solution.
    """
    exp = Experiment(config)
    p = config.p[0] if p is None else p
    beta0 = config.beta0[0] if beta0 is None else beta0
    sensors = exp.sensors(sensor_set, p)
    beta = beta0 / math.sqrt(p)
    if observation is not None:
        obs = Observation(np.asarray(observation, dtype=float), None, None)
        obs.check(sensors)
    else:
        obs = synthesize(exp.kernel, sensors, exp.truth, seed)

    mu_bar, pdap_report = solve_blasso_pdap(exp.kernel, sensors, obs, beta, config.pdap)
    mu_hat, gn_report = None, None
    if config.estimators.gauss_newton:
        m_hat, gn_report = stationary_gauss_newton(
            exp.kernel, sensors, obs, beta, exp.m_ref, config.gauss_newton
        )
        mu_hat = _as_measure(m_hat, exp)

    admissibility = None
    if obs.seed is None and observation is None:
        admissibility = exp.admissibility(sensor_set)
        try:
            eta = pre_certificate(exp.kernel, sensors, exp.m_ref)
        except SingularFisherError:
            eta = regularized_certificate(exp.kernel, sensors, mu_bar, obs, beta)
    else:
        eta = regularized_certificate(exp.kernel, sensors, mu_bar, obs, beta)
    curve = certificate_curve(eta, config.certificate_resolution)

    hk = None
    if mu_hat is not None:
        hk2 = _safe_hk2(mu_bar, mu_hat, exp)
        hk = math.sqrt(hk2) if math.isfinite(hk2) else None
    return ReconstructionBundle(
        sensor_set, sensors, beta, obs, mu_bar, pdap_report, mu_hat, gn_report, admissibility, curve, hk
    )


def write_curve(path: Path, curve: Tuple[np.ndarray, np.ndarray]) -> Path:
    points, values = curve
    dim = points.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"y{i}" for i in range(dim)] + ["eta"] if dim > 1 else ["y", "eta"])
        for pt, val in zip(points, values):
            writer.writerow([fmt(float(c)) for c in pt] + [fmt(float(val))])
    return path


def write_bundle(bundle: ReconstructionBundle, out_dir: Union[str, Path]) -> List[Path]:
    """Write measures, solver reports, certificate curve and atom stems to `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name: str, payload: Any) -> None:
        path = out_dir / name
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        written.append(path)

    dump("mu_bar.json", bundle.mu_bar.to_json())
    if bundle.mu_hat is not None:
        dump("mu_hat.json", bundle.mu_hat.to_json())
    reports = {"pdap": json.loads(bundle.pdap_report.model_dump_json())}
    if bundle.gn_report is not None:
        reports["gauss_newton"] = json.loads(bundle.gn_report.model_dump_json())
    reports["hk_pdap_vs_gn"] = bundle.hk_pdap_vs_gn
    dump("solve_reports.json", reports)
    if bundle.admissibility is not None:
        dump("admissibility.json", json.loads(bundle.admissibility.model_dump_json()))
    written.append(write_curve(out_dir / "certificate_curve.csv", bundle.curve))

    stems = out_dir / "atoms.csv"
    with open(stems, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["estimator", "weight", "position"])
        for name, measure in (("pdap", bundle.mu_bar), ("gauss_newton", bundle.mu_hat)):
            if measure is None:
                continue
            for w, pos in zip(measure.weights, measure.positions):
                writer.writerow([name, fmt(float(w)), " ".join(fmt(float(c)) for c in pos)])
    written.append(stems)
    return written


def linearization_remainder(
    exp: Experiment, sensors: SensorConfig, epsilon: np.ndarray, beta: float
) -> Tuple[float, float]:
    """(||m_hat - m_ref - dm_hat||_W, ||eps||_{Sigma0^{-1}} + beta) for one noise vector."""
    system = fisher_system(exp.kernel, sensors, exp.m_ref)
    system.require_invertible(SINGULAR_THRESHOLD)
    z = synthesize(exp.kernel, sensors, exp.truth).z + epsilon
    m_hat, _ = stationary_gauss_newton(exp.kernel, sensors, z, beta, exp.m_ref, exp.config.gauss_newton)
    dm = linearized_estimate(sensors, exp.kernel, exp.m_ref, epsilon, beta)
    weighting = weighting_from(exp.m_ref.q, exp.m_ref.dim)
    remainder = weighted_norm(m_hat - exp.m_ref - dm, weighting)
    return remainder, misfit_norm(epsilon, sensors) + beta

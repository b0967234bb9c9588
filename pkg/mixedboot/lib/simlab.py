#!/usr/bin/env python3
import configparser
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mixedboot.lib.engines import BootstrapMethod, run_bootstrap
from mixedboot.lib.errors import (
    ConfigurationError,
    MixedBootError,
    StudyAbortedError,
)
from mixedboot.lib.inference import CoverageReport, PercentileCI, coverage, run_intervals
from mixedboot.lib.lmm_core import ClusteredDataset, Criterion, fit, parameter_names
from mixedboot.lib.logging_trait import LoggingTrait
from mixedboot.lib.parallel import map_ordered
from mixedboot.lib.resample import (
    RandomLike,
    RandomSource,
    as_generator,
    draw_chisq1_standardized,
)
from mixedboot.lib.statistics import LAMBDA

# independent stream families per simulation index
DATA_STREAM: int = 0
BOOTSTRAP_STREAM: int = 1

MAX_FIT_FAILURE_RATE: float = 0.05

GRID_COLUMNS: List[str] = ["method", "scenario", "target", "coverage", "R", "B", "failures"]

# 100 clusters, N = 752, sizes 1..42, right-skewed; frozen, never regenerated
UNBALANCED_PROFILE: Tuple[int, ...] = (
    (1,) * 20
    + (2,) * 12
    + (3,) * 10
    + (4,) * 8
    + (5,) * 7
    + (6,) * 6
    + (7,) * 5
    + (8,) * 4
    + (9,) * 4
    + (10,) * 3
    + (11,) * 3
    + (12,) * 2
    + (13,) * 2
    + (14,) * 2
    + (15,) * 2
    + (18, 21, 24, 26, 29, 31, 33, 37, 40, 42)
)


def default_unbalanced_profile() -> List[int]:
    return list(UNBALANCED_PROFILE)


class EffectDistribution(str, Enum):
    # set I
    NORMAL = "normal"
    # set II, (chi2_1 - 1) / sqrt(2)
    CHISQ1 = "chisq1"

    @classmethod
    def parse(cls, value) -> "EffectDistribution":
        if isinstance(value, EffectDistribution):
            return value
        key = str(value).strip().lower()
        key = {"set1": "normal", "set2": "chisq1", "chisq": "chisq1"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(
                "Invalid effect distribution %s, valid options are %s"
                % (value, [d.value for d in cls])
            )

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self == EffectDistribution.NORMAL:
            return rng.standard_normal(count)
        return draw_chisq1_standardized(count, rng)


@dataclass(frozen=True)
class SimulationScenario:
    name: str
    cluster_sizes: Tuple[int, ...]
    beta: Tuple[float, ...] = (1.0, 2.0)
    sigma2_u: float = 0.04
    sigma2_e: float = 0.16
    effect_dist: EffectDistribution = EffectDistribution.NORMAL
    R: int = 200
    B: int = 200
    level: float = 0.95
    methods: Tuple[BootstrapMethod, ...] = tuple(BootstrapMethod)
    seed: int = 11
    criterion: Criterion = Criterion.REML

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(n) for n in self.cluster_sizes))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "effect_dist", EffectDistribution.parse(self.effect_dist))
        object.__setattr__(
            self, "methods", tuple(BootstrapMethod.parse(m) for m in self.methods)
        )
        object.__setattr__(self, "criterion", Criterion.parse(self.criterion))
        problems = self.get_incorrect_configurations()
        if problems:
            raise ConfigurationError(
                "; ".join(f"{param}={value!r}: {message}" for param, value, message in problems)
            )

    def get_incorrect_configurations(self) -> List[Tuple[str, object, str]]:
        rtn: List[Tuple[str, object, str]] = []
        if len(self.cluster_sizes) < 2:
            rtn.append(("cluster_sizes", self.cluster_sizes, "at least two clusters"))
        if any(n < 1 for n in self.cluster_sizes):
            rtn.append(("cluster_sizes", self.cluster_sizes, "sizes must be >= 1"))
        if len(self.beta) < 1:
            rtn.append(("beta", self.beta, "needs an intercept"))
        if self.sigma2_u < 0 or self.sigma2_e < 0:
            rtn.append(("sigma2", (self.sigma2_u, self.sigma2_e), "variances must be >= 0"))
        if not 0.0 < self.level < 1.0:
            rtn.append(("level", self.level, "must be in (0, 1)"))
        if self.R < 1:
            rtn.append(("R", self.R, "at least one simulation"))
        if self.B < 1:
            rtn.append(("B", self.B, "at least one replicate"))
        if self.seed < 0:
            rtn.append(("seed", self.seed, "must be non-negative"))
        return rtn

    @property
    def D(self) -> int:
        return len(self.cluster_sizes)

    @property
    def N(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def is_balanced(self) -> bool:
        return len(set(self.cluster_sizes)) == 1

    @property
    def truth(self) -> Dict[str, float]:
        values = dict(
            zip(parameter_names(len(self.beta)), self.beta + (self.sigma2_u, self.sigma2_e))
        )
        if self.sigma2_e > 0.0:
            values[LAMBDA] = self.sigma2_u / self.sigma2_e
        return values

    def replace(self, **changes) -> "SimulationScenario":
        return dataclasses.replace(self, **changes)


def _preset(name: str, sizes: Sequence[int], effect_dist: EffectDistribution):
    return SimulationScenario(name=name, cluster_sizes=tuple(sizes), effect_dist=effect_dist)


PRESETS: Dict[str, SimulationScenario] = {
    "set1-balanced": _preset("set1-balanced", (7,) * 100, EffectDistribution.NORMAL),
    "set1-unbalanced": _preset("set1-unbalanced", UNBALANCED_PROFILE, EffectDistribution.NORMAL),
    "set2-balanced": _preset("set2-balanced", (7,) * 100, EffectDistribution.CHISQ1),
    "set2-unbalanced": _preset("set2-unbalanced", UNBALANCED_PROFILE, EffectDistribution.CHISQ1),
}


def preset(name: str) -> SimulationScenario:
    if name not in PRESETS:
        raise ConfigurationError(
            "Unknown preset %s, valid presets are %s" % (name, sorted(PRESETS.keys()))
        )
    return PRESETS[name]


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.replace(";", ",").split(",") if item.strip()]


def load_scenario_file(
    filepath: Optional[str] = None, filedata: Optional[str] = None
) -> SimulationScenario:
    """
    Custom scenario from an INI [scenario] section. Cluster sizes are given
    either as `cluster_sizes = 3,5,...`, `balanced = D,n` or `profile = unbalanced`.
    """
    if filepath and filedata:
        raise ConfigurationError("Cannot load scenario from both filepath and filedata")

    parser = configparser.ConfigParser()
    try:
        if filepath:
            with open(filepath) as handle:
                parser.read_file(handle)
        elif filedata:
            parser.read_string(filedata)
    except (OSError, configparser.Error) as e:
        raise ConfigurationError(f"Cannot read scenario file: {e}")
    if not parser.has_section("scenario"):
        raise ConfigurationError("Scenario file lacks a [scenario] section")
    section = parser["scenario"]

    try:
        if section.get("cluster_sizes", "").strip():
            sizes = [int(n) for n in _split_list(section["cluster_sizes"])]
        elif section.get("balanced", "").strip():
            D, n = (int(v) for v in _split_list(section["balanced"]))
            sizes = [n] * D
        elif section.get("profile", "").strip().lower() == "unbalanced":
            sizes = default_unbalanced_profile()
        else:
            raise ConfigurationError(
                "Scenario needs one of cluster_sizes, balanced or profile = unbalanced"
            )
        kwargs = dict(
            name=section.get("name", "custom").strip() or "custom",
            cluster_sizes=sizes,
            sigma2_u=section.getfloat("sigma2_u", fallback=0.04),
            sigma2_e=section.getfloat("sigma2_e", fallback=0.16),
            effect_dist=section.get("effect_dist", fallback="normal"),
            R=section.getint("R", fallback=200),
            B=section.getint("B", fallback=200),
            level=section.getfloat("level", fallback=0.95),
            seed=section.getint("seed", fallback=11),
            criterion=section.get("criterion", fallback="REML"),
        )
        if section.get("beta", "").strip():
            kwargs["beta"] = [float(b) for b in _split_list(section["beta"])]
        if section.get("methods", "").strip():
            kwargs["methods"] = _split_list(section["methods"])
    except ValueError as e:
        raise ConfigurationError(f"Invalid value in [scenario]: {e}")
    try:
        return SimulationScenario(**kwargs)
    except MixedBootError as e:
        raise ConfigurationError(str(e))


def generate_dataset(
    scenario: SimulationScenario, sim_index: int, rng: Optional[RandomLike] = None
) -> Tuple[ClusteredDataset, Dict[str, float]]:
    """
    Covariates U(0,1) for each non-intercept column, then u_i, then e_ij,
    all drawn from the data stream of sim_index unless rng is given
    """
    if rng is None:
        rng = RandomSource(scenario.seed, sim_index, parent_key=(DATA_STREAM,))
    generator = as_generator(rng)
    sizes = np.asarray(scenario.cluster_sizes, dtype=np.int64)
    beta = np.asarray(scenario.beta)
    N, D = int(sizes.sum()), sizes.shape[0]

    covariates = generator.random((N, beta.shape[0] - 1))
    X = np.hstack([np.ones((N, 1)), covariates])
    u = np.sqrt(scenario.sigma2_u) * scenario.effect_dist.draw(D, generator)
    e = np.sqrt(scenario.sigma2_e) * scenario.effect_dist.draw(N, generator)
    y = X @ beta + np.repeat(u, sizes) + e
    return ClusteredDataset(cluster_sizes=sizes, y=y, X=X), scenario.truth


def write_dataset_csv(
    data: ClusteredDataset, path: str, cluster_ids: Optional[Sequence[str]] = None
) -> None:
    """dataset in the ingest schema: cluster_id, y, x1..x(p-1)"""
    if cluster_ids is None:
        cluster_ids = [str(i + 1) for i in range(data.D)]
    if len(cluster_ids) != data.D:
        raise ConfigurationError(f"{len(cluster_ids)} cluster ids for {data.D} clusters")
    frame = pd.DataFrame({"cluster_id": np.repeat(np.asarray(cluster_ids), data.cluster_sizes)})
    frame["y"] = data.y
    for k in range(1, data.p):
        frame[f"x{k}"] = data.X[:, k]
    frame.to_csv(path, index=False, lineterminator="\n")


@dataclass
class SimulationOutcome:
    sim_index: int
    fit_error: Optional[str] = None
    intervals: Dict[str, Dict[str, PercentileCI]] = field(default_factory=dict)
    method_errors: Dict[str, str] = field(default_factory=dict)


def simulate_one(scenario: SimulationScenario, sim_index: int) -> SimulationOutcome:
    """
    One simulated dataset through every method. All methods share the same
    replicate streams, so equivalent engines give identical intervals.
    """
    data, _ = generate_dataset(scenario, sim_index)
    outcome = SimulationOutcome(sim_index=sim_index)
    try:
        point = fit(data, scenario.criterion)
    except MixedBootError as e:
        outcome.fit_error = str(e)
        return outcome

    source = RandomSource(scenario.seed, sim_index, parent_key=(BOOTSTRAP_STREAM,))
    for method in scenario.methods:
        try:
            run = run_bootstrap(method, data, point, scenario.B, source)
            outcome.intervals[method.value] = run_intervals(run, scenario.level)
        except MixedBootError as e:
            outcome.method_errors[method.value] = str(e)
    return outcome


@dataclass
class StudyResult:
    scenario: SimulationScenario
    reports: List[CoverageReport]
    fit_failures: int = 0

    def grid_rows(self) -> List[Dict[str, object]]:
        rows = []
        for report in self.reports:
            for target in report.targets:
                rows.append(
                    dict(
                        method=report.method,
                        scenario=self.scenario.name,
                        target=target,
                        coverage=report.coverage[target],
                        R=report.R,
                        B=self.scenario.B,
                        failures=report.failures,
                    )
                )
        return rows

    def grid(self) -> pd.DataFrame:
        return pd.DataFrame(self.grid_rows(), columns=GRID_COLUMNS)

    def report_for(self, method) -> CoverageReport:
        method = BootstrapMethod.parse(method).value
        for report in self.reports:
            if report.method == method:
                return report
        raise KeyError(method)


class StudyRunner(LoggingTrait):
    def __init__(
        self,
        scenario: SimulationScenario,
        workers: int = 1,
        max_fit_failure_rate: float = MAX_FIT_FAILURE_RATE,
    ):
        self.scenario = scenario
        self.workers = workers
        self.max_fit_failure_rate = max_fit_failure_rate

    def log_scenario(self) -> None:
        s = self.scenario
        sizes = (
            f"balanced, n = {s.cluster_sizes[0]}"
            if s.is_balanced
            else f"unbalanced, {min(s.cluster_sizes)}..{max(s.cluster_sizes)}"
        )
        self.log_lines(
            "-------- SIMULATION SCENARIO --------\n"
            f"Name\t\t| {s.name}\n"
            f"Clusters\t| D = {s.D}, N = {s.N} ({sizes})\n"
            f"Beta\t\t| {list(s.beta)}\n"
            f"Variances\t| sigma2_u = {s.sigma2_u}, sigma2_e = {s.sigma2_e}\n"
            f"Effects\t\t| {s.effect_dist.value}\n"
            f"Replication\t| R = {s.R}, B = {s.B}, level = {s.level}\n"
            f"Criterion\t| {s.criterion.value}\n"
            f"Methods\t\t| {', '.join(m.label for m in s.methods)}\n"
            f"Seed\t\t| {s.seed}\n"
            "-------- SIMULATION SCENARIO --------"
        )

    def run(self) -> StudyResult:
        self.log_scenario()
        outcomes: List[SimulationOutcome] = map_ordered(
            partial(simulate_one, self.scenario),
            list(range(self.scenario.R)),
            workers=self.workers,
            processes=True,
        )
        return self.aggregate(outcomes)

    def aggregate(self, outcomes: Sequence[SimulationOutcome]) -> StudyResult:
        outcomes = sorted(outcomes, key=lambda o: o.sim_index)
        R = len(outcomes)
        fit_failures = sum(1 for o in outcomes if o.fit_error is not None)
        for o in outcomes:
            if o.fit_error is not None:
                self.log_warning(f"simulation {o.sim_index}: fit failed: {o.fit_error}")
        if R and fit_failures / R > self.max_fit_failure_rate:
            raise StudyAbortedError(
                f"{fit_failures} of {R} simulated datasets failed to fit, "
                f"above the {self.max_fit_failure_rate:.0%} limit"
            )

        truth = self.scenario.truth
        reports = []
        for method in self.scenario.methods:
            sims = [o.intervals[method.value] for o in outcomes if method.value in o.intervals]
            failures = R - len(sims)
            for o in outcomes:
                if method.value in o.method_errors:
                    self.log_debug(
                        f"simulation {o.sim_index}: {method.label} failed: "
                        f"{o.method_errors[method.value]}"
                    )
            if failures:
                self.log_info(f"{method.label}: {failures} of {R} simulations unusable")
            reports.append(coverage(truth, sims, method.value, failures))
        return StudyResult(scenario=self.scenario, reports=reports, fit_failures=fit_failures)


def run_study(scenario: SimulationScenario, workers: int = 1) -> StudyResult:
    return StudyRunner(scenario, workers=workers).run()

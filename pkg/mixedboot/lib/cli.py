#!/usr/bin/env python3
import argparse
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from mixedboot import __version__
from mixedboot.lib.engines import create_engine
from mixedboot.lib.errors import (
    EXIT_OK,
    EXIT_PARSE_ERROR,
    EXIT_UNEXPECTED,
    ConfigurationError,
    IngestError,
    MixedBootError,
)
from mixedboot.lib.inference import (
    bootstrap_pvalue,
    run_intervals,
    summarize_samples,
)
from mixedboot.lib.lmm_core import ClusteredDataset, fit
from mixedboot.lib.logging_trait import LoggingTrait, configure_logging
from mixedboot.lib.parallel import resolve_threads
from mixedboot.lib.report_format import (
    BOOTSTRAP_COLUMNS,
    FIT_COLUMNS,
    bootstrap_rows,
    build_metadata,
    fit_metadata,
    fit_rows,
    format_brackets,
    format_fit_summary,
    format_interval_line,
    render_table,
    replicate_columns,
    replicate_rows,
    write_output,
)
from mixedboot.lib.resample import RandomSource
from mixedboot.lib.settings import RunConfig
from mixedboot.lib.simlab import GRID_COLUMNS, StudyRunner, load_scenario_file, preset

CLUSTER_COLUMN: str = "cluster_id"
RESPONSE_COLUMN: str = "y"


def ingest_csv(path: str) -> ClusteredDataset:
    """
    Read `cluster_id,y,x1..xk` rows into a dataset. Clusters are indexed by
    first appearance of their id, rows keep file order within a cluster and
    the intercept column is prepended. Errors carry the 1-based file line.
    """
    try:
        raw = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise IngestError("file is empty", line=1)
    except pd.errors.ParserError as e:
        raise IngestError(f"malformed CSV: {e}")
    except (OSError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot read {path}: {e}")

    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    seen = set()
    for name in header:
        if name in seen:
            raise IngestError(f"duplicate column {name!r} in header", line=1)
        seen.add(name)
    for required in (CLUSTER_COLUMN, RESPONSE_COLUMN):
        if required not in seen:
            raise IngestError(f"missing required column {required!r}", line=1)
    covariates = [name for name in header if name not in (CLUSTER_COLUMN, RESPONSE_COLUMN)]
    expected = {f"x{k}" for k in range(1, len(covariates) + 1)}
    if set(covariates) != expected:
        raise IngestError(
            f"covariate columns must be x1..x{len(covariates)}, got {covariates}", line=1
        )

    body = raw.iloc[1:].copy()
    body.columns = header
    body = body.fillna("").apply(lambda column: column.str.strip())
    # trailing blank lines are not rows
    filled = np.flatnonzero((body != "").any(axis=1).to_numpy())
    body = body.iloc[: int(filled[-1]) + 1] if filled.shape[0] else body.iloc[:0]
    if body.shape[0] == 0:
        raise IngestError("no data rows", line=2)

    # frame row r sits on file line r + 1
    for column in [CLUSTER_COLUMN, RESPONSE_COLUMN] + sorted(covariates, key=lambda c: int(c[1:])):
        empty = body[column] == ""
        if empty.any():
            row = int(np.flatnonzero(empty.to_numpy())[0])
            raise IngestError(f"missing value in column {column!r}", line=row + 2)

    numeric: Dict[str, np.ndarray] = {}
    for column in [RESPONSE_COLUMN] + [f"x{k}" for k in range(1, len(covariates) + 1)]:
        values = pd.to_numeric(body[column], errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise IngestError(
                f"non-numeric value {body[column].iloc[row]!r} in column {column!r}",
                line=row + 2,
            )
        numeric[column] = values

    codes, _ = pd.factorize(body[CLUSTER_COLUMN], sort=False)
    order = np.argsort(codes, kind="stable")
    sizes = np.bincount(codes)
    X = np.column_stack(
        [np.ones(body.shape[0])] + [numeric[f"x{k}"] for k in range(1, len(covariates) + 1)]
    )
    return ClusteredDataset(cluster_sizes=sizes, y=numeric[RESPONSE_COLUMN][order], X=X[order])


class CommandRunner(LoggingTrait):
    def dispatch(self, config: RunConfig) -> int:
        """run the configured command, errors become exit codes"""
        try:
            return getattr(self, f"cmd_{config.command}")(config)
        except MixedBootError as e:
            self.log_error(f"{type(e).__name__}: {e}")
            return e.exit_code
        except Exception as e:
            self.log_exception(e)
            return EXIT_UNEXPECTED

    def cmd_fit(self, config: RunConfig) -> int:
        data = ingest_csv(config.input)
        point = fit(data, config.get_criterion())
        self.log_lines(format_fit_summary(point))
        metadata = build_metadata(
            config.get_seed(), config.config_hash(), command=config.command, **fit_metadata(point)
        )
        write_output(render_table(fit_rows(point), FIT_COLUMNS, metadata, config.format), config.output)
        return EXIT_OK

    def cmd_bootstrap(self, config: RunConfig) -> int:
        data = ingest_csv(config.input)
        criterion = config.get_criterion()
        point = fit(data, criterion)
        self.log_lines(format_fit_summary(point))

        statistics = config.build_statistics()
        threads = resolve_threads(config.threads_flag, config.threads)
        source = RandomSource(seed=config.get_seed())
        rows: List[Dict[str, object]] = []
        dumped: List[Dict[str, object]] = []
        dump_columns: List[str] = []

        for method in config.get_methods():
            engine = create_engine(method, data, point, statistics, criterion)
            run = engine.run(config.B, source, threads=threads)
            intervals = run_intervals(run, config.level, config.max_failure_rate)
            summaries = {
                target: summarize_samples(run.samples(target), run.estimate(target), target)
                for target in run.targets
            }
            pvalues = {
                plugin.name: bootstrap_pvalue(run.samples(plugin.name)) for plugin in statistics
            }
            for ci in intervals.values():
                self.log_info(format_interval_line(method.label, ci))
            rows.extend(bootstrap_rows(run, intervals, summaries, pvalues))
            if config.dump_replicates:
                dumped.extend(replicate_rows(run))
                dump_columns = replicate_columns(run)

        metadata = build_metadata(
            config.get_seed(),
            config.config_hash(),
            command=config.command,
            criterion=criterion.value,
            level=config.level,
            input=config.input,
        )
        write_output(render_table(rows, BOOTSTRAP_COLUMNS, metadata, config.format), config.output)
        if config.dump_replicates:
            write_output(
                render_table(dumped, dump_columns, metadata, config.format),
                config.dump_replicates,
            )
        return EXIT_OK

    def cmd_simulate(self, config: RunConfig) -> int:
        if config.scenario_file:
            scenario = load_scenario_file(filepath=config.scenario_file)
        else:
            scenario = preset(config.preset)
        changes = {}
        if config.R is not None:
            changes["R"] = config.R
        if config.sim_B is not None:
            changes["B"] = config.sim_B
        if config.sim_methods:
            changes["methods"] = config.sim_methods
        if config.seed is not None:
            changes["seed"] = config.seed
        if config.criterion is not None:
            changes["criterion"] = config.criterion
        scenario = scenario.replace(**changes)

        workers = resolve_threads(config.threads_flag, config.threads)
        result = StudyRunner(scenario, workers=workers).run()
        for report in result.reports:
            rates = " ".join(
                format_brackets(f"{t} {report.coverage[t]:.3f}", width=16) for t in report.targets
            )
            self.log_info(
                format_brackets(report.method, width=10)
                + rates
                + f"R {report.R} failures {report.failures}"
            )

        truth = {f"truth.{target}": value for target, value in scenario.truth.items()}
        metadata = build_metadata(
            scenario.seed,
            config.config_hash(),
            command=config.command,
            scenario=scenario.name,
            R=scenario.R,
            B=scenario.B,
            level=scenario.level,
            criterion=scenario.criterion.value,
            **truth,
        )
        write_output(
            render_table(result.grid_rows(), GRID_COLUMNS, metadata, config.format), config.output
        )
        return EXIT_OK


def cmd_fit(config: RunConfig) -> int:
    return CommandRunner().cmd_fit(config)


def cmd_bootstrap(config: RunConfig) -> int:
    return CommandRunner().cmd_bootstrap(config)


def cmd_simulate(config: RunConfig) -> int:
    return CommandRunner().cmd_simulate(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedboot",
        description="Random intercept model fitting, bootstrap intervals and coverage studies",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration, flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--criterion", type=str.upper, choices=["ML", "REML"])
    common.add_argument("--output", "-o", help="output path, stdout when omitted")
    common.add_argument("--format", type=str.lower, choices=list(RunConfig.ALL_FORMATS))
    common.add_argument("--threads", type=int, help="worker count, overrides MIXEDBOOT_THREADS")
    common.add_argument("--logging", help="logging.config.fileConfig INI file")
    common.add_argument("--verbose", "-v", action="store_true")

    commands = parser.add_subparsers(dest="command", required=True)

    fit_parser = commands.add_parser("fit", parents=[common], help="fit the model and report estimates")
    fit_parser.add_argument("--input", "-i")

    boot = commands.add_parser("bootstrap", parents=[common], help="bootstrap percentile intervals")
    boot.add_argument("--input", "-i")
    boot.add_argument("--method", action="append", help="method id, repeatable or comma separated")
    boot.add_argument("--B", type=int)
    boot.add_argument("--level", type=float)
    boot.add_argument("--dump-replicates", dest="dump_replicates", help="write replicate matrix here")
    boot.add_argument("--stat", action="append", help="linear combination NAME=c0,c1,...")
    boot.add_argument("--effect", action="append", help="treatment effect NAME=col,...")

    sim = commands.add_parser("simulate", parents=[common], help="coverage simulation study")
    sim.add_argument("--preset")
    sim.add_argument("--scenario-file", dest="scenario_file")
    sim.add_argument("--R", type=int)
    sim.add_argument("--B", type=int)
    sim.add_argument("--methods", action="append", help="method ids, repeatable or comma separated")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(filepath=args.config, command=args.command)
    config.apply_overrides(args)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_PARSE_ERROR

    mainlog = logging.getLogger("mixedboot")
    try:
        config = load_config(args)
    except MixedBootError as e:
        configure_logging(args.logging, args.verbose)
        mainlog.error(str(e))
        return e.exit_code
    configure_logging(config.logging or None, args.verbose)

    incorrect_config_params = config.get_incorrect_configurations()
    if len(incorrect_config_params) > 0:
        mainlog.error("Current configuration is not valid")
        for triplet in incorrect_config_params:
            mainlog.error(f"PARAM: {triplet[0]} CURRENT_VALUE: {triplet[1]} MESSAGE: {triplet[2]}")
        return ConfigurationError.exit_code
    config.print_settings()

    return CommandRunner().dispatch(config)

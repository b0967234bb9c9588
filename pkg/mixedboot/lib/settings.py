#!/usr/bin/env python3

import configparser
import hashlib
import json
from typing import Dict, List, Optional, Tuple

from mixedboot import __version__
from mixedboot.lib.engines import BootstrapMethod
from mixedboot.lib.errors import ConfigurationError, MixedBootError
from mixedboot.lib.inference import MAX_FAILURE_RATE, MIN_SAMPLES
from mixedboot.lib.lmm_core import Criterion
from mixedboot.lib.logging_trait import LoggingTrait
from mixedboot.lib.statistics import (
    StatisticPlugin,
    linear_combination,
    treatment_effect,
)

_UNSET = object()

DEFAULT_SEED: int = 2021


class RunConfig(LoggingTrait):
    SECTION_GENERAL = "general"
    SECTION_BOOTSTRAP = "bootstrap"
    SECTION_SIMULATE = "simulate"
    SECTION_STATISTICS = "statistics"

    COMMAND_FIT = "fit"
    COMMAND_BOOTSTRAP = "bootstrap"
    COMMAND_SIMULATE = "simulate"
    ALL_COMMANDS = (COMMAND_FIT, COMMAND_BOOTSTRAP, COMMAND_SIMULATE)

    FORMAT_CSV = "csv"
    FORMAT_JSON = "json"
    ALL_FORMATS = (FORMAT_CSV, FORMAT_JSON)

    STAT_LINEAR = "linear"
    STAT_EFFECT = "effect"

    MIN_BOOTSTRAP_B = 100
    RECOMMENDED_B = 500

    MINIMAL_SETTINGS = """
    [general]
    seed = 7

    [bootstrap]
    methods = preb1
    """

    # never part of the config hash, they cannot change result bytes
    NON_SEMANTIC_KEYS = ("threads", "logging", "output", "dump_replicates")

    def __init__(
        self, filepath: str = None, filedata: str = None, command: str = COMMAND_BOOTSTRAP
    ) -> None:
        if filepath and filedata:
            raise ConfigurationError(
                "Both filename and filedata provided, this is unsupported, choose one"
            )

        parser = configparser.ConfigParser()
        # statistic names are case sensitive
        parser.optionxform = str
        try:
            if filepath:
                with open(filepath) as handle:
                    parser.read_file(handle)
            elif filedata:
                parser.read_string(string=filedata)
        except (OSError, configparser.Error) as e:
            raise ConfigurationError(f"Cannot read configuration: {e}")

        self.command: str = command
        self.threads_flag: Optional[int] = None

        try:
            self.seed: Optional[int] = self.getint_safe(
                parser, self.SECTION_GENERAL, "seed", fallback=None
            )
            criterion = parser.get(self.SECTION_GENERAL, "criterion", fallback="").strip()
            self.criterion: Optional[str] = criterion.upper() or None
            self.output: str = parser.get(self.SECTION_GENERAL, "output", fallback="")
            self.format: str = parser.get(
                self.SECTION_GENERAL, "format", fallback=self.FORMAT_CSV
            ).lower()
            self.threads: Optional[int] = self.getint_safe(
                parser, self.SECTION_GENERAL, "threads", fallback=None
            )
            self.logging: str = parser.get(self.SECTION_GENERAL, "logging", fallback="")

            self.input: str = parser.get(self.SECTION_BOOTSTRAP, "input", fallback="")
            self.methods: List[str] = self._split(
                parser.get(self.SECTION_BOOTSTRAP, "methods", fallback="preb1")
            )
            self.B: int = self.getint_safe(
                parser, self.SECTION_BOOTSTRAP, "B", fallback=self.RECOMMENDED_B
            )
            self.level: float = parser.getfloat(self.SECTION_BOOTSTRAP, "level", fallback=0.95)
            self.max_failure_rate: float = parser.getfloat(
                self.SECTION_BOOTSTRAP, "max_failure_rate", fallback=MAX_FAILURE_RATE
            )
            self.dump_replicates: str = parser.get(
                self.SECTION_BOOTSTRAP, "dump_replicates", fallback=""
            )

            self.preset: str = parser.get(
                self.SECTION_SIMULATE, "preset", fallback="set1-unbalanced"
            )
            self.scenario_file: str = parser.get(
                self.SECTION_SIMULATE, "scenario_file", fallback=""
            )
            self.R: Optional[int] = self.getint_safe(
                parser, self.SECTION_SIMULATE, "R", fallback=None
            )
            self.sim_B: Optional[int] = self.getint_safe(
                parser, self.SECTION_SIMULATE, "B", fallback=None
            )
            self.sim_methods: List[str] = self._split(
                parser.get(self.SECTION_SIMULATE, "methods", fallback="")
            )
        except ValueError as e:
            raise ConfigurationError(f"Invalid configuration value: {e}")

        self.statistic_specs: List[Tuple[str, str, List[str]]] = []
        if parser.has_section(self.SECTION_STATISTICS):
            for name, raw in parser.items(self.SECTION_STATISTICS):
                kind, _, values = raw.partition(":")
                if not values:
                    kind, values = self.STAT_LINEAR, raw
                self.statistic_specs.append((name, kind.strip().lower(), self._split(values)))

    @staticmethod
    def _split(raw: str) -> List[str]:
        return [item.strip() for item in str(raw).split(",") if item.strip()]

    @staticmethod
    def getint_safe(
        parser: configparser.ConfigParser, section: str, key: str, fallback=_UNSET
    ):
        """
        Blank values where an int is expected resolve to the fallback when one is set
        """
        try:
            return parser.getint(section, key, fallback=fallback)
        except ValueError:
            if fallback is _UNSET:
                raise
            if parser.get(section, key, fallback="").strip():
                raise
            return fallback

    def apply_overrides(self, args) -> None:
        """command line flags win over the file"""
        simple = {
            "seed": "seed",
            "output": "output",
            "threads": "threads_flag",
            "logging": "logging",
            "input": "input",
            "level": "level",
            "dump_replicates": "dump_replicates",
            "preset": "preset",
            "scenario_file": "scenario_file",
            "R": "R",
        }
        for flag, attribute in simple.items():
            value = getattr(args, flag, None)
            if value is not None:
                setattr(self, attribute, value)
        if getattr(args, "criterion", None):
            self.criterion = args.criterion.upper()
        if getattr(args, "format", None):
            self.format = args.format.lower()
        if getattr(args, "B", None) is not None:
            if self.command == self.COMMAND_SIMULATE:
                self.sim_B = args.B
            else:
                self.B = args.B
        if getattr(args, "method", None):
            self.methods = [m for raw in args.method for m in self._split(raw)]
        if getattr(args, "methods", None):
            self.sim_methods = [m for raw in args.methods for m in self._split(raw)]
        for raw in getattr(args, "stat", None) or []:
            self.statistic_specs.append(self._parse_flag_spec(raw, self.STAT_LINEAR))
        for raw in getattr(args, "effect", None) or []:
            self.statistic_specs.append(self._parse_flag_spec(raw, self.STAT_EFFECT))

    def _parse_flag_spec(self, raw: str, kind: str) -> Tuple[str, str, List[str]]:
        name, sep, values = raw.partition("=")
        if not sep or not name.strip():
            raise ConfigurationError(f"Statistic must look like NAME=v1,v2,... got {raw!r}")
        return name.strip(), kind, self._split(values)

    def build_statistics(self) -> List[StatisticPlugin]:
        plugins = []
        for name, kind, values in self.statistic_specs:
            try:
                if kind == self.STAT_LINEAR:
                    plugins.append(linear_combination(name, [float(v) for v in values]))
                elif kind == self.STAT_EFFECT:
                    plugins.append(treatment_effect(name, [int(v) for v in values]))
                else:
                    raise ConfigurationError(
                        "Invalid statistic kind %s for %s, valid options are %s"
                        % (kind, name, (self.STAT_LINEAR, self.STAT_EFFECT))
                    )
            except ValueError:
                raise ConfigurationError(f"Statistic {name} has non-numeric values {values}")
        return plugins

    def get_seed(self, default: int = DEFAULT_SEED) -> int:
        return default if self.seed is None else self.seed

    def get_criterion(self) -> Criterion:
        return Criterion.parse(self.criterion or Criterion.REML.value)

    def get_methods(self) -> List[BootstrapMethod]:
        return [BootstrapMethod.parse(m) for m in self.methods]

    def as_dict(self) -> Dict[str, object]:
        values = {
            "command": self.command,
            "seed": self.seed,
            "criterion": self.criterion,
            "format": self.format,
            "threads": self.threads,
            "logging": self.logging,
            "output": self.output,
            "dump_replicates": self.dump_replicates,
            "statistics": [[n, k, v] for n, k, v in self.statistic_specs],
        }
        if self.command in (self.COMMAND_FIT, self.COMMAND_BOOTSTRAP):
            values["input"] = self.input
        if self.command == self.COMMAND_BOOTSTRAP:
            values.update(
                methods=self.methods,
                B=self.B,
                level=self.level,
                max_failure_rate=self.max_failure_rate,
            )
        if self.command == self.COMMAND_SIMULATE:
            values.update(
                preset=self.preset,
                scenario_file=self.scenario_file,
                R=self.R,
                B=self.sim_B,
                methods=self.sim_methods,
            )
        return values

    def config_hash(self) -> str:
        semantic = {
            k: v for k, v in self.as_dict().items() if k not in self.NON_SEMANTIC_KEYS
        }
        payload = json.dumps(semantic, sort_keys=True) + __version__
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def get_incorrect_configurations(self) -> List[Tuple[str, object, str]]:
        rtn: List[Tuple[str, object, str]] = list()

        if self.command not in self.ALL_COMMANDS:
            rtn.append(("command", self.command, f"valid options are {self.ALL_COMMANDS}"))
        if self.seed is not None and self.seed < 0:
            rtn.append(("general.seed", self.seed, "seed must be a non-negative integer"))
        if self.criterion is not None and self.criterion not in [c.value for c in Criterion]:
            rtn.append(("general.criterion", self.criterion, "valid options are ML, REML"))
        if self.format not in self.ALL_FORMATS:
            rtn.append(("general.format", self.format, f"valid options are {self.ALL_FORMATS}"))
        for threads in (self.threads, self.threads_flag):
            if threads is not None and threads < 1:
                rtn.append(("general.threads", threads, "at least one thread"))

        if self.command in (self.COMMAND_FIT, self.COMMAND_BOOTSTRAP) and not self.input:
            rtn.append(("bootstrap.input", self.input, "an input CSV is required"))

        if self.command == self.COMMAND_BOOTSTRAP:
            if self.B is None or self.B < self.MIN_BOOTSTRAP_B:
                rtn.append(
                    ("bootstrap.B", self.B, f"at least {self.MIN_BOOTSTRAP_B} replicates")
                )
            if not 0.0 < self.level < 1.0:
                rtn.append(("bootstrap.level", self.level, "level must be in (0, 1)"))
            if not 0.0 <= self.max_failure_rate <= 1.0:
                rtn.append(
                    ("bootstrap.max_failure_rate", self.max_failure_rate, "must be in [0, 1]")
                )
            if not self.methods:
                rtn.append(("bootstrap.methods", self.methods, "at least one method"))
            for method in self.methods:
                try:
                    BootstrapMethod.parse(method)
                except MixedBootError as e:
                    rtn.append(("bootstrap.methods", method, str(e)))

        if self.command == self.COMMAND_SIMULATE:
            if self.R is not None and self.R < 1:
                rtn.append(("simulate.R", self.R, "at least one simulation"))
            if self.sim_B is not None and self.sim_B < MIN_SAMPLES:
                rtn.append(("simulate.B", self.sim_B, f"at least {MIN_SAMPLES} replicates"))
            for method in self.sim_methods:
                try:
                    BootstrapMethod.parse(method)
                except MixedBootError as e:
                    rtn.append(("simulate.methods", method, str(e)))

        try:
            self.build_statistics()
        except ConfigurationError as e:
            rtn.append(("statistics", self.statistic_specs, str(e)))

        return rtn

    def print_settings(self) -> None:
        self.log_info(f"Settings Loaded [COMMAND: {self.command}] [CONFIG HASH: {self.config_hash()}]")
        if self.command == self.COMMAND_BOOTSTRAP:
            self.log_info(
                f"Bootstrap of {self.input} with [METHODS: {', '.join(self.methods)}]"
                f" [B: {self.B}] [LEVEL: {self.level}] [CRITERION: {self.get_criterion().value}] [SEED: {self.get_seed()}]"
            )
            if self.B < self.RECOMMENDED_B:
                self.log_warning(
                    f"B = {self.B} is below {self.RECOMMENDED_B}, percentile tails will be noisy"
                )
        elif self.command == self.COMMAND_SIMULATE:
            self.log_info(
                f"Simulation of {self.scenario_file or self.preset}"
                f" [R: {self.R or 'default'}] [B: {self.sim_B or 'default'}] [SEED: {self.seed}]"
            )
        else:
            self.log_info(f"Fit of {self.input} [CRITERION: {self.get_criterion().value}]")

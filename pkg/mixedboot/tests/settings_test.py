#!/usr/bin/env python3
import argparse
import os
import sys

import pytest

try:
    import mixedboot
except ImportError:
    sys.path.append(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
    )

from mixedboot.lib.engines import BootstrapMethod
from mixedboot.lib.errors import ConfigurationError
from mixedboot.lib.lmm_core import Criterion
from mixedboot.lib.parallel import THREADS_ENV, map_ordered, resolve_threads
from mixedboot.lib.settings import DEFAULT_SEED, RunConfig


def params(config: RunConfig):
    return [triplet[0] for triplet in config.get_incorrect_configurations()]


def test_minimal_settings():
    config = RunConfig(filedata=RunConfig.MINIMAL_SETTINGS, command="simulate")
    assert params(config) == []
    assert config.get_seed() == 7
    assert config.get_methods() == [BootstrapMethod.PREB1]
    assert config.get_criterion() == Criterion.REML


def test_defaults_without_file():
    config = RunConfig(command="fit")
    assert config.get_seed() == DEFAULT_SEED
    assert config.B == RunConfig.RECOMMENDED_B
    assert params(config) == ["bootstrap.input"]


def test_shipped_template_leaves_the_seed_unset():
    template = os.path.join(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__)))),
        "settings.ini.default",
    )
    if not os.path.isfile(template):
        pytest.skip("template is not part of installed packages")
    config = RunConfig(filepath=template, command="simulate")
    assert config.seed is None
    assert config.get_seed(default=11) == 11


def test_json_configuration_is_rejected():
    with pytest.raises(ConfigurationError):
        RunConfig(filedata='{"general": {"seed": 7}}')


def test_filepath_and_filedata_are_exclusive():
    with pytest.raises(ConfigurationError):
        RunConfig(filepath="settings.ini", filedata=RunConfig.MINIMAL_SETTINGS)


def test_incorrect_values_are_reported():
    config = RunConfig(
        filedata="""
[general]
criterion = bayes
format = xml

[bootstrap]
input = data.csv
B = 50
level = 1.2
methods = preb1, wild
"""
    )
    assert sorted(params(config)) == sorted(
        [
            "general.criterion",
            "general.format",
            "bootstrap.B",
            "bootstrap.level",
            "bootstrap.methods",
        ]
    )


def test_blank_integers_fall_back():
    config = RunConfig(filedata="[general]\nseed =\nthreads =\n", command="simulate")
    assert config.seed is None
    assert config.threads is None
    with pytest.raises(ConfigurationError):
        RunConfig(filedata="[general]\nseed = many\n")


def test_statistics_section():
    config = RunConfig(
        filedata="""
[bootstrap]
input = data.csv

[statistics]
Slope = linear:0,1
treated = effect:1
sum = 1,1
"""
    )
    assert config.statistic_specs == [
        ("Slope", "linear", ["0", "1"]),
        ("treated", "effect", ["1"]),
        ("sum", "linear", ["1", "1"]),
    ]
    assert [plugin.name for plugin in config.build_statistics()] == ["Slope", "treated", "sum"]

    broken = RunConfig(filedata="[bootstrap]\ninput = d.csv\n[statistics]\nodd = ratio:1,2\n")
    assert "statistics" in params(broken)


def test_flags_override_file():
    config = RunConfig(filedata=RunConfig.MINIMAL_SETTINGS)
    args = argparse.Namespace(
        seed=99,
        criterion="ml",
        format="JSON",
        B=200,
        input="data.csv",
        method=["mreb1,reb2", "cgr"],
        stat=["contrast=0,1"],
        effect=None,
        threads=3,
    )
    config.apply_overrides(args)
    assert config.get_seed() == 99
    assert config.get_criterion() == Criterion.ML
    assert config.format == "json"
    assert config.B == 200
    assert config.methods == ["mreb1", "reb2", "cgr"]
    assert config.statistic_specs == [("contrast", "linear", ["0", "1"])]
    assert config.threads_flag == 3
    assert params(config) == []

    with pytest.raises(ConfigurationError):
        config.apply_overrides(argparse.Namespace(stat=["no-equals"]))


def test_simulate_b_flag_targets_the_study():
    config = RunConfig(command="simulate")
    config.apply_overrides(argparse.Namespace(B=10, R=0))
    assert config.sim_B == 10
    assert config.B == RunConfig.RECOMMENDED_B
    assert sorted(params(config)) == ["simulate.B", "simulate.R"]


def test_config_hash_ignores_non_semantic_keys():
    base = "[bootstrap]\ninput = data.csv\nB = 200\n"
    plain = RunConfig(filedata=base)
    threaded = RunConfig(filedata="[general]\nthreads = 8\noutput = out.csv\n" + base)
    threaded.threads_flag = 4
    assert plain.config_hash() == threaded.config_hash()
    assert len(plain.config_hash()) == 16
    other = RunConfig(filedata=base.replace("200", "300"))
    assert plain.config_hash() != other.config_hash()


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == 1
    assert resolve_threads(configured=3) == 3
    monkeypatch.setenv(THREADS_ENV, "5")
    assert resolve_threads(configured=3) == 5
    assert resolve_threads(2, 3) == 2
    monkeypatch.setenv(THREADS_ENV, "five")
    with pytest.raises(ConfigurationError):
        resolve_threads()
    with pytest.raises(ConfigurationError):
        resolve_threads(0)


def test_map_ordered_keeps_item_order():
    items = list(range(20))
    assert map_ordered(lambda k: k * k, items, workers=4) == [k * k for k in items]
    assert map_ordered(str, items) == [str(k) for k in items]


if __name__ == "__main__":
    test_minimal_settings()
    test_config_hash_ignores_non_semantic_keys()

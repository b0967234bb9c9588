#!/usr/bin/env python3
"""
Desk-scale coverage studies (R = B = 200, seed 11). These take minutes on a
multi-core machine and only run with MIXEDBOOT_ACCEPTANCE=1.
"""
import os
import sys

import pytest

try:
    import mixedboot
except ImportError:
    sys.path.append(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
    )

from mixedboot.lib.simlab import StudyResult, preset, run_study

pytestmark = pytest.mark.skipif(
    os.environ.get("MIXEDBOOT_ACCEPTANCE") != "1",
    reason="set MIXEDBOOT_ACCEPTANCE=1 to run desk-scale coverage studies",
)

WORKERS = os.cpu_count() or 1
TOLERANCE = 0.05


def study(name: str, methods) -> StudyResult:
    scenario = preset(name).replace(R=200, B=200, seed=11, methods=tuple(methods))
    return run_study(scenario, workers=WORKERS)


def test_normal_balanced_preb1_coverage():
    report = study("set1-balanced", ["preb1"]).report_for("preb1")
    expected = {"beta0": 0.948, "beta1": 0.952, "sigma2_u": 0.944, "lambda": 0.942}
    for target, value in expected.items():
        assert abs(report.coverage[target] - value) <= TOLERANCE, target
    assert report.coverage["sigma2_e"] >= 0.95


def test_normal_unbalanced_residual_reflation():
    result = study("set1-unbalanced", ["preb1", "mreb1", "reb1", "reb0"])
    assert result.report_for("reb1").coverage["sigma2_e"] <= 0.40
    assert result.report_for("preb1").coverage["sigma2_e"] >= 0.95
    assert abs(result.report_for("mreb1").coverage["sigma2_u"] - 0.968) <= TOLERANCE
    assert result.report_for("reb0").coverage["lambda"] <= 0.10
    for report in result.reports:
        assert report.failures <= 0.02 * 200


def test_skewed_unbalanced_reflation_beats_parametric():
    result = study("set2-unbalanced", ["preb1", "mreb1", "parametric"])
    parametric = result.report_for("parametric").coverage["sigma2_u"]
    for method in ("preb1", "mreb1"):
        assert result.report_for(method).coverage["sigma2_u"] >= parametric + 0.10


if __name__ == "__main__":
    test_normal_balanced_preb1_coverage()

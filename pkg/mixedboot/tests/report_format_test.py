#!/usr/bin/env python3
import json
import os
import sys

import numpy as np
import pytest

try:
    import mixedboot
except ImportError:
    sys.path.append(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
    )

from mixedboot import __version__
from mixedboot.lib.errors import ConfigurationError
from mixedboot.lib.lmm_core import ThetaVector, fit
from mixedboot.lib.report_format import (
    build_metadata,
    fit_rows,
    format_brackets,
    format_fit_summary,
    render_table,
)
from mixedboot.lib.statistics import linear_combination, signal_to_noise, treatment_effect
from mixedboot.tests.common import make_dataset


def test_format_brackets():
    assert format_brackets("preb1", width=6) == "[preb1 ] "
    assert format_brackets("x", padding="-", align=">", width=3) == "[--x] "


def test_csv_table_with_metadata_header():
    metadata = build_metadata(3, "abc", command="fit")
    text = render_table([dict(a=1, b=0.5), dict(a=2, b=float("nan"))], ["a", "b"], metadata)
    assert text.splitlines() == [
        "# tool=mixedboot",
        f"# version={__version__}",
        "# seed=3",
        "# config_hash=abc",
        "# command=fit",
        "a,b",
        "1,0.5",
        "2,",
    ]


def test_json_table_maps_nan_to_null():
    text = render_table(
        [dict(a=np.int64(1), b=float("inf"))], ["a", "b"], build_metadata(1, "h"), fmt="json"
    )
    payload = json.loads(text)
    assert payload["rows"] == [{"a": 1, "b": None}]
    assert payload["metadata"]["seed"] == 1


def test_fit_rows_and_summary():
    point = fit(make_dataset((4, 6, 5, 3, 7), seed=9, sigma2_u=0.4))
    rows = fit_rows(point)
    assert [row["parameter"] for row in rows][-1] == "lambda"
    assert rows[-1]["estimate"] == pytest.approx(point.theta_hat.signal_to_noise)
    summary = format_fit_summary(point)
    assert summary.startswith("-------- MODEL FIT --------")
    assert "Criterion\t| REML" in summary


def test_statistic_plugins():
    data = make_dataset((3, 2), seed=1)
    theta = ThetaVector(beta=np.array([1.0, 3.0]), sigma2_u=0.2, sigma2_e=0.4)
    assert signal_to_noise().evaluate(theta, None, data) == pytest.approx(0.5)
    assert linear_combination("c", [2.0, -1.0]).evaluate(theta, None, data) == pytest.approx(-1.0)
    effect = treatment_effect("t", [1]).evaluate(theta, None, data)
    treated = data.X[:, 1] != 0.0
    assert effect == pytest.approx(3.0 * data.X[treated, 1].mean())
    with pytest.raises(ConfigurationError):
        linear_combination("c", [1.0]).evaluate(theta, None, data)
    with pytest.raises(ConfigurationError):
        treatment_effect("t", [2]).evaluate(theta, None, data)


if __name__ == "__main__":
    test_format_brackets()
    test_csv_table_with_metadata_header()

#!/usr/bin/env python3
import io
import json
import math
import sys
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from mixedboot import __version__
from mixedboot.lib.engines import BootstrapRun
from mixedboot.lib.inference import PercentileCI, SampleSummary
from mixedboot.lib.lmm_core import FitResult, parameter_names

TOOL_NAME: str = "mixedboot"

FIT_COLUMNS: List[str] = ["parameter", "estimate"]

BOOTSTRAP_COLUMNS: List[str] = [
    "method",
    "target",
    "estimate",
    "lower",
    "upper",
    "level",
    "B",
    "B_effective",
    "failures",
    "boot_mean",
    "boot_sd",
    "bias",
    "pvalue",
]


def format_brackets(text: str, padding: str = " ", align: str = "<", width: int = 10) -> str:
    return f"[{text:{padding}{align}{width}}] "


def build_metadata(seed: int, config_hash: str, **extra) -> Dict[str, object]:
    metadata: Dict[str, object] = {
        "tool": TOOL_NAME,
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash,
    }
    metadata.update(extra)
    return metadata


def _plain(value):
    """json-safe scalar, NaN and inf become null"""
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def render_table(
    rows: Sequence[Mapping[str, object]],
    columns: Sequence[str],
    metadata: Mapping[str, object],
    fmt: str = "csv",
) -> str:
    """
    csv: one `# key=value` line per metadata entry, then the table;
    json: {"metadata": ..., "rows": [...]} with sorted keys
    """
    if fmt == "json":
        payload = {
            "metadata": {k: _plain(v) for k, v in metadata.items()},
            "rows": [{c: _plain(row.get(c)) for c in columns} for row in rows],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    buffer = io.StringIO()
    for key, value in metadata.items():
        buffer.write(f"# {key}={value}\n")
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_output(text: str, path: Optional[str]) -> None:
    if not path or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def fit_rows(fit: FitResult) -> List[Dict[str, object]]:
    names = parameter_names(fit.theta_hat.beta.shape[0]) + ["lambda"]
    values = list(fit.theta_hat.as_array()) + [fit.theta_hat.signal_to_noise]
    return [dict(parameter=n, estimate=float(v)) for n, v in zip(names, values)]


def fit_metadata(fit: FitResult) -> Dict[str, object]:
    return {
        "criterion": fit.criterion.value,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "boundary": fit.boundary,
        "clusters": int(fit.cluster_sizes.shape[0]),
        "units": int(np.sum(fit.cluster_sizes)),
    }


def bootstrap_rows(
    run: BootstrapRun,
    intervals: Mapping[str, PercentileCI],
    summaries: Mapping[str, SampleSummary],
    pvalues: Mapping[str, float],
) -> List[Dict[str, object]]:
    rows = []
    for target in run.targets:
        ci, summary = intervals[target], summaries[target]
        rows.append(
            dict(
                method=run.method.value,
                target=target,
                estimate=run.estimate(target),
                lower=ci.lower,
                upper=ci.upper,
                level=ci.level,
                B=run.B,
                B_effective=ci.B_effective,
                failures=run.failures,
                boot_mean=summary.mean,
                boot_sd=summary.sd,
                bias=summary.bias,
                pvalue=pvalues.get(target, float("nan")),
            )
        )
    return rows


def replicate_rows(run: BootstrapRun) -> List[Dict[str, object]]:
    rows = []
    for b in range(run.B):
        row: Dict[str, object] = dict(method=run.method.value, replicate=b, status=run.status[b])
        row.update(zip(run.parameter_names, run.theta_star[b].tolist()))
        row.update(zip(run.statistic_names, run.stats_star[b].tolist()))
        rows.append(row)
    return rows


def replicate_columns(run: BootstrapRun) -> List[str]:
    return ["method", "replicate", "status"] + run.targets


def format_fit_summary(fit: FitResult) -> str:
    theta = fit.theta_hat
    beta = ", ".join(f"{b:.6g}" for b in theta.beta)
    return (
        "-------- MODEL FIT --------\n"
        f"Criterion\t| {fit.criterion.value}\n"
        f"Clusters\t| D = {fit.cluster_sizes.shape[0]}, N = {int(np.sum(fit.cluster_sizes))}\n"
        f"Beta\t\t| {beta}\n"
        f"sigma2_u\t| {theta.sigma2_u:.6g}{' (boundary)' if fit.boundary else ''}\n"
        f"sigma2_e\t| {theta.sigma2_e:.6g}\n"
        f"lambda\t\t| {theta.signal_to_noise:.6g}\n"
        f"Log-lik\t\t| {fit.loglik:.6f}\n"
        f"Converged\t| {fit.converged} after {fit.iterations} iterations\n"
        "-------- MODEL FIT --------"
    )


def format_interval_line(method_label: str, ci: PercentileCI) -> str:
    return (
        format_brackets(method_label, width=14)
        + format_brackets(ci.target, width=10)
        + f"{ci.level:.0%} CI {ci.lower:.6g} .. {ci.upper:.6g} (B_eff {ci.B_effective})"
    )

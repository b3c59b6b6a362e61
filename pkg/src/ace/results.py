"""Result persistence and report rendering.

CSV is the canonical results format: fixed headers, UTF-8, LF line
endings, shortest round-trip float formatting, so identical configs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .simulation import SCENARIO_METHODS, ReplicationResult

REPLICATION_FIELDS = [
    "seed", "scenario", "method", "estimand",
    "tau_hat", "tau_true", "bias", "cumulative_ite",
]
AGGREGATE_FIELDS = [
    "scenario", "method", "estimand", "n_reps", "n_excluded",
    "bias", "rmse", "bias_x1000", "rmse_x1000",
]
REPLICATIONS_FILE = "replications.csv"
AGGREGATE_FILE = "aggregate.csv"
MANIFEST_FILE = "manifest.json"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def replication_row(r: ReplicationResult) -> dict:
    return {
        "seed": r.seed,
        "scenario": r.scenario,
        "method": r.method,
        "estimand": r.estimand,
        "tau_hat": None if r.failed else r.tau_hat,
        "tau_true": r.tau_true,
        "bias": None if r.failed else r.bias,
        "cumulative_ite": r.cumulative_ite,
    }


def write_replications_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPLICATION_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in REPLICATION_FIELDS})


def read_replications_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = dict(raw)
            for k in ("tau_hat", "tau_true", "bias", "cumulative_ite"):
                row[k] = float(row[k]) if row.get(k) else None
            row["seed"] = int(row["seed"])
            rows.append(row)
    return rows


def write_aggregate_csv(path, agg_rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in agg_rows:
            writer.writerow({k: _fmt(row.get(k)) for k in AGGREGATE_FIELDS})


def config_hash(config_dict: dict) -> str:
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_manifest(config_dict: dict, seeds: list[int], n_excluded: int,
                   version: str) -> dict:
    return {
        "config": config_dict,
        "config_hash": config_hash(config_dict),
        "seeds": list(seeds),
        "n_replications": len(seeds),
        "n_excluded": n_excluded,
        "version": version,
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- report rendering -----------------------------------------------------

def _group_rows(rows: list[dict]) -> dict:
    """(scenario, estimand, method) -> list of (tau_hat, tau_true, cum_ite)."""
    groups: dict = {}
    for row in rows:
        key = (row["scenario"], row["estimand"], row["method"])
        groups.setdefault(key, []).append(row)
    return groups


def _cell_stats(rows: list[dict]) -> dict:
    ok = [r for r in rows if r["tau_hat"] is not None]
    out = {"n": len(rows), "n_excluded": len(rows) - len(ok)}
    if ok:
        err = np.array([r["tau_hat"] - r["tau_true"] for r in ok])
        out["bias_x1000"] = float(np.mean(err)) * 1e3
        out["rmse_x1000"] = float(np.sqrt(np.mean(err**2))) * 1e3
    return out


def render_effect_table(scenario: str, rows: list[dict]) -> str:
    """Fixed-width bias/RMSE table (scaled by 1000), one column pair per estimand."""
    groups = _group_rows(rows)
    estimands = sorted({k[1] for k in groups if k[0] == scenario})
    methods = [m for m in SCENARIO_METHODS[scenario]
               if any(k[0] == scenario and k[2] == m for k in groups)]
    lines = [f"Scenario {scenario} (bias / RMSE, x1000, {len(estimands)} estimand(s))"]
    header = f"{'method':<10}" + "".join(f"{e + ' bias':>14}{e + ' rmse':>14}" for e in estimands)
    lines.append(header)
    for m in methods:
        cells = [f"{m:<10}"]
        for e in estimands:
            stats = _cell_stats(groups.get((scenario, e, m), [])) if (scenario, e, m) in groups else None
            if stats and "bias_x1000" in stats:
                cells.append(f"{stats['bias_x1000']:>14.2f}{stats['rmse_x1000']:>14.2f}")
            else:
                cells.append(f"{'-':>14}{'-':>14}")
        lines.append("".join(cells))
    return "\n".join(lines)


def s3_boxplot_rows(rows: list[dict]) -> list[dict]:
    """Cumulative-effect quantiles per method, for external box plotting."""
    groups = _group_rows(rows)
    out = []
    for m in SCENARIO_METHODS["s3"]:
        vals = [r["cumulative_ite"] for key, rs in groups.items()
                if key[0] == "s3" and key[2] == m for r in rs
                if r["cumulative_ite"] is not None]
        if not vals:
            continue
        q = np.percentile(vals, [0, 25, 50, 75, 100])
        out.append({
            "method": m, "n": len(vals),
            "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]),
        })
    return out


BOXPLOT_FIELDS = ["method", "n", "min", "q1", "median", "q3", "max"]


def write_boxplot_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BOXPLOT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in BOXPLOT_FIELDS})


def missing_cells(rows: list[dict]) -> list[str]:
    """Expected (scenario, method) combinations absent from the data."""
    present = {(r["scenario"], r["method"]) for r in rows}
    scenarios = {r["scenario"] for r in rows}
    out = []
    for s in sorted(scenarios):
        for m in SCENARIO_METHODS[s]:
            if (s, m) not in present:
                out.append(f"{s}:{m}")
    return out


def render_report(rows: list[dict]) -> dict:
    """Tables, scenario-3 boxplot data, and the list of absent cells."""
    if not rows:
        raise ValueError(
            f"no replication rows found; expected a {REPLICATIONS_FILE} with fields "
            f"{REPLICATION_FIELDS}"
        )
    scenarios = sorted({r["scenario"] for r in rows})
    tables = {s: render_effect_table(s, rows) for s in scenarios}
    return {
        "tables": tables,
        "boxplot": s3_boxplot_rows(rows) if "s3" in scenarios else [],
        "missing": missing_cells(rows),
    }

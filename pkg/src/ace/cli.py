"""Command-line client for the service.

By default requests are served by the FastAPI app in-process (no socket,
no running server needed); pass --server to talk to a remote instance.
Subcommands: simulate, report, advise, truth, serve.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import yaml

from . import __version__
from .results import (
    AGGREGATE_FILE,
    MANIFEST_FILE,
    REPLICATIONS_FILE,
    config_hash,
    read_replications_csv,
    write_aggregate_csv,
    write_boxplot_csv,
    write_manifest,
    write_replications_csv,
)


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # In-process bridge to the ASGI app: no socket, no running server needed.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app, base_url="http://ace.local", raise_server_exceptions=False)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"request to {path} failed: {exc}")
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise click.ClickException(f"{path} returned {resp.status_code}: {detail}")
    return resp.json()


server_option = click.option(
    "--server", envvar="ACE_SERVER", default=None,
    help="Base URL of a running service; default runs the app in-process.",
)


@click.group()
@click.version_option(version=__version__, prog_name="ace")
def main():
    """Sequential-experiment design for causal effect estimation."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML file with any of the simulate fields.")
@click.option("--scenario", type=click.Choice(["s1", "s2a", "s2b", "s3"]), default=None)
@click.option("--method", "methods", multiple=True,
              type=click.Choice(["random", "alc", "alc_e", "ace", "ace_e", "ace_ucb",
                                 "greedy"]),
              help="Selection method; repeat the flag to run several.")
@click.option("--weight", type=click.Choice(["ate", "atte", "ato", "truncated", "matching"]),
              default=None)
@click.option("--alpha", type=float, default=None, help="Truncation level for --weight truncated.")
@click.option("--reps", type=int, default=None, help="Number of replications.")
@click.option("--seed", type=int, default=None, envvar="ACE_SEED",
              help="Base seed; replication i uses seed + i.")
@click.option("--n", type=int, default=None, help="Experiment budget.")
@click.option("--n-pool", type=int, default=None)
@click.option("--n-test", type=int, default=None)
@click.option("--n-init", type=int, default=None)
@click.option("--noise-sd", type=float, default=None)
@click.option("--ucb-c", type=float, default=None)
@click.option("--refit-interval", type=int, default=None)
@click.option("--fit-restarts", type=int, default=None)
@click.option("--propensity", "propensity_mode", type=click.Choice(["known", "estimated"]),
              default=None)
@click.option("--jobs", type=int, default=None, help="Parallel replications (default 1).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="results",
              show_default=True)
@server_option
def simulate(config_path, scenario, methods, weight, alpha, reps, seed, n, n_pool, n_test,
             n_init, noise_sd, ucb_c, refit_interval, fit_restarts, propensity_mode,
             jobs, out_dir, server):
    """Run replications and write replication/aggregate CSVs plus a manifest."""
    base: dict = {}
    if config_path:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise click.UsageError(f"config file {config_path} must hold a mapping")
        base.update(loaded)
    overrides = {
        "scenario": scenario, "weight": weight, "alpha": alpha, "reps": reps,
        "seed": seed, "n": n, "n_pool": n_pool, "n_test": n_test, "n_init": n_init,
        "noise_sd": noise_sd, "ucb_c": ucb_c, "refit_interval": refit_interval,
        "fit_restarts": fit_restarts, "propensity_mode": propensity_mode,
        "n_jobs": jobs,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    method_list = list(methods) or base.pop("methods", None) or [base.pop("method", None)]
    if method_list == [None]:
        raise click.UsageError("pass --method (or 'method'/'methods' in the config file)")
    base.pop("methods", None)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows, agg_rows, manifests = [], [], []
    with _client(server) as client:
        for method in method_list:
            payload = dict(base, method=method)
            data = _post(client, "/simulate", payload)
            all_rows.extend(data["rows"])
            agg_rows.append(data["aggregate"])
            manifests.append(data["manifest"])
    write_replications_csv(out / REPLICATIONS_FILE, all_rows)
    write_aggregate_csv(out / AGGREGATE_FILE, agg_rows)
    run_spec = {"runs": [m["config"] for m in manifests],
                "reps": manifests[0]["n_replications"]}
    write_manifest(out / MANIFEST_FILE, {
        "config_hash": config_hash(run_spec),
        "runs": manifests,
        "version": __version__,
    })
    for agg in agg_rows:
        click.echo(
            f"{agg['scenario']}/{agg['method']}/{agg['estimand']}: "
            f"bias x1000 = {agg['bias_x1000']:.3f}, rmse x1000 = {agg['rmse_x1000']:.3f} "
            f"({agg['n_reps']} reps, {agg['n_excluded']} excluded)"
        )
    click.echo(f"wrote {out / REPLICATIONS_FILE}, {out / AGGREGATE_FILE}, {out / MANIFEST_FILE}")


@main.command()
@click.argument("results_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Where to write report.txt and s3_boxplot.csv (default: RESULTS_DIR).")
@server_option
def report(results_dir, out_dir, server):
    """Render bias/RMSE tables (x1000) and scenario-3 boxplot data."""
    path = Path(results_dir) / REPLICATIONS_FILE
    if not path.exists():
        raise click.ClickException(
            f"missing {path}; expected results written by 'ace simulate'"
        )
    rows = read_replications_csv(path)
    with _client(server) as client:
        data = _post(client, "/report", {"rows": rows})
    out = Path(out_dir) if out_dir else Path(results_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = "\n\n".join(data["tables"][s] for s in sorted(data["tables"]))
    if data["missing"]:
        text += "\n\nabsent cells: " + ", ".join(data["missing"])
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    if data["boxplot"]:
        write_boxplot_csv(out / "s3_boxplot.csv", data["boxplot"])
    click.echo(text)


@main.command()
@click.option("--weight", type=click.Choice(["ate", "atte", "ato", "truncated", "matching"]),
              default="ate", show_default=True)
@click.option("--alpha", type=float, default=None)
@click.option("--samples", type=int, default=1_000_000, show_default=True)
@click.option("--seed", type=int, default=0, envvar="ACE_SEED", show_default=True)
@click.option("--n-test", type=int, default=None,
              help="Also report the exact plug-in value on an n-test point sample.")
@server_option
def truth(weight, alpha, samples, seed, n_test, server):
    """Ground-truth estimand by Monte Carlo (and optionally test-set plug-in)."""
    payload = {"weight": weight, "alpha": alpha, "n_samples": samples,
               "seed": seed, "n_test": n_test}
    with _client(server) as client:
        data = _post(client, "/truth", payload)
    click.echo(json.dumps(data))


@main.command()
@click.argument("session_file", type=click.Path(dir_okay=False))
@click.option("--init", "do_init", is_flag=True, help="Create a fresh session file and exit.")
@click.option("--scenario", type=click.Choice(["s1", "s2a", "s2b", "s3"]), default=None)
@click.option("--weight", type=click.Choice(["ate", "atte", "ato", "truncated", "matching"]),
              default="ate", show_default=True)
@click.option("--alpha", type=float, default=None)
@click.option("--test", "test_csv", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Test-set CSV (header x1..xd).")
@click.option("--pool", "pool_csv", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Candidate-pool CSV (header x1..xd); required for s2a/s2b/s3.")
@click.option("--propensity", "propensity_mode", type=click.Choice(["known", "estimated"]),
              default="known", show_default=True)
@click.option("--propensity-model", default=None,
              help="Named form (e.g. franke_logit) or path to a logistic-model JSON file.")
@click.option("--ucb-c", type=float, default=0.01, show_default=True)
@click.option("--fit-restarts", type=int, default=5, show_default=True)
@click.option("--fit-seed", type=int, default=0, envvar="ACE_SEED", show_default=True)
@server_option
def advise(session_file, do_init, scenario, weight, alpha, test_csv, pool_csv,
           propensity_mode, propensity_model, ucb_c, fit_restarts, fit_seed, server):
    """Turn-based advisory session: one JSON request per stdin line.

    Requests: {"op": "recommend"} (plus "x" for s1) and
    {"op": "observe", "x": [...], "a": 0|1, "y": ...}.  Responses are one
    JSON object per line; the session file is rewritten after each turn.
    """
    path = Path(session_file)
    if do_init:
        if scenario is None or test_csv is None:
            raise click.UsageError("--init needs --scenario and --test")
        from .surrogate import TestSet

        known = None
        if propensity_model:
            if propensity_model.endswith(".json") or Path(propensity_model).exists():
                model = json.loads(Path(propensity_model).read_text())
                known = dict(model, kind="logistic")
            else:
                known = {"kind": "named", "name": propensity_model}
        payload = {
            "scenario": scenario,
            "weight": weight,
            "alpha": alpha,
            "test_points": TestSet.load_csv(test_csv).points.tolist(),
            "pool_points": (TestSet.load_csv(pool_csv).points.tolist()
                            if pool_csv else None),
            "propensity_mode": propensity_mode,
            "known_propensity": known,
            "ucb_c": ucb_c,
            "fit_restarts": fit_restarts,
            "fit_seed": fit_seed,
        }
        with _client(server) as client:
            data = _post(client, "/advise/init", payload)
        path.write_text(json.dumps(data["state"]) + "\n", encoding="utf-8")
        click.echo(f"initialized {scenario} session at {path}")
        return

    if not path.exists():
        raise click.ClickException(f"session file {path} not found; create one with --init")
    state = json.loads(path.read_text())
    with _client(server) as client:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                click.echo(json.dumps({"error": f"invalid JSON: {exc}"}), nl=True)
                sys.stdout.flush()
                continue
            data = _post(client, "/advise/step", {"state": state, "request": request})
            response = data["response"]
            if "error" not in response:
                state = data["state"]
                path.write_text(json.dumps(state) + "\n", encoding="utf-8")
            click.echo(json.dumps(response), nl=True)
            sys.stdout.flush()


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

"""Command-line surface: factorization runs, transcript replay, inequality
suites, curvature tables, and operator fixtures.

Exit codes: 0 when the certificate or suite passes, 1 on a failed
certificate, suite violation, or replay mismatch, 2 on usage and config
errors.  Artifacts are written atomically and are byte-identical for a
fixed config and seed; wall-clock readings live in a separate meta field.
"""

from __future__ import annotations

import json
import sys
import time

import click
import numpy as np

from .game import (
    BRANCH_FUTURE_TAILS,
    BRANCH_RESTRICTED_SUM,
    GameConfig,
    Transcript,
    factorize,
    run_game,
)
from .operators import OperatorZ, random_large_diagonal
from .reports import REPORT_SCHEMA_VERSION, atomic_write_text, emit_report, jsonable
from .suites import SUITES, list_suites, r_estimates_suite
from .sumspace import ZTrunc

CONFIG_SCHEMA_VERSION = 1


class ConfigError(click.ClickException):
    exit_code = 2


def _load_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")


def _operator_from_config(data: dict, trunc: ZTrunc) -> OperatorZ:
    op = data.get("operator")
    if op is None:
        raise ConfigError("config is missing the 'operator' section")
    if "file" in op:
        with open(op["file"]) as handle:
            return OperatorZ.from_json(json.load(handle))
    try:
        return random_large_diagonal(
            trunc,
            delta=float(op["delta"]),
            off_diag_scale=float(op.get("off_diag_scale", 0.0)),
            seed=int(op["seed"]),
            mixed_signs=bool(op.get("mixed_signs", True)),
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad operator section: {e}")


def _game_config(data: dict) -> GameConfig:
    try:
        return GameConfig.from_json(data["game"])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad game section: {e}")


@click.group(invoke_without_command=True)
@click.option("--schema-version", "show_schema", is_flag=True,
              help="Print the artifact schema version and exit.")
@click.option("--list-suites", "show_suites", is_flag=True,
              help="List the available suites and exit.")
@click.pass_context
def main(ctx, show_schema, show_suites):
    """Factorization toolkit for sup-normed sums of Haar-system spaces."""
    if show_schema:
        click.echo(str(REPORT_SCHEMA_VERSION))
        ctx.exit(0)
    if show_suites:
        for name in list_suites():
            click.echo(name)
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(2)


@main.command("factorize")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--transcript", "transcript_path", type=click.Path(),
              help="Also write the replayable game transcript.")
def factorize_cmd(config_path, out_path, transcript_path):
    """Run the full pipeline and write the certificate."""
    data = _load_json(config_path)
    cfg = _game_config(data)
    T = _operator_from_config(data, cfg.big)
    t0 = time.time()
    result = factorize(
        T,
        cfg,
        omegas=data.get("omegas"),
        gamma_budget=data.get("gamma_budget"),
        rho=float(data.get("rho", 0.1)),
    )
    cert = result.certificate
    payload = cert.to_json()
    payload["meta"] = {"wall_clock_s": time.time() - t0}
    atomic_write_text(out_path, json.dumps(payload, indent=2) + "\n")
    if transcript_path and result.transcript is not None:
        bundle = {
            "transcript": result.transcript.to_json(),
            "operator": data.get("operator"),
        }
        atomic_write_text(transcript_path, json.dumps(bundle, indent=2) + "\n")
    click.echo(
        f"certificate {cert.status} (stage {cert.stage}); "
        f"residual {cert.residual_max}"
    )
    sys.exit(0 if cert.passed else 1)


@main.command("game")
@click.option("--replay", "replay_path", required=True, type=click.Path())
def game_cmd(replay_path):
    """Replay a transcript bundle and verify it reproduces bit-exactly."""
    bundle = _load_json(replay_path)
    try:
        transcript = Transcript.from_json(bundle["transcript"])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad transcript bundle: {e}")
    cfg = transcript.config
    T = _operator_from_config(bundle, cfg.big)
    fresh, _ = run_game(T, cfg)
    if fresh.canonical_bytes() == transcript.canonical_bytes():
        click.echo(f"replay ok: digest {transcript.digest()}")
        sys.exit(0)
    click.echo("replay mismatch", err=True)
    sys.exit(1)


@main.command("estimates")
@click.option("--suite", "suite_name", default="r-estimates",
              type=click.Choice(sorted(SUITES)))
@click.option("--grid", "grid", default="1,1.5,3,5",
              help="Comma-separated exponents for both grid axes.")
@click.option("--sequences", default=200, type=int)
@click.option("--depth", default=4, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", type=click.Path())
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
def estimates_cmd(suite_name, grid, sequences, depth, seed, out_path, fmt):
    """Run an inequality suite and emit its report."""
    try:
        values = tuple(float(x) for x in grid.split(",") if x)
    except ValueError as e:
        raise ConfigError(f"bad grid: {e}")
    if suite_name == "r-estimates":
        report = r_estimates_suite(
            ps=values, qs=values, sequences=sequences, depth=depth, seed=seed
        )
    else:
        report = SUITES[suite_name](seed=seed)
    if out_path:
        emit_report(report, out_path, fmt)
    click.echo(f"suite {report.suite}: {'pass' if report.passed else 'FAIL'}")
    sys.exit(0 if report.passed else 1)


@main.command("curvature")
@click.option("--nmax", default=64, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", type=click.Path())
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]))
def curvature_cmd(nmax, seed, out_path, fmt):
    """Tabulate averaging envelopes and their decay exponents."""
    report = SUITES["curvature"](n_max=nmax, seed=seed)
    if out_path:
        emit_report(report, out_path, fmt)
    click.echo(f"suite {report.suite}: {'pass' if report.passed else 'FAIL'}")
    sys.exit(0 if report.passed else 1)


@main.command("gen-op")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Pipeline config or bare truncation JSON.")
@click.option("--delta", required=True, type=float)
@click.option("--offdiag", default=0.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_op_cmd(config_path, delta, offdiag, seed, out_path):
    """Generate a reproducible operator fixture with a large diagonal."""
    data = _load_json(config_path)
    try:
        if "game" in data:
            trunc = ZTrunc.from_json(data["game"]["big"])
        else:
            trunc = ZTrunc.from_json(data)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad truncation config: {e}")
    T = random_large_diagonal(trunc, delta, offdiag, seed)
    atomic_write_text(out_path, json.dumps(jsonable(T.to_json())) + "\n")
    click.echo(f"wrote {out_path}")
    sys.exit(0)


if __name__ == "__main__":
    main()

"""Command line entry point: ``glab run``, ``glab replay``, ``glab report``."""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, load_config
from .record import RunRecord, load_record, save_record, table_csv
from .runners import replica_seeds, run_named

SEED_ENV = "GLAB_SEED"


def resolve_seed(cfg: dict) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    return int(cfg.get("seed", 0))


def execute(cfg: dict, seed: int) -> RunRecord:
    result, wall = run_named(cfg, seed)
    reps = int(cfg.get("replicas", 0) or 0)
    return RunRecord(
        config=cfg,
        master_seed=seed,
        replica_seeds=replica_seeds(seed, reps) if reps else [],
        tables=result.tables,
        summary=result.summary,
        checks=result.checks,
        meta={"wall_seconds": wall},
    )


def _print_checks(record: RunRecord) -> None:
    for c in record.checks:
        click.echo(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")


@click.group()
def main():
    """Long-range exclusion process experiments."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Record directory (default runs/<experiment>-<hash>).")
@click.option("--set", "overrides", multiple=True, help="Override a key, e.g. --set replicas=50.")
def run(config, out, overrides):
    """Run the experiment described by CONFIG and persist a record."""
    try:
        cfg = load_config(config, overrides)
        seed = resolve_seed(cfg)
        record = execute(cfg, seed)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    directory = Path(out) if out else Path("runs") / f"{cfg['experiment']}-{record.content_hash[:12]}"
    save_record(record, directory)
    _print_checks(record)
    click.echo(f"record: {directory}")
    sys.exit(0 if record.passed else 1)


@main.command()
@click.argument("record", type=click.Path(exists=True))
def replay(record):
    """Re-run a record's config and seed and compare every table bit for bit."""
    old = load_record(record)
    new = execute(old.config, old.master_seed)
    fresh = new.manifest()["table_sha256"]
    stored = old.meta.get("table_sha256", {})
    on_disk = old.meta.get("disk_sha256", {})
    same = fresh == stored == on_disk
    for name in sorted(set(fresh) | set(stored)):
        match = fresh.get(name) == stored.get(name) == on_disk.get(name)
        click.echo(f"{'same' if match else 'DIFF'}  {name}")
    _print_checks(new)
    sys.exit(0 if same and new.passed else 1)


@main.command()
@click.argument("record", type=click.Path(exists=True))
@click.option("--csv", "as_csv", is_flag=True, help="Print tables as CSV.")
@click.option("--table", "only", default=None, help="Restrict to one table.")
@click.option("--npz", "npz", type=click.Path(dir_okay=False), default=None, help="Also write numeric columns to a binary .npz file.")
def report(record, as_csv, only, npz):
    """Summarise a stored record (JSON by default)."""
    rec = load_record(record)
    names = [only] if only else sorted(rec.tables)
    if as_csv:
        for name in names:
            if len(names) > 1:
                click.echo(f"# {name}")
            click.echo(table_csv(rec.tables[name]), nl=False)
    else:
        click.echo(json.dumps({"summary": rec.summary, "checks": rec.manifest()["checks"],
                               "input_hash": rec.content_hash}, indent=2, sort_keys=True))
    if npz:
        arrays = {}
        for name in names:
            rows = rec.tables[name]
            for col in rows[0] if rows else []:
                vals = [r[col] for r in rows]
                if all(isinstance(v, (int, float)) for v in vals):
                    arrays[f"{name}/{col}"] = np.asarray(vals)
        np.savez(npz, **arrays)
    sys.exit(0 if rec.passed else 1)


if __name__ == "__main__":
    main()

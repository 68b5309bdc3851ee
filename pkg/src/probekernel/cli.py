"""Operator commands: serve, load, report, gen-workload, replay."""

import json
import sys

import click


@click.group()
def main():
    """probekernel operator tooling."""


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def serve(data_dir, config_path):
    """Serve the probe protocol over HTTP and TCP."""
    from .config import load_config
    from .service import serve as run_service

    cfg = load_config(config_path)
    if data_dir is not None:
        cfg["data_dir"] = data_dir
    run_service(cfg)


@main.command()
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--table", required=True)
@click.option("--primary-key", default=None)
def load(csv_path, table, primary_key):
    """Load one CSV and print the inferred schema and row count."""
    from .relational.database import MAIN_BRANCH, BranchCatalog, Database

    db = Database()
    db.load_csv(csv_path, table, primary_key=primary_key)
    catalog = BranchCatalog(db, MAIN_BRANCH)
    schema = catalog.schema_of(table)
    click.echo(json.dumps({
        "table": table,
        "rows": catalog.row_count(table),
        "columns": [{"name": c.name, "type": c.type} for c in schema.columns],
    }, indent=2))


@main.command()
@click.option("--mode", required=True, type=click.Choice(["redundancy", "phases", "activity_counts"]))
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", "baseline_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "as_csv", is_flag=True, help="emit CSV instead of JSON")
def report(mode, trace_path, baseline_path, as_csv):
    """Summarize a trace file: redundancy, phases, or activity_counts."""
    from .reporting import run_report

    doc, csv_text = run_report(mode, trace_path, baseline_path)
    if as_csv:
        click.echo(csv_text, nl=False)
    else:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))


@main.command("gen-workload")
@click.option("--tasks", "n_tasks", default=20, show_default=True)
@click.option("--variants", "n_variants", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="workload", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--scale", default="small", type=click.Choice(["small", "medium"]),
              show_default=True)
def gen_workload_cmd(n_tasks, n_variants, seed, out_dir, scale):
    """Generate the synthetic dataset plus task specs."""
    from .workload import gen_workload

    summary = gen_workload(out_dir, n_tasks, n_variants, seed, scale)
    click.echo(json.dumps({
        "out_dir": summary["out_dir"],
        "tasks": summary["tasks"],
        "variants": summary["variants"],
    }, indent=2))


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def replay(trace_path, data_dir, config_path):
    """Re-drive a trace through a fresh engine; nonzero exit on drift."""
    from .config import build_engine, load_config
    from .reporting import load_trace
    from .workload import load_dataset, replay_trace

    cfg = load_config(config_path)
    cfg["trace_path"] = None  # don't re-record while replaying
    engine = build_engine(load_dataset(data_dir), cfg)
    mismatches = replay_trace(load_trace(trace_path), engine)
    if mismatches:
        for line in mismatches:
            click.echo(line, err=True)
        sys.exit(1)
    click.echo("replay ok")


if __name__ == "__main__":
    main()

"""Command-line entry point: ``spdz-transfer deal|run|report|tamper-sweep``.

Exit codes: 0 success, 1 runtime error, 2 bad configuration or usage,
3 protocol abort, 4 a deviation that went undetected.  Every failure prints
one JSON error record on stderr.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .adversary import Aborted, Strategy, TamperPlan, UndetectedDeviation, detection_rate
from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, ProtocolAbort
from .runner import METRICS_FILE, deal_files, run_experiment, run_tcp_party, write_run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_UNDETECTED = 4


def _error_record(exc: BaseException, **extra) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("round", "party", "line", "path"):
        value = getattr(exc, attr, None)
        if value is not None and value != -1:
            rec[attr] = value
    rec.update(extra)
    return json.dumps(rec)


def _fail(exc: BaseException, code: int, **extra):
    click.echo(_error_record(exc, **extra), err=True)
    sys.exit(code)


def _config(config_path, overrides: dict) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if config_path is None:
        return parse_config("", None, overrides)
    return load_config(config_path, overrides)


def _config_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run configuration."),
        click.option("--n", type=int, help="Number of domains (1 = solo)."),
        click.option("--network", type=click.Choice(["I", "II", "III"])),
        click.option("--epochs", type=int),
        click.option("--seed", type=int),
        click.option("--train-per-domain", type=int),
        click.option("--test-per-domain", type=int),
        click.option("--dataset", "dataset", type=click.Path(file_okay=False), help="Directory with IDX files."),
        click.option("--synthetic", type=int, help="Use this many synthetic digits instead of a dataset."),
        click.option("--theta-t", type=float, help="Off-diagonal degree for a uniform matrix."),
        click.option("--kappa", type=int),
        click.option("--precision", type=int),
        click.option("--transfer", type=click.Choice(["secure", "clear"])),
        click.option("--secret-theta/--public-theta", default=None),
        click.option("--preprocessing-dir", type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _overrides(kw: dict) -> dict:
    out = {k: kw.pop(k) for k in list(kw) if k in (
        "n", "network", "epochs", "seed", "train_per_domain", "test_per_domain", "theta_t",
        "kappa", "precision", "transfer", "secret_theta", "preprocessing_dir",
    )}
    dataset, synthetic = kw.pop("dataset", None), kw.pop("synthetic", None)
    if dataset is not None:
        out["dataset"] = {"path": dataset}
    elif synthetic is not None:
        out["dataset"] = {"synthetic": synthetic}
    return out


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress to stderr.")
def main(verbose: int) -> None:
    """Secret-shared transfer learning across data domains."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


@main.command("deal")
@_config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--margin", type=float, default=0.1, show_default=True)
def cmd_deal(config_path, out_dir, margin, **kw):
    """Write one preprocessing file per party, sized for the configured run."""
    try:
        cfg = _config(config_path, _overrides(kw))
        info = deal_files(cfg, Path(out_dir), margin)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    except (OSError, ValueError, OverflowError, MemoryError) as exc:
        _fail(exc, EXIT_ERROR)
    click.echo(json.dumps(info))


@main.command("run")
@_config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Run directory (default from config).")
@click.option("--party", type=int, help="In tcp mode, the party this process plays.")
def cmd_run(config_path, out_dir, party, **kw):
    """Train solo or collaboratively; stream per-epoch records as JSON lines."""
    try:
        cfg = _config(config_path, _overrides(kw))
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    out = Path(out_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / METRICS_FILE, "w")
    except OSError as exc:
        _fail(exc, EXIT_ERROR)

    def emit(rec: dict) -> None:
        line = json.dumps(rec)
        metrics.write(line + "\n")
        metrics.flush()
        click.echo(line)

    with metrics:
        if cfg.mode == "tcp":
            if party is None:
                _fail(click.UsageError("tcp mode needs --party"), EXIT_CONFIG)
            try:
                result = run_tcp_party(cfg, party, emit)
            except ProtocolAbort as exc:
                _fail(exc, EXIT_ABORT, outcome="Aborted")
            except Exception as exc:  # noqa: BLE001 - reported as an error record
                _fail(exc, EXIT_ERROR, party=party)
            from .runner import model_path, save_params

            save_params(model_path(out, party), result.params)
            click.echo(json.dumps({"outcome": "Completed", "party": party, "final_accuracy": result.final_accuracy}))
            return
        try:
            report = run_experiment(cfg, emit)
            write_run(cfg, report, out)
        except Exception as exc:  # noqa: BLE001
            _fail(exc, EXIT_ERROR)
    summary = report.summary()
    click.echo(json.dumps(summary))
    if isinstance(report.outcome, Aborted):
        o = report.outcome
        click.echo(json.dumps({"error": o.error, "message": o.reason, "round": o.round, "party": o.party,
                               "outcome": "Aborted"}), err=True)
        sys.exit(EXIT_ABORT)
    if isinstance(report.outcome, UndetectedDeviation):
        _fail(RuntimeError("deviation was not detected"), EXIT_UNDETECTED, outcome="UndetectedDeviation")


def read_metrics(path: Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed record: {exc.msg}", lineno, str(path)) from None
            missing = {"epoch", "domain", "train_loss", "test_accuracy", "wall_time"} - set(rec if isinstance(rec, dict) else {})
            if missing:
                raise ConfigError(f"record lacks {sorted(missing)}", lineno, str(path))
            records.append(rec)
    if not records:
        raise ConfigError("no metrics records", None, str(path))
    return records


def summarize_run(name: str, records: list[dict]) -> dict:
    last_epoch = max(r["epoch"] for r in records)
    final = sorted((r for r in records if r["epoch"] == last_epoch), key=lambda r: r["domain"])
    accs = [r["test_accuracy"] for r in final]
    return {
        "run": name,
        "domains": len(final),
        "epochs": last_epoch,
        "final_accuracy": accs,
        "mean_accuracy": sum(accs) / len(accs),
        "wall_time": max(r["wall_time"] for r in records),
    }


@main.command("report")
@click.argument("metrics_files", nargs=-1, required=True, type=click.Path(dir_okay=True))
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
def cmd_report(metrics_files, fmt):
    """Compare runs: final accuracy per domain and training time."""
    rows = []
    for f in metrics_files:
        path = Path(f)
        if path.is_dir():
            path = path / METRICS_FILE
        try:
            rows.append(summarize_run(str(f), read_metrics(path)))
        except ConfigError as exc:
            _fail(exc, EXIT_CONFIG)
        except OSError as exc:
            _fail(exc, EXIT_ERROR)
    if fmt == "json":
        for row in rows:
            click.echo(json.dumps(row))
        return
    click.echo(f"{'run':<32} {'n':>3} {'epochs':>6} {'domain 1':>9} {'mean':>7} {'time (s)':>9}")
    for row in rows:
        click.echo(
            f"{row['run'][-32:]:<32} {row['domains']:>3} {row['epochs']:>6} "
            f"{row['final_accuracy'][0]:>9.4f} {row['mean_accuracy']:>7.4f} {row['wall_time']:>9.1f}"
        )


@main.command("tamper-sweep")
@click.option("--strategy", "strategies", multiple=True, type=click.Choice([s.value for s in Strategy]),
              help="Strategies to test (default: all deviating ones).")
@click.option("--delta", "deltas", multiple=True, type=str, default=("1",), show_default=True,
              help="Tamper offsets; accepts expressions like 2**63.")
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--n", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_tamper_sweep(strategies, deltas, trials, n, seed):
    """Empirical detection rate per strategy and offset."""
    chosen = [Strategy(s) for s in strategies] or [s for s in Strategy if s != Strategy.HONEST_BUT_CURIOUS]
    try:
        values = [_parse_delta(d) for d in deltas]
        for strategy in chosen:
            for delta in values:
                plan = TamperPlan(strategy, (1,), delta)
                rate = detection_rate(plan, trials, n=n, seed=seed)
                click.echo(json.dumps({"strategy": strategy.value, "delta": str(delta), "n": n,
                                       "trials": trials, "detection_rate": rate}))
    except ValueError as exc:
        _fail(exc, EXIT_CONFIG)


def _parse_delta(text: str) -> int:
    text = text.strip()
    if "**" in text:
        base, exp = text.split("**", 1)
        return int(base, 0) ** int(exp, 0)
    return int(text, 0)


if __name__ == "__main__":  # pragma: no cover
    main()

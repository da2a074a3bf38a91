import json
import socket
import threading

import numpy as np
import pytest
from click.testing import CliRunner

from spdz_transfer.cli import EXIT_ABORT, EXIT_CONFIG, main
from spdz_transfer.config import parse_config
from spdz_transfer.dealer import read_preprocessing
from spdz_transfer.runner import (
    METRICS_FILE,
    OUTCOME_FILE,
    demand_for,
    load_params,
    metrics_without_timing,
    model_path,
    run_experiment,
    run_tcp_party,
)

SMALL = ["--synthetic", "400", "--train-per-domain", "64", "--test-per-domain", "32", "--epochs", "1"]


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _records(text):
    return [json.loads(line) for line in text.splitlines() if line.startswith('{"epoch"')]


def test_solo_run_writes_metrics_and_models(tmp_path):
    res = invoke("run", "--n", 1, *SMALL, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    recs = [json.loads(x) for x in (tmp_path / METRICS_FILE).read_text().splitlines()]
    assert [(r["epoch"], r["domain"]) for r in recs] == [(1, 1)]
    assert 0.0 <= recs[0]["test_accuracy"] <= 1.0
    assert json.loads((tmp_path / OUTCOME_FILE).read_text())["outcome"] == "Completed"
    params = load_params(model_path(tmp_path, 1))
    assert set(params) == {"conv1", "conv3", "full5"}


def test_identity_theta_matches_solo():
    """Domain 1 trained beside a peer under an identity matrix equals domain 1 trained alone."""
    base = {"dataset": {"synthetic": 400}, "train_per_domain": 64, "test_per_domain": 32, "epochs": 2}
    collab = run_experiment(parse_config("n: 2\ntheta: [[1, 0], [0, 1]]\ntransfer: clear\n", overrides=base))
    solo = run_experiment(parse_config("", overrides={**base, "n": 1}))
    assert solo.results[0].batch_losses == collab.results[0].batch_losses
    assert metrics_without_timing(solo.records) == metrics_without_timing(collab.records[::2])


def test_tamper_run_aborts_without_models(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("n: 2\ntamper: {strategy: AddDeltaToValueShare, targets: [2], delta: 1}\n")
    out = tmp_path / "out"
    res = invoke("run", "--config", cfg, *SMALL, "--out", out)
    assert res.exit_code == EXIT_ABORT
    err = [json.loads(x) for x in res.stderr.splitlines() if x.startswith("{")]
    assert err and err[-1]["error"] == "MacCheckFailed" and err[-1]["outcome"] == "Aborted"
    assert not list(out.glob("model_domain*"))
    assert json.loads((out / OUTCOME_FILE).read_text())["outcome"] == "Aborted"


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("n: 2\ntheta: [[0.5, 0.6], [0.5, 0.4]]\n")
    res = invoke("run", "--config", cfg, "--out", tmp_path / "o")
    assert res.exit_code == EXIT_CONFIG
    rec = json.loads(res.stderr.strip().splitlines()[-1])
    assert rec["error"] == "ConfigError" and rec["line"] == 2


def test_deal_sizes_files(tmp_path):
    res = invoke("deal", "--n", 2, *SMALL, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    info = json.loads(res.output)
    assert len(info["files"]) == 2
    cfg = parse_config("", overrides={"n": 2, "dataset": {"synthetic": 400}, "train_per_domain": 64,
                                      "test_per_domain": 32, "epochs": 1})
    demand = demand_for(cfg)
    assert info["masks"] == [int(np.ceil(m * 1.1)) for m in demand.masks]
    view = read_preprocessing(info["files"][0])
    assert view.party_id == 1 and view.masks_remaining(2) == info["masks"][1]


def test_deal_zero_epochs_gives_empty_pools(tmp_path):
    res = invoke("deal", "--n", 2, *SMALL[:-2], "--epochs", 0, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    info = json.loads(res.output)
    assert info["triples"] == 0 and info["masks"] == [0, 0]
    view = read_preprocessing(info["files"][1])
    assert view.triples_remaining == 0


def test_deal_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = invoke("deal", "--n", 2, *SMALL, "--out", blocker / "sub")
    assert res.exit_code != 0
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"]


def test_preprocessing_files_drive_a_run(tmp_path):
    assert invoke("deal", "--n", 2, *SMALL, "--out", tmp_path / "prep").exit_code == 0
    res = invoke("run", "--n", 2, *SMALL, "--preprocessing-dir", tmp_path / "prep", "--out", tmp_path / "run")
    assert res.exit_code == 0, res.output
    assert len(list((tmp_path / "run").glob("model_domain*.npz"))) == 2


def test_report_rows_and_errors(tmp_path):
    for name, n in (("a", 1), ("b", 2)):
        assert invoke("run", "--n", n, *SMALL, "--out", tmp_path / name).exit_code == 0
    res = invoke("report", "--format", "json", tmp_path / "a", tmp_path / "b" / METRICS_FILE)
    assert res.exit_code == 0, res.output
    rows = [json.loads(x) for x in res.output.splitlines()]
    assert [r["domains"] for r in rows] == [1, 2]
    recs = [json.loads(x) for x in (tmp_path / "b" / METRICS_FILE).read_text().splitlines()]
    assert rows[1]["final_accuracy"] == [r["test_accuracy"] for r in recs]
    table = invoke("report", tmp_path / "a", tmp_path / "b")
    assert table.exit_code == 0 and len(table.output.splitlines()) == 3

    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert invoke("report", empty).exit_code == EXIT_CONFIG
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"epoch": 1}\nnot json\n')
    res = invoke("report", broken)
    assert res.exit_code == EXIT_CONFIG
    assert json.loads(res.stderr.strip())["line"] == 1


def test_tamper_sweep_command():
    res = invoke("tamper-sweep", "--strategy", "CorruptMacShare", "--delta", "1", "--delta", "2**63", "--trials", 20)
    assert res.exit_code == 0, res.output
    rows = [json.loads(x) for x in res.output.splitlines()]
    assert [r["delta"] for r in rows] == ["1", str(2**63)]
    assert rows[0]["detection_rate"] == 1.0


def _free_ports(k):
    socks = [socket.socket() for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_tcp_run_matches_in_process(tmp_path):
    base = {"n": 2, "dataset": {"synthetic": 400}, "train_per_domain": 64, "test_per_domain": 32, "epochs": 1}
    assert invoke("deal", "--n", 2, *SMALL, "--out", tmp_path / "prep").exit_code == 0
    inproc = run_experiment(parse_config("", overrides={**base, "preprocessing_dir": str(tmp_path / "prep")}))
    roster = "\n".join(f"  - 127.0.0.1:{p}" for p in _free_ports(2))
    tcp_cfg = parse_config(f"mode: tcp\nroster:\n{roster}\n",
                           overrides={**base, "preprocessing_dir": str(tmp_path / "prep")})
    results = [None, None]

    def play(i):
        results[i - 1] = run_tcp_party(tcp_cfg, i)

    threads = [threading.Thread(target=play, args=(i,)) for i in (1, 2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    for got, want in zip(results, inproc.results):
        assert got is not None
        assert metrics_without_timing([h.to_dict() for h in got.history]) == \
            metrics_without_timing([h.to_dict() for h in want.history])
        assert got.batch_losses == want.batch_losses

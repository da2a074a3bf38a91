"""Experiment orchestration shared by the CLI and the acceptance tests.

A run trains one network per domain.  With ``n = 1`` it is plain solo
training; otherwise every domain is a party and the hooks call the transfer
unit.  Per-epoch metrics stream to ``metrics.jsonl`` in (epoch, domain) order;
model files are written only when the run completes.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .adversary import Aborted, Completed, Outcome, UndetectedDeviation, classify, install_plan
from .cnn.network import Params
from .cnn.train import EpochRecord, TrainConfig, TrainResult, TransferAdapter, run_demand, train_domain
from .config import RunConfig
from .data import DomainSplit, load_mnist_dir, split_domains, synthetic_digits
from .dealer import PartyPreprocessing, StreamingDealer, deal, read_preprocessing, write_preprocessing
from .protocol import Party
from .ring import FixedPointCodec, Ring
from .simulation import make_parties, run_threads
from .transport import TcpTransport

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
OUTCOME_FILE = "outcome.json"


def model_path(out_dir: Path, domain: int) -> Path:
    return out_dir / f"model_domain{domain}.npz"


def preprocessing_path(directory: Path, party: int) -> Path:
    return directory / f"party{party}.prep"


def codec_for(cfg: RunConfig) -> FixedPointCodec:
    return FixedPointCodec(cfg.precision, Ring(cfg.kappa))


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(cfg.batch_size, cfg.learning_rate, cfg.epochs, cfg.seed)


def load_domains(cfg: RunConfig) -> DomainSplit:
    if cfg.dataset_path is not None:
        data = load_mnist_dir(cfg.dataset_path)
    else:
        data = synthetic_digits(cfg.synthetic, seed=cfg.seed)
    return split_domains(data, cfg.n, cfg.train_per_domain, cfg.test_per_domain)


def demand_for(cfg: RunConfig):
    """Exact preprocessing demand of a collaborative run of ``cfg``."""
    return run_demand(
        cfg.network_spec(), cfg.n, cfg.train_per_domain, cfg.test_per_domain, train_config(cfg), cfg.secret_theta
    )


def save_params(path: Path, params: Params) -> None:
    arrays = {}
    for name, (w, b) in params.items():
        arrays[f"{name}.w"] = w
        arrays[f"{name}.b"] = b
    np.savez(path, **arrays)


def load_params(path: Path) -> Params:
    with np.load(path) as z:
        names = sorted({k.rsplit(".", 1)[0] for k in z.files})
        return {name: (z[f"{name}.w"], z[f"{name}.b"]) for name in names}


class MetricsSink:
    """Collects epoch records from concurrent domains and emits them in order.

    An epoch's records are released once every domain has reported it, so the
    output order does not depend on thread timing.
    """

    def __init__(self, n: int, emit: Callable[[dict], None] | None = None):
        self.n = n
        self.emit = emit
        self.records: list[dict] = []
        self._pending: dict[int, dict[int, EpochRecord]] = {}
        self._lock = threading.Lock()

    def __call__(self, rec: EpochRecord) -> None:
        with self._lock:
            bucket = self._pending.setdefault(rec.epoch, {})
            bucket[rec.domain] = rec
            if len(bucket) == self.n:
                for domain in sorted(bucket):
                    d = bucket[domain].to_dict()
                    self.records.append(d)
                    if self.emit is not None:
                        self.emit(d)
                del self._pending[rec.epoch]


def metrics_without_timing(records: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


@dataclass
class RunReport:
    outcome: Outcome
    records: list[dict] = field(default_factory=list)
    results: list[TrainResult] = field(default_factory=list)
    transcripts: list[bytes] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return isinstance(self.outcome, Completed)

    def final_accuracies(self) -> list[float]:
        return [r.final_accuracy for r in self.results]

    def summary(self) -> dict:
        out = {"outcome": self.outcome.name}
        if isinstance(self.outcome, Aborted):
            out.update(round=self.outcome.round, party=self.outcome.party, reason=self.outcome.reason, error=self.outcome.error)
        if isinstance(self.outcome, UndetectedDeviation):
            out["injections"] = [vars(i) for i in self.outcome.injections]
        if self.results:
            out["final_accuracy"] = self.final_accuracies()
        if self.transcripts:
            import hashlib

            out["transcript_sha256"] = [hashlib.sha256(t).hexdigest() for t in self.transcripts]
        return out


def _views(cfg: RunConfig, codec: FixedPointCodec) -> list[PartyPreprocessing]:
    if cfg.preprocessing_dir is not None:
        views = [read_preprocessing(preprocessing_path(Path(cfg.preprocessing_dir), i)) for i in range(1, cfg.n + 1)]
        for v in views:
            if v.n != cfg.n or v.ring != codec.ring:
                raise ValueError(f"preprocessing for party {v.party_id} was dealt for n={v.n}, {v.ring}")
        return views
    return StreamingDealer(cfg.n, cfg.seed, codec.ring, capacity=demand_for(cfg).with_margin(0.1)).views()


def run_experiment(
    cfg: RunConfig,
    emit: Callable[[dict], None] | None = None,
    domains: DomainSplit | None = None,
) -> RunReport:
    """Train every domain of ``cfg`` in this process and classify the outcome."""
    domains = domains or load_domains(cfg)
    spec = cfg.network_spec()
    tcfg = train_config(cfg)
    sink = MetricsSink(cfg.n, emit)
    if cfg.n == 1:
        res = train_domain(spec, 1, domains.train[0], domains.test[0], tcfg, on_epoch=sink, alignment=cfg.alignment)
        return RunReport(Completed([res]), sink.records, [res])

    codec = codec_for(cfg)
    theta = cfg.degree_matrix()
    parties = make_parties(cfg.n, _views(cfg, codec), codec, timeout=cfg.timeout)
    injections, observations = install_plan(parties, cfg.tamper)
    epoch_length = max(len(t) for t in domains.train)
    eval_length = max(len(t) for t in domains.test)

    def body(party: Party) -> TrainResult:
        adapter = TransferAdapter(cfg.transfer, party, theta, cfg.secret_theta, cfg.backward)
        i = party.id - 1
        return train_domain(
            spec, party.id, domains.train[i], domains.test[i], tcfg, adapter,
            epoch_length, eval_length, on_epoch=sink, alignment=cfg.alignment,
        )

    outcome = classify(run_threads(parties, body), injections, observations)
    results = outcome.results if isinstance(outcome, (Completed, UndetectedDeviation)) else []
    return RunReport(outcome, sink.records, list(results), [p.transcript.to_bytes() for p in parties])


def write_run(cfg: RunConfig, report: RunReport, out_dir: Path) -> None:
    """Persist the outcome; model files only for a completed run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    summary["config"] = cfg.to_dict()
    (out_dir / OUTCOME_FILE).write_text(json.dumps(summary, indent=2) + "\n")
    if report.completed:
        for res in report.results:
            save_params(model_path(out_dir, res.domain), res.params)


def deal_files(cfg: RunConfig, out_dir: Path, margin: float = 0.1) -> dict:
    """Write one preprocessing file per party sized for ``cfg`` plus ``margin``."""
    if cfg.n < 2:
        raise ValueError("dealing needs at least 2 parties")
    demand = demand_for(cfg).with_margin(margin)
    rng = np.random.default_rng([cfg.seed, 0xDEA1])
    bundle = deal(cfg.n, demand.triples, rng, Ring(cfg.kappa), demand.masks)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for view in bundle.views:
        path = preprocessing_path(out_dir, view.party_id)
        write_preprocessing(path, view)
        paths.append(str(path))
    return {"files": paths, "triples": demand.triples, "masks": demand.masks}


def run_tcp_party(cfg: RunConfig, party_id: int, emit: Callable[[dict], None] | None = None) -> TrainResult:
    """One OS process's share of a TCP run: train this party's domain."""
    if cfg.preprocessing_dir is None:
        raise ValueError("tcp mode reads preprocessing files; set preprocessing_dir")
    codec = codec_for(cfg)
    view = read_preprocessing(preprocessing_path(Path(cfg.preprocessing_dir), party_id))
    if view.party_id != party_id or view.n != cfg.n:
        raise ValueError(f"preprocessing file is for party {view.party_id} of {view.n}")
    domains = load_domains(cfg)
    transport = TcpTransport(party_id, cfg.roster_addresses(), cfg.timeout)
    party = Party(view, transport, codec)
    try:
        adapter = TransferAdapter(cfg.transfer, party, cfg.degree_matrix(), cfg.secret_theta, cfg.backward)
        i = party_id - 1

        def on_epoch(rec: EpochRecord) -> None:
            if emit is not None:
                emit(rec.to_dict())

        result = train_domain(
            cfg.network_spec(), party_id, domains.train[i], domains.test[i], train_config(cfg), adapter,
            max(len(t) for t in domains.train), max(len(t) for t in domains.test),
            on_epoch=on_epoch, alignment=cfg.alignment,
        )
        party.barrier()
        return result
    except BaseException:
        party.abort()
        raise
    finally:
        transport.close()

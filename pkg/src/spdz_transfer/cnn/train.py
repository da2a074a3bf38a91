"""Per-domain training loops, solo and collaborative.

Every domain runs :func:`train_domain` with its own data.  In a
collaborative run the loops of all domains proceed in lockstep: at each hook
the forward pass calls the transfer unit (a collective protocol call) and the
backward pass exchanges upstream gradients so each domain follows the
gradient of the joint objective, the sum of all domains' losses.

Samples of different domains are aligned by position in the batch.  When
domains hold different amounts of data, an epoch spans the largest domain
and smaller domains cycle through fresh permutations of their data.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..data import Dataset
from ..dealer import Demand
from ..protocol import Party
from ..transfer import DegreeMatrix, weave_backward_exchange, weave_forward_clear, weave_forward_secure
from .network import (
    NetworkSpec,
    Params,
    backward,
    forward,
    init_params,
    params_finite,
    sgd_step,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    domain: int
    train_loss: float
    test_accuracy: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    domain: int
    params: Params
    history: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_accuracy if self.history else float("nan")


class TransferAdapter:
    """Connects a network's hooks to a transfer unit for one domain.

    ``mode`` is ``"none"`` (identity, solo training), ``"clear"`` (plaintext
    exchange of activations) or ``"secure"`` (the MAC-checked unit).

    ``backward`` is ``"local"`` (each domain scales its own upstream gradient
    by its diagonal degree; nothing leaves the domain) or ``"joint"``
    (domains exchange upstream gradients in the clear and apply Theta^T,
    the exact gradient of the summed losses).
    """

    def __init__(
        self,
        mode: str = "none",
        party: Party | None = None,
        theta: DegreeMatrix | None = None,
        secret_theta: bool = False,
        backward: str = "local",
    ):
        if backward not in ("local", "joint"):
            raise ValueError(f"unknown backward mode {backward!r}")
        if mode not in ("none", "clear", "secure"):
            raise ValueError(f"unknown transfer mode {mode!r}")
        if mode != "none" and (party is None or theta is None):
            raise ValueError(f"mode {mode!r} needs a party and a degree matrix")
        self.mode = mode
        self.party = party
        self.theta = theta
        self.secret_theta = secret_theta
        self.backward_mode = backward

    def forward(self, name: str, x: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return x
        if self.mode == "clear":
            return weave_forward_clear(self.party, x, self.theta)
        return weave_forward_secure(
            self.party, x, self.theta.row(self.party.id), self.theta, self.secret_theta, layer=name
        )

    def backward(self, name: str, g: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return g
        if self.backward_mode == "local":
            return self.theta.row(self.party.id)[self.party.id - 1] * g
        return weave_backward_exchange(self.party, g, self.theta)


def _stream(num: int, length: int, rng: np.random.Generator | None) -> np.ndarray:
    """Indices 0..num-1 repeated (freshly permuted when ``rng`` is given) to ``length``."""
    reps = math.ceil(length / num)
    parts = [rng.permutation(num) if rng is not None else np.arange(num) for _ in range(reps)]
    return np.concatenate(parts)[:length]


def train_batches(num: int, epoch_length: int, batch_size: int, seed: int, domain: int, epoch: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, domain, epoch, 0x5EED])
    idx = _stream(num, epoch_length, rng)
    return [idx[i:i + batch_size] for i in range(0, epoch_length, batch_size)]


def label_aligned_batches(
    labels: np.ndarray, epoch_length: int, batch_size: int, seed: int, domain: int, epoch: int, num_classes: int = 10
) -> list[np.ndarray]:
    """Batches whose position k holds a sample of the class scheduled for k.

    The class schedule comes from the shared seed (identical for every
    domain); each domain fills it from its own data, cycling through
    per-class permutations.
    """
    sched_rng = np.random.default_rng([seed, epoch, 0xC1A55])
    schedule = sched_rng.permutation(np.tile(np.arange(num_classes), math.ceil(epoch_length / num_classes)))[:epoch_length]
    rng = np.random.default_rng([seed, domain, epoch, 0x5EED])
    pools = {c: np.flatnonzero(labels == c) for c in range(num_classes)}
    queues = {c: [] for c in range(num_classes)}
    idx = np.empty(epoch_length, dtype=np.int64)
    for k, c in enumerate(schedule):
        if not queues[c]:
            if len(pools[c]) == 0:
                raise ValueError(f"domain {domain} has no samples of class {c}")
            queues[c] = list(rng.permutation(pools[c]))
        idx[k] = queues[c].pop()
    return [idx[i:i + batch_size] for i in range(0, epoch_length, batch_size)]


def eval_batches(num: int, eval_length: int, batch_size: int) -> list[np.ndarray]:
    idx = _stream(num, eval_length, None)
    return [idx[i:i + batch_size] for i in range(0, eval_length, batch_size)]


def batch_sizes(total: int, batch_size: int) -> list[int]:
    return [min(batch_size, total - i) for i in range(0, total, batch_size)]


def evaluate_collaborative(
    spec: NetworkSpec,
    params: Params,
    test: Dataset,
    eval_length: int,
    batch_size: int,
    adapter: TransferAdapter,
) -> float:
    """Accuracy on this domain's test set, with the transfer unit active.

    All domains evaluate in lockstep over ``eval_length`` aligned positions;
    predictions beyond this domain's own test size are padding and not counted.
    """
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    correct = 0
    pos = 0
    for idx in eval_batches(len(test), eval_length, batch_size):
        logits = forward(spec, params, test.images[idx], hook_fn=adapter.forward).logits
        hit = logits.argmax(axis=1) == test.labels[idx]
        own = (pos + np.arange(len(idx))) < len(test)
        correct += int(np.sum(hit & own))
        pos += len(idx)
    return correct / len(test)


def train_domain(
    spec: NetworkSpec,
    domain: int,
    train: Dataset,
    test: Dataset,
    cfg: TrainConfig,
    adapter: TransferAdapter | None = None,
    epoch_length: int | None = None,
    eval_length: int | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    alignment: str = "index",
    eval_mode: str = "collaborative",
) -> TrainResult:
    """SGD training of one domain's network.

    ``epoch_length`` / ``eval_length`` are the public, shared stream lengths
    (the largest train / test set among the domains); they default to this
    domain's own sizes, which is the solo case.
    """
    adapter = adapter or TransferAdapter()
    epoch_length = epoch_length or len(train)
    eval_length = eval_length or len(test)
    params = init_params(spec, np.random.default_rng([cfg.seed, domain, 0xA11]))
    dropout_rng = np.random.default_rng([cfg.seed, domain, 0xD0])
    result = TrainResult(domain, params)
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        if alignment == "label":
            batches = label_aligned_batches(train.labels, epoch_length, cfg.batch_size, cfg.seed, domain, epoch)
        else:
            batches = train_batches(len(train), epoch_length, cfg.batch_size, cfg.seed, domain, epoch)
        for idx in batches:
            fwd = forward(spec, params, train.images[idx], adapter.forward, train=True, dropout_rng=dropout_rng)
            loss, dlogits = softmax_cross_entropy(fwd.logits, train.labels[idx])
            grads, _ = backward(spec, params, fwd, dlogits, adapter.backward)
            params = sgd_step(params, grads, cfg.learning_rate)
            if not params_finite(params):
                raise FloatingPointError(f"domain {domain}: non-finite parameters in epoch {epoch}")
            losses.append(float(loss))
        result.batch_losses.extend(losses)
        if eval_mode == "local":
            acc = evaluate_collaborative(spec, params, test, len(test), cfg.batch_size, TransferAdapter())
        else:
            acc = evaluate_collaborative(spec, params, test, eval_length, cfg.batch_size, adapter)
        rec = EpochRecord(epoch, domain, float(np.mean(losses)), acc, time.perf_counter() - start)
        result.history.append(rec)
        logger.info("domain %d epoch %d loss %.4f acc %.4f", domain, epoch, rec.train_loss, acc)
        if on_epoch is not None:
            on_epoch(rec)
    result.params = params
    return result


def unit_demand(spec: NetworkSpec, n: int, batch: int, secret_theta: bool) -> Demand:
    """Preprocessing consumed by one forward pass of a batch through all hooks."""
    masks = 0
    triples = 0
    for shape in spec.hook_shapes().values():
        size = batch * int(np.prod(shape))
        masks += 2 * size  # input mask and private-output mask per element
        if secret_theta:
            masks += n
            triples += n * n * size
    return Demand(triples, [masks] * n)


def run_demand(
    spec: NetworkSpec,
    n: int,
    epoch_length: int,
    eval_length: int,
    cfg: TrainConfig,
    secret_theta: bool = False,
) -> Demand:
    """Exact preprocessing demand of a full secure run (before any margin)."""
    total = Demand(0, [0] * n)
    for b in batch_sizes(epoch_length, cfg.batch_size) + batch_sizes(eval_length, cfg.batch_size):
        total = total + unit_demand(spec, n, b, secret_theta)
    return total.scaled(cfg.epochs)

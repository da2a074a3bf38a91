import numpy as np
import pytest

from spdz_transfer.cnn.network import get_network
from spdz_transfer.cnn.train import (
    TrainConfig,
    TransferAdapter,
    label_aligned_batches,
    run_demand,
    train_batches,
    train_domain,
    unit_demand,
)
from spdz_transfer.data import split_domains, synthetic_digits
from spdz_transfer.dealer import Demand, StreamingDealer
from spdz_transfer.errors import TriplesExhausted
from spdz_transfer.simulation import make_parties, run_threads
from spdz_transfer.transfer import DegreeMatrix

SPEC = get_network("I")


@pytest.fixture(scope="module")
def domains():
    return split_domains(synthetic_digits(3 * 160, seed=5), 3, 120, 40)


def _collab(domains, n, theta, mode, cfg, capacity=None, secret=False, backward="local"):
    dealer = StreamingDealer(n, cfg.seed, capacity=capacity, block_size=4096)
    parties = make_parties(n, dealer.views(), timeout=20)

    def body(p):
        adapter = TransferAdapter(mode, p, theta, secret, backward)
        i = p.id - 1
        return train_domain(SPEC, p.id, domains.train[i], domains.test[i], cfg, adapter)

    return run_threads(parties, body)


def test_loss_decreases_and_params_stay_finite(domains):
    res = train_domain(SPEC, 1, domains.train[0], domains.test[0], TrainConfig(16, 0.05, 3, 0))
    losses = [r.train_loss for r in res.history]
    assert losses[0] > losses[1] > losses[2]
    assert all(np.all(np.isfinite(w)) for w, _ in res.params.values())


def test_training_is_deterministic(domains):
    cfg = TrainConfig(32, 0.01, 1, 3)
    a = train_domain(SPEC, 2, domains.train[1], domains.test[1], cfg)
    b = train_domain(SPEC, 2, domains.train[1], domains.test[1], cfg)
    assert a.batch_losses == b.batch_losses


@pytest.mark.parametrize("mode", ["clear", "secure"])
def test_identity_degrees_reproduce_solo_training(domains, mode):
    cfg = TrainConfig(32, 0.01, 1, 0)
    solo = [train_domain(SPEC, i + 1, domains.train[i], domains.test[i], cfg) for i in range(2)]
    out = _collab(domains, 2, DegreeMatrix.identity(2), mode, cfg)
    for s, r in zip(solo, out):
        assert r.error is None
        if mode == "clear":
            assert r.value.batch_losses == s.batch_losses
        else:
            # fixed-point rounding at the hooks only
            assert np.allclose(r.value.batch_losses, s.batch_losses, atol=1e-2)
            assert abs(r.value.final_accuracy - s.final_accuracy) <= 0.05


def test_unit_demand_formula():
    d = unit_demand(SPEC, 3, 10, secret_theta=False)
    size = 10 * (12 * 12 * 6 + 4 * 4 * 12)
    assert d.triples == 0 and d.masks == [2 * size] * 3
    s = unit_demand(SPEC, 3, 10, secret_theta=True)
    assert s.triples == 9 * size and s.masks == [2 * size + 6] * 3


def test_run_demand_is_exact(domains):
    """A dealer capped at the computed demand suffices; one mask fewer does not."""
    cfg = TrainConfig(64, 0.01, 1, 0)
    theta = DegreeMatrix.uniform(2, 0.1)
    demand = run_demand(SPEC, 2, 120, 40, cfg)
    ok = _collab(domains, 2, theta, "secure", cfg, capacity=demand)
    assert all(r.error is None for r in ok)
    short = Demand(demand.triples, [demand.masks[0] - 1, demand.masks[1]])
    bad = _collab(domains, 2, theta, "secure", cfg, capacity=short)
    assert any(isinstance(r.error, TriplesExhausted) for r in bad)
    assert all(r.value is None for r in bad)


def test_secret_theta_training_matches_public(domains):
    cfg = TrainConfig(64, 0.01, 1, 0)
    theta = DegreeMatrix.uniform(2, 0.2)
    pub = _collab(domains, 2, theta, "secure", cfg)
    sec = _collab(domains, 2, theta, "secure", cfg, secret=True)
    for a, b in zip(pub, sec):
        assert np.allclose(a.value.batch_losses, b.value.batch_losses, atol=1e-2)


def test_joint_backward_runs(domains):
    cfg = TrainConfig(64, 0.01, 1, 0)
    out = _collab(domains, 3, DegreeMatrix.uniform(3, 0.1), "clear", cfg, backward="joint")
    assert all(r.error is None and np.isfinite(r.value.history[0].train_loss) for r in out)


def test_batches_cover_epoch():
    batches = train_batches(50, 120, 32, 0, 1, 1)
    assert [len(b) for b in batches] == [32, 32, 32, 24]
    idx = np.concatenate(batches)
    assert set(idx[:50]) == set(range(50))


def test_label_alignment_shares_a_schedule():
    rng = np.random.default_rng(0)
    la, lb = rng.integers(0, 10, 300), rng.integers(0, 10, 200)
    a = np.concatenate(label_aligned_batches(la, 256, 64, 9, 1, 2))
    b = np.concatenate(label_aligned_batches(lb, 256, 64, 9, 2, 2))
    assert np.array_equal(la[a], lb[b])
    with pytest.raises(ValueError):
        label_aligned_batches(np.zeros(20, dtype=int), 20, 10, 0, 1, 1)


def test_adapter_rejects_bad_modes():
    with pytest.raises(ValueError):
        TransferAdapter("wire")
    with pytest.raises(ValueError):
        TransferAdapter("secure")
    with pytest.raises(ValueError):
        TransferAdapter(backward="sideways")

import numpy as np
import pytest

from spdz_transfer.dealer import (
    Demand,
    StreamingDealer,
    deal,
    read_preprocessing,
    write_preprocessing,
)
from spdz_transfer.errors import TriplesExhausted
from spdz_transfer.ring import Ring
from spdz_transfer.sharing import AuthShare, reconstruct, reconstruct_mac

R = Ring(64)


def _triples(bundle, count):
    slices = [v.take_triples(count) for v in bundle.views]
    a = [s.a for s in slices]
    b = [s.b for s in slices]
    c = [s.c for s in slices]
    return slices, a, b, c


def test_single_triple_two_parties(rng):
    bundle = deal(2, 1, rng)
    _, a, b, c = _triples(bundle, 1)
    assert np.array_equal(reconstruct(c), R.mul(reconstruct(a), reconstruct(b)))


def test_hundred_triples_five_parties(rng):
    bundle = deal(5, 100, rng)
    _, a, b, c = _triples(bundle, 100)
    assert np.array_equal(reconstruct(c), R.mul(reconstruct(a), reconstruct(b)))
    for shares in (a, b, c):
        assert np.array_equal(reconstruct_mac(shares), R.mul(bundle.alpha, reconstruct(shares)))


def test_key_shares_sum_to_odd_alpha(rng):
    bundle = deal(4, 0, rng)
    total = R.sum(np.array([k.alpha_i for k in bundle.mac_key_shares], dtype=np.uint64))
    assert int(total) == int(bundle.alpha)
    assert int(bundle.alpha) % 2 == 1


def test_empty_pool_is_valid(rng):
    bundle = deal(2, 0, rng)
    assert bundle.view(1).triples_remaining == 0
    with pytest.raises(TriplesExhausted):
        bundle.view(1).take_triple()


def test_pool_of_one(rng):
    view = deal(2, 1, rng).view(1)
    view.take_triple()
    with pytest.raises(TriplesExhausted):
        view.take_triple()


def test_lockstep_parties_get_same_index(rng):
    bundle = deal(3, 10, rng)
    for _ in range(10):
        idx = {int(v.take_triple().indices[0]) for v in bundle.views}
        assert len(idx) == 1


def test_sequential_takes_are_distinct(rng):
    view = deal(2, 1000, rng).view(2)
    seen = [int(view.take_triple().indices[0]) for _ in range(1000)]
    assert len(set(seen)) == 1000


def test_masks_owner_knows_clear_value(rng):
    bundle = deal(3, 0, rng, num_masks=[5, 6, 7])
    for owner in (1, 2, 3):
        slices = [v.take_masks(owner, 5) for v in bundle.views]
        clear = slices[owner - 1].clear
        assert all(s.clear is None for j, s in enumerate(slices, 1) if j != owner)
        assert np.array_equal(reconstruct([s.shares for s in slices]), clear)
        assert np.array_equal(reconstruct_mac([s.shares for s in slices]), R.mul(bundle.alpha, clear))


def test_triple_shares_look_uniform(rng):
    from scipy import stats

    bundle = deal(3, 5000, rng)
    a1 = bundle.view(1).take_triples(5000).c.value.astype(np.float64) / 2**64
    assert stats.kstest(a1, "uniform").pvalue > 0.01


def test_file_roundtrip(tmp_path, rng):
    bundle = deal(3, 17, rng, num_masks=[3, 4, 5])
    for view in bundle.views:
        path = tmp_path / f"p{view.party_id}.prep"
        write_preprocessing(path, view)
        raw = path.read_bytes()
        assert raw[:4] == b"VTLP" and raw[4] == 1
        back = read_preprocessing(path)
        assert back.party_id == view.party_id and back.n == 3 and back.ring == R
        assert int(back.alpha_share) == int(view.alpha_share)
        assert back.check_seed == view.check_seed
        for x, y in zip(back.triples, view.triples):
            assert np.array_equal(x.value, y.value) and np.array_equal(x.mac, y.mac)
        assert np.array_equal(back.own_masks, view.own_masks)


def test_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.prep"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        read_preprocessing(path)


def test_streaming_dealer_is_consistent():
    dealer = StreamingDealer(3, seed=5, block_size=8)
    views = dealer.views()
    for count in (3, 11, 1, 20):
        slices = [v.take_triples(count) for v in views]
        assert len({tuple(s.indices) for s in slices}) == 1
        c = reconstruct([s.c for s in slices])
        ab = R.mul(reconstruct([s.a for s in slices]), reconstruct([s.b for s in slices]))
        assert np.array_equal(c, ab)
        assert np.array_equal(reconstruct_mac([s.c for s in slices]), R.mul(dealer.alpha, c))


def test_streaming_dealer_is_deterministic():
    v1 = StreamingDealer(2, seed=9, block_size=16).view(1)
    v2 = StreamingDealer(2, seed=9, block_size=16).view(1)
    assert np.array_equal(v1.take_triples(40).a.value, v2.take_triples(40).a.value)
    assert np.array_equal(v1.take_masks(1, 40).clear, v2.take_masks(1, 40).clear)


def test_streaming_capacity_is_enforced():
    view = StreamingDealer(2, seed=1, block_size=8, capacity=Demand(4, [2, 2])).view(1)
    view.take_triples(4)
    with pytest.raises(TriplesExhausted):
        view.take_triples(1)
    view.take_masks(2, 2)
    with pytest.raises(TriplesExhausted):
        view.take_masks(2, 1)


def test_demand_margin():
    d = Demand(100, [10, 20]).with_margin(0.1)
    assert d.triples == 110 and d.masks == [11, 22]
    assert (Demand(1, [1]) + Demand(2, [2, 3])).masks == [3, 3]

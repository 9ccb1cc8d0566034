import numpy as np
import pytest

from quap import _kernels
from quap.data import Dataset
from quap.errors import BudgetError, ProtocolError
from quap.ledger import QueryLedger, audit_neighborhoods, record_query


def test_single_query_budget():
    led = QueryLedger(1)
    x = np.zeros(4)
    record_query(led, 7, x, x)
    with pytest.raises(BudgetError) as info:
        record_query(led, 7, x, x)
    assert info.value.image_id == 7
    assert led.counts[7] == 1 and led.violations == 1


def test_two_query_budget_accepts_plus_minus_pair():
    led = QueryLedger(2, epsilon=0.3)
    base = np.full(4, 0.5)
    z = np.array([1.0, -1.0, 0.0, 0.5])
    record_query(led, 3, base + 5e-4 * z, base)
    record_query(led, 3, base - 5e-4 * z, base)
    with pytest.raises(BudgetError):
        record_query(led, 3, base, base)
    assert led.summary().max_per_image == 2


def test_distance_beyond_epsilon_is_a_protocol_error():
    led = QueryLedger(2, epsilon=0.1)
    with pytest.raises(ProtocolError) as info:
        record_query(led, 5, np.array([0.2]), np.array([0.0]))
    assert info.value.image_id == 5
    assert len(led) == 0


def test_batches_are_atomic():
    led = QueryLedger(1)
    led.record_batch([1], [0.0])
    with pytest.raises(BudgetError):
        led.record_batch([2, 3, 1], [0.0, 0.0, 0.0])
    assert len(led) == 1 and set(led.counts) == {1}
    with pytest.raises(BudgetError):
        led.record_batch([4, 4], [0.0, 0.0])
    assert 4 not in led.counts


def test_summary_and_jsonl_round_trip(tmp_path):
    led = QueryLedger(2, epsilon=0.3)
    led.record_batch([1, 2, 1], [0.1, 0.2, 0.3])
    s = led.summary()
    assert (s.total_queries, s.distinct_images, s.max_per_image, s.min_per_image) == (3, 2, 2, 1)
    assert s.count_histogram == {1: 1, 2: 1} and s.clean
    led.save(tmp_path / "l.jsonl")
    back = QueryLedger.load(tmp_path / "l.jsonl")
    assert back.summary() == s
    np.testing.assert_array_equal(back.entries[0], [1, 2, 1])


def test_audit_flags_identical_images():
    img = np.full((1, 3, 3, 1), 0.4)
    ds = Dataset(np.concatenate([img, img, img + 0.5]), ids=[10, 11, 12])
    led = QueryLedger(1)
    led.record_batch([10, 11, 12], [0, 0, 0])
    audit = audit_neighborhoods(led, ds, 0.1)
    assert audit.min_distance == 0.0 and audit.closest_pair == (10, 11)
    assert audit.flagged_pairs == [(10, 11)] and not audit.clean


def test_audit_is_clean_for_separated_images():
    ds = Dataset(np.arange(5, dtype=float).reshape(5, 1, 1, 1) / 4)
    led = QueryLedger(1)
    led.record_batch(np.arange(5), np.zeros(5))
    audit = audit_neighborhoods(led, ds, 0.1)
    assert audit.clean and audit.min_distance == pytest.approx(0.25)


def test_audit_only_looks_at_queried_bases():
    ds = Dataset(np.zeros((3, 1, 1, 1)))
    led = QueryLedger(1)
    led.record_batch([0], [0.0])
    assert audit_neighborhoods(led, ds, 0.3).clean


def test_audit_matches_brute_force_on_mnist_sample(mnist):
    train, _ = mnist
    sample = train.subset(np.arange(1000))
    led = QueryLedger(1)
    led.record_batch(sample.ids, np.zeros(1000))
    audit = audit_neighborhoods(led, sample, 0.3, capacity=10**6)
    x = sample.images.reshape(1000, -1).astype(np.float64)
    best, pairs = np.inf, []
    for i in range(1000):
        d = np.abs(x[i + 1 :] - x[i]).max(axis=1)
        best = min(best, d.min(initial=np.inf))
        pairs += [(i, i + 1 + int(j)) for j in np.flatnonzero(d < 0.6)]
    assert audit.min_distance == best
    assert audit.flagged_total == len(pairs)
    assert sorted(audit.flagged_pairs) == sorted(pairs)


def test_capacity_limits_stored_pairs_not_the_count():
    x = np.zeros((4, 2))
    _, _, _, pairs, total = _kernels.pairwise_linf(x, 1.0, capacity=2)
    assert total == 6 and len(pairs) == 2


def test_loading_counts_violations_instead_of_raising(tmp_path):
    (tmp_path / "l.jsonl").write_text(
        '{"budget": 2, "epsilon": 0.1}\n'
        + "".join(f'{{"base_id": 4, "query_index": {k}, "distance": 0.0}}\n' for k in range(3))
    )
    s = QueryLedger.load(tmp_path / "l.jsonl").summary()
    assert s.violations == 1 and s.max_per_image == 2 and not s.clean

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quap.errors import DomainError
from quap.losses import (
    AttackObjective,
    Mode,
    batch_loss,
    cross_entropy,
    cross_entropy_rows,
    targeted_loss,
    targeted_loss_rows,
)

logit_vectors = st.integers(2, 8).flatmap(
    lambda k: arrays(np.float64, k, elements=st.floats(-30, 30))
)


def decimal_cross_entropy(logits, label):
    getcontext().prec = 50
    total = sum(Decimal(float(v)).exp() for v in logits)
    return float(total.ln() - Decimal(float(logits[label])))


def test_uniform_logits_give_log_k():
    assert cross_entropy(np.zeros(4), 2) == pytest.approx(math.log(4), abs=1e-15)
    assert cross_entropy(np.zeros(2), 0) == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_against_high_precision():
    value = cross_entropy(np.array([1.0, 2.0, 3.0]), 2)
    assert value == pytest.approx(0.407606, abs=1e-6)
    assert value == pytest.approx(decimal_cross_entropy([1, 2, 3], 2), rel=1e-14)


def test_cross_entropy_is_stable_for_huge_logits():
    assert cross_entropy(np.array([1000.0, 0.0]), 0) == pytest.approx(0.0, abs=1e-300)
    assert cross_entropy(np.array([1000.0, 0.0]), 1) == pytest.approx(1000.0)


def test_label_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(np.zeros(3), 3)


@given(logit_vectors, st.floats(-100, 100), st.data())
def test_cross_entropy_shift_invariant_and_non_negative(logits, c, data):
    label = data.draw(st.integers(0, len(logits) - 1))
    a = cross_entropy(logits, label)
    b = cross_entropy(logits + c, label)
    assert a >= 0
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_targeted_examples():
    assert targeted_loss(np.array([5.0, 5.0]), 0) == 0.0
    assert targeted_loss(np.array([1.0, 2.0, 4.0]), 0) == -3.0
    assert targeted_loss(np.array([3.0, 1.0, 0.0]), 0) == 2.0


def test_targeted_needs_a_competitor():
    with pytest.raises(DomainError):
        targeted_loss(np.array([1.0]), 0)


@given(logit_vectors, st.floats(-100, 100), st.data())
def test_targeted_shift_invariant(logits, c, data):
    t = data.draw(st.integers(0, len(logits) - 1))
    assert targeted_loss(logits + c, t) == pytest.approx(targeted_loss(logits, t), abs=1e-9)


@given(st.integers(2, 6).flatmap(lambda k: arrays(np.float64, k, elements=st.integers(-3, 3).map(float))), st.data())
def test_positive_targeted_loss_iff_target_is_argmax(logits, data):
    # small integer logits make ties common; argmax breaks them toward the lower index
    t = data.draw(st.integers(0, len(logits) - 1))
    assert (targeted_loss(logits, t) > 0) == (int(np.argmax(logits)) == t and np.sum(logits == logits[t]) == 1)


def test_rows_match_scalar_versions(rng):
    logits = rng.normal(size=(10, 5))
    labels = rng.integers(0, 5, 10)
    np.testing.assert_allclose(
        cross_entropy_rows(logits, labels), [cross_entropy(l, y) for l, y in zip(logits, labels)]
    )
    np.testing.assert_allclose(targeted_loss_rows(logits, 3), [targeted_loss(l, 3) for l in logits])


def test_batch_loss_means(rng):
    logits = rng.normal(size=(10, 4))
    labels = rng.integers(0, 4, 10)
    obj = AttackObjective.untargeted()
    assert batch_loss(logits[:1], labels[:1], obj) == cross_entropy(logits[0], labels[0])
    a, b = (cross_entropy(logits[i], labels[i]) for i in (0, 1))
    assert batch_loss(logits[:2], labels[:2], obj) == pytest.approx((a + b) / 2, rel=1e-15)
    total = math.fsum(decimal_cross_entropy(l, y) for l, y in zip(logits, labels)) / 10
    assert batch_loss(logits, labels, obj) == pytest.approx(total, rel=1e-12)


def test_targeted_batch_ignores_labels(rng):
    logits = rng.normal(size=(6, 4))
    obj = AttackObjective.targeted(1)
    assert batch_loss(logits, None, obj) == batch_loss(logits, np.zeros(6, int), obj)


def test_empty_batch_is_a_domain_error():
    with pytest.raises(DomainError):
        batch_loss(np.zeros((0, 3)), np.zeros(0, int), AttackObjective.untargeted())


def test_objective_validation():
    assert AttackObjective.untargeted().needs_labels
    assert not AttackObjective.targeted(2).needs_labels
    assert AttackObjective("targeted", 1).mode is Mode.TARGETED
    with pytest.raises(DomainError):
        AttackObjective(Mode.TARGETED)
    with pytest.raises(DomainError):
        AttackObjective(Mode.UNTARGETED, 3)

import math

import numpy as np
import pytest

from ecatch.autodiff import Tensor
from ecatch.clustering import PseudoEvent
from ecatch.objective import (
    CETerm,
    ObjectiveError,
    ce_terms,
    class_weights,
    classifier_probability,
    mine_hard_examples,
    post_probabilities,
    tc_terms,
    total_loss,
)
from ecatch.params import ModelParams
from ecatch.trend import TrendState, run_lstm, trend_features
from ecatch.windows import segment_all

from conftest import DAY, make_dataset


def state(vec):
    v = np.asarray(vec, dtype=float)[None, :]
    return TrendState(Tensor(v), Tensor(np.zeros_like(v)))


# -- class weights ------------------------------------------------------------
def test_balanced_weights_are_one():
    labels = np.array([0] * 50 + [1] * 50)
    w0, w1 = class_weights(labels, range(100), np.ones(100, dtype=bool), 1e-8)
    assert w0 == pytest.approx(1.0)
    assert w1 == pytest.approx(1.0)


def test_skewed_weights_formula():
    labels = np.array([0] * 80 + [1] * 20)
    w0, w1 = class_weights(labels, range(100), np.ones(100, dtype=bool), 1e-12)
    assert w0 == pytest.approx(0.625)
    assert w1 == pytest.approx(2.5)


def test_empty_class_is_smoothed():
    labels = np.zeros(10, dtype=int)
    w0, w1 = class_weights(labels, range(10), np.ones(10, dtype=bool), 1.0)
    assert w1 == pytest.approx(5.0)  # nbar with an empty positive class
    assert math.isfinite(w0)


def test_weights_count_training_posts_only():
    labels = np.array([0, 0, 1, 1])
    train = np.array([True, True, True, False])
    w0, w1 = class_weights(labels, range(4), train, 1e-12)
    assert (w0, w1) == (pytest.approx(0.75), pytest.approx(1.5))


def test_epsilon_must_be_positive():
    with pytest.raises(ObjectiveError):
        class_weights(np.array([0, 1]), range(2), np.ones(2, dtype=bool), 0.0)


# -- probabilities -------------------------------------------------------------
def pipeline(rng, n=6, d=4):
    ds = make_dataset(
        rng.normal(size=(n, 3)),
        labels=rng.integers(0, 2, size=n),
        timestamps=np.sort(rng.integers(0, 6 * DAY, size=n)),
    )
    events = [PseudoEvent(0, tuple(range(n // 2))),
              PseudoEvent(1, tuple(range(n // 2, n)))]
    windows = segment_all(events, ds, 3 * DAY, DAY)
    params = ModelParams.build(d, 2, 3, 2, seed=1)
    states = {}
    for ev in events:
        aggs = [Tensor(rng.normal(size=(1, d))) for _ in windows[ev.event_id].windows]
        states[ev.event_id] = run_lstm(trend_features(aggs, 0.5), params)
    return ds, events, windows, params, states


def test_zero_classifier_gives_half(rng):
    ds, events, windows, params, states = pipeline(rng)
    params["clf.W_c"].data[...] = 0.0
    params["clf.b_c"].data[...] = 0.0
    p_post, p_event, _ = post_probabilities(events, windows, states, params, ds.n)
    np.testing.assert_allclose(p_post, 0.5)
    assert all(v == 0.5 for v in p_event.values())


def test_large_bias_saturates(rng):
    ds, events, windows, params, states = pipeline(rng)
    params["clf.W_c"].data[...] = 0.0
    params["clf.b_c"].data[...] = 10.0
    p_post, _, _ = post_probabilities(events, windows, states, params, ds.n)
    np.testing.assert_allclose(p_post, 1.0 / (1.0 + np.exp(-10.0)))
    assert p_post[0] == pytest.approx(0.99995, abs=5e-6)


def test_single_window_event_shares_probability(rng):
    ds = make_dataset(rng.normal(size=(3, 3)), timestamps=[0, 10, 20])
    events = [PseudoEvent(0, (0, 1, 2))]
    windows = segment_all(events, ds, DAY, DAY)
    assert len(windows[0].windows) == 1
    params = ModelParams.build(4, 2, 3, 2, seed=2)
    states = {0: run_lstm(trend_features([Tensor(rng.normal(size=(1, 4)))], 0.5),
                          params)}
    p_post, p_event, _ = post_probabilities(events, windows, states, params, ds.n)
    np.testing.assert_allclose(p_post, p_event[0])


def test_readout_uses_last_covering_window(rng):
    ds = make_dataset(rng.normal(size=(3, 3)), timestamps=[0, DAY, 2 * DAY])
    events = [PseudoEvent(0, (0, 1, 2))]
    windows = segment_all(events, ds, 2 * DAY, DAY)
    last = windows[0].last_window_of()
    # post 1 appears in windows 1 and 2; its probability must come from 2
    assert last[1] == 2
    params = ModelParams.build(4, 2, 3, 2, seed=3)
    aggs = [Tensor(rng.normal(size=(1, 4))) for _ in windows[0].windows]
    states = {0: run_lstm(trend_features(aggs, 0.5), params)}
    p_post, _, _ = post_probabilities(events, windows, states, params, ds.n)
    expected = float(classifier_probability(states[0][last[1] - 1], params).data)
    assert p_post[1] == pytest.approx(expected)


# -- cross-entropy and mining --------------------------------------------------
def ce_setup(rng, labels, probs):
    """One event whose posts each live in their own window with pinned p."""
    n = len(labels)
    ds = make_dataset(rng.normal(size=(n, 3)), labels=labels,
                      timestamps=[3 * DAY * i for i in range(n)])
    events = [PseudoEvent(0, tuple(range(n)))]
    windows = segment_all(events, ds, DAY, DAY)
    assert len(windows[0].windows) == n
    params = ModelParams.build(2, 1, 3, 2, zero=True)
    states = {}
    logits = np.log(np.asarray(probs) / (1.0 - np.asarray(probs)))
    params["clf.W_c"].data[...] = np.array([[1.0, 0.0]])
    # hidden values are bounded by tanh, so steer via handcrafted states
    states[0] = [state([l, 0.0]) for l in logits]
    _, _, nodes = post_probabilities(events, windows, states, params, ds.n)
    return ds, events, nodes


def test_perfect_predictions_near_zero_loss(rng):
    labels = np.array([1, 0, 1])
    eps = 1e-12
    # logits for p = 1-1e-12 overflow float formatting; use hand states
    ds = make_dataset(rng.normal(size=(3, 3)), labels=labels,
                      timestamps=[0, 3 * DAY, 6 * DAY])
    events = [PseudoEvent(0, (0, 1, 2))]
    windows = segment_all(events, ds, DAY, DAY)
    params = ModelParams.build(2, 1, 3, 2, zero=True)
    params["clf.W_c"].data[...] = np.array([[60.0, 0.0]])
    states = {0: [state([1.0 if y == 1 else -1.0, 0.0]) for y in labels]}
    _, _, nodes = post_probabilities(events, windows, states, params, ds.n)
    terms, _ = ce_terms(events, nodes, labels, np.ones(3, dtype=bool),
                        epsilon=1.0, adaptive=False)
    total = sum(t.value for t in terms)
    assert total == pytest.approx(0.0, abs=1e-9 * 3)


def test_single_post_halfway_is_ln2(rng):
    labels = np.array([1])
    ds, events, nodes = ce_setup(rng, labels, [0.5])
    terms, _ = ce_terms(events, nodes, labels, np.ones(1, dtype=bool),
                        epsilon=1.0, adaptive=False)
    assert terms[0].value == pytest.approx(math.log(2.0))


def test_mining_keeps_top_half():
    terms = [CETerm(i, 0, v, Tensor(np.array([[v]])))
             for i, v in enumerate([0.1, 0.9, 0.2, 0.8])]
    kept = mine_hard_examples(terms, 0.5)
    assert sorted(t.post_index for t in kept) == [1, 3]
    assert sum(t.value for t in kept) == pytest.approx(1.7)


def test_mining_full_fraction_is_identity():
    terms = [CETerm(i, 0, float(i), Tensor(np.array([[1.0]]))) for i in range(4)]
    assert mine_hard_examples(terms, 1.0) == terms


def test_mining_tie_break_prefers_low_index():
    terms = [CETerm(i, 0, 0.5, Tensor(np.array([[1.0]]))) for i in range(4)]
    kept = mine_hard_examples(terms, 0.5)
    assert [t.post_index for t in kept] == [0, 1]


def test_mining_fraction_validation():
    with pytest.raises(ObjectiveError):
        mine_hard_examples([], 0.0)
    with pytest.raises(ObjectiveError):
        mine_hard_examples([], 1.5)


def test_ce_skips_non_training_posts(rng):
    labels = np.array([1, 0, 1])
    ds, events, nodes = ce_setup(rng, labels, [0.3, 0.4, 0.9])
    train = np.array([True, False, True])
    terms, _ = ce_terms(events, nodes, labels, train, epsilon=1.0, adaptive=False)
    assert sorted(t.post_index for t in terms) == [0, 2]


def test_ce_monotone_toward_label(rng):
    labels = np.array([1])
    for p_lo, p_hi in ((0.3, 0.6), (0.6, 0.9)):
        _, events, nodes_lo = ce_setup(rng, labels, [p_lo])
        terms_lo, _ = ce_terms(events, nodes_lo, labels, np.ones(1, dtype=bool),
                               epsilon=1.0, adaptive=False)
        _, _, nodes_hi = ce_setup(rng, labels, [p_hi])
        terms_hi, _ = ce_terms(events, nodes_hi, labels, np.ones(1, dtype=bool),
                               epsilon=1.0, adaptive=False)
        assert terms_hi[0].value < terms_lo[0].value


def test_adaptive_terms_are_reweighted_plain_terms(rng):
    labels = np.array([1, 0, 0])
    ds, events, nodes = ce_setup(rng, labels, [0.4, 0.3, 0.8])
    t1, w1 = ce_terms(events, nodes, labels, np.ones(3, dtype=bool),
                      epsilon=1e-9, adaptive=True)
    t0, _ = ce_terms(events, nodes, labels, np.ones(3, dtype=bool),
                     epsilon=1e-9, adaptive=False)
    w = w1[0]
    assert w[0] == pytest.approx(0.75)
    assert w[1] == pytest.approx(1.5)
    by_post = {t.post_index: t.value for t in t0}
    for term in t1:
        expected = by_post[term.post_index] * w[labels[term.post_index]]
        assert term.value == pytest.approx(expected)


# -- temporal consistency --------------------------------------------------------
def test_tc_constant_sequence_is_zero():
    total = tc_terms([state([1.0, 2.0]), state([1.0, 2.0]), state([1.0, 2.0])])
    assert total is None or float(total.data) == pytest.approx(0.0)


def test_tc_colinear_growth():
    total = tc_terms([state([1.0, 0.0]), state([2.0, 0.0])])
    assert float(total.data) == pytest.approx(1.0)


def test_tc_anti_aligned_is_negative():
    total = tc_terms([state([1.0, 0.0]), state([-1.0, 0.0])])
    assert float(total.data) == pytest.approx(-4.0)


def test_tc_zero_norm_guard():
    total = tc_terms([state([0.0, 0.0]), state([1.0, 0.0])])
    assert total is None


def test_tc_clamp_drops_negative_similarity():
    states = [state([1.0, 0.0]), state([-1.0, 0.0]), state([-2.0, 0.0])]
    clamped = tc_terms(states, clamp_negative_sim=True)
    # only the colinear (-1,0)->(-2,0) pair survives: |d|^2=1, sim=1
    assert float(clamped.data) == pytest.approx(1.0)


def test_tc_sum_over_multiple_steps():
    states = [state([1.0, 0.0]), state([2.0, 0.0]), state([2.0, 1.0])]
    total = tc_terms(states)
    # term2: |d|^2=1, sim=1; term3: |d|^2=1, sim=4/(2*sqrt5)
    expected = 1.0 + 1.0 * (4.0 / (2.0 * math.sqrt(5.0)))
    assert float(total.data) == pytest.approx(expected)


# -- total ------------------------------------------------------------------------
def test_total_loss_arithmetic():
    params = ModelParams.build(2, 1, 2, 2, zero=True)
    params["clf.W_c"].data[...] = np.array([[1.0, 1.0]])  # l2 = 2
    total, reg = total_loss(ce=1.0, tc=-4.0, params=params,
                            lambda_tc=0.1, lambda_reg=0.01)
    assert reg == pytest.approx(2.0)
    assert total == pytest.approx(0.62)


def test_total_loss_zero_multipliers():
    params = ModelParams.build(2, 1, 2, 2, seed=0)
    total, _ = total_loss(3.25, 100.0, params, 0.0, 0.0)
    assert total == pytest.approx(3.25)


def test_total_loss_rejects_negative_multipliers():
    params = ModelParams.build(2, 1, 2, 2, zero=True)
    with pytest.raises(ObjectiveError):
        total_loss(1.0, 1.0, params, -0.1, 0.0)

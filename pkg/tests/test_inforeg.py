import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from inforeg_lab.errors import ConfigError, ContractError
from inforeg_lab.fisher import FisherHistory
from inforeg_lab.inforeg import (RegulationConfig, adaptive_alpha, decide, performance_gap, regulation_grad,
                                 score_from_logits)

scores_st = st.lists(st.floats(-50, 0), min_size=2, max_size=5)


@given(scores_st, st.floats(-10, 10))
@settings(max_examples=200, deadline=None)
def test_gap_shift_invariant(scores, c):
    # rounding in the shift can break near-ties, so require separated scores
    assume(np.all(np.diff(np.sort(scores)) > 1e-6))
    d1, c1 = performance_gap(scores)
    d2, c2 = performance_gap([s + c for s in scores])
    np.testing.assert_allclose(d1, d2, atol=1e-9)
    np.testing.assert_array_equal(c1, c2)


@given(scores_st)
@settings(max_examples=200, deadline=None)
def test_gap_properties(scores):
    d, c = performance_gap(scores)
    assert np.all(d >= 0)
    weakest = int(np.argmin(scores))
    assert d[weakest] == 0 and c[weakest] == 0
    for m, s in enumerate(scores):
        lower = [x for x in scores if x < s]
        assert c[m] == len(lower)
        assert d[m] == pytest.approx(np.mean([s - x for x in lower]) if lower else 0.0, abs=1e-9)


def test_gap_ties_do_not_count():
    d, c = performance_gap([-1.0, -1.0, -2.0])
    assert c.tolist() == [1, 1, 0]
    np.testing.assert_allclose(d, [1.0, 1.0, 0.0])


@given(d1=st.floats(0, 50), d2=st.floats(0, 50), beta=st.floats(0.01, 5))
@settings(max_examples=200, deadline=None)
def test_alpha_monotone_and_bounded(d1, d2, beta):
    a1, a2 = adaptive_alpha(d1, beta), adaptive_alpha(d2, beta)
    assert 1.0 <= a1 <= math.exp(beta) * (1 + 1e-15)
    if d1 < d2:
        assert a1 <= a2


def test_alpha_at_zero_and_sup():
    assert adaptive_alpha(0.0, 0.9) == 1.0
    assert adaptive_alpha(1e3, 0.9) == pytest.approx(math.exp(0.9), abs=1e-9)


def test_regulation_grad_matches_finite_differences(rng):
    w, s = rng.normal(size=6), rng.normal(size=6)
    pen, g = regulation_grad(w, s, 1.7)
    assert pen == pytest.approx(0.85 * np.sum((w - s) ** 2))
    fd = np.array([(regulation_grad(w + 1e-6 * e, s, 1.7)[0] - regulation_grad(w - 1e-6 * e, s, 1.7)[0]) / 2e-6
                   for e in np.eye(6)])
    np.testing.assert_allclose(g, fd, rtol=1e-6)
    assert regulation_grad(s, s, 2.0)[0] == 0.0
    with pytest.raises(ContractError):
        regulation_grad(w, s[:5], 1.0)


def test_score_is_negative_cross_entropy():
    logits = np.array([[2.0, 0.0], [0.0, 1.0]])
    y = np.array([0, 1])
    ce = -np.mean([2 - np.log(np.exp(2) + 1), 1 - np.log(1 + np.e)])
    assert score_from_logits(logits, y) == pytest.approx(-ce)


def history(rows):
    h = FisherHistory(len(rows[0]))
    for r in rows:
        h.append(r)
    return h


def test_decide_gate():
    cfg = RegulationConfig(0.9, 0.04)
    h = history([[1.0, 1.0], [2.0, 2.0]])  # both modalities in window at t=2
    dec = decide(h, [-0.1, -1.0], cfg, 2)
    assert dec.active == [True, False]  # weakest never regulated
    assert dec.alphas[0] == pytest.approx(math.exp(0.9 * math.tanh(0.9)))
    assert decide(history([[2.0, 2.0], [2.0, 2.0]]), [-0.1, -1.0], cfg, 2).active == [False, False]
    assert decide(None, [-0.1, -1.0], cfg, 1).active == [False, False]


@given(st.lists(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=2), min_size=2, max_size=6),
       st.lists(st.floats(-5, 0), min_size=2, max_size=2),
       st.floats(1e-3, 1.0))
@settings(max_examples=200, deadline=None)
def test_active_implies_gate(rows, scores, K):
    cfg = RegulationConfig(0.9, K)
    h = history(rows)
    t = h.epochs
    dec = decide(h, scores, cfg, t)
    for m in range(2):
        if dec.active[m]:
            assert t >= 2 and dec.in_window[m] and dec.deltas[m] > 0


def test_infinite_K_never_activates():
    dec = decide(history([[1e-9, 1e-9], [1e9, 1e9]]), [0.0, -5.0], RegulationConfig(0.9, math.inf), 2)
    assert dec.active == [False, False]


@pytest.mark.parametrize("kw", [dict(beta=0.0), dict(K=0.0), dict(K=-1.0), dict(warmup_epochs=1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RegulationConfig(**kw)

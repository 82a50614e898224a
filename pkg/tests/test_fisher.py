import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inforeg_lab.errors import ContractError, InputError, NotReadyError
from inforeg_lab.fisher import (EpochTraceAccumulator, FisherHistory, batch_cosine_matrix, finalize_epoch,
                                mean_offdiag_abs, prime_window, record, trace_gap, window_ratio,
                                write_traces_csv)


def fake_grads(*vecs):
    flat = [np.asarray(v, dtype=float) for v in vecs]
    return SimpleNamespace(flat=flat, sq_norms=[float(v @ v) for v in flat])


def test_trace_is_mean_squared_norm():
    acc = EpochTraceAccumulator(2)
    record(acc, fake_grads([3.0, 4.0], [1.0, 0.0]))
    record(acc, fake_grads([0.0, 1.0], [0.0, 2.0]))
    assert finalize_epoch(acc) == [13.0, 2.5]


def test_finalize_without_batches():
    with pytest.raises(ContractError):
        EpochTraceAccumulator(2).finalize()


def test_window_not_ready_before_two_epochs():
    h = FisherHistory(1)
    h.append([1.0])
    with pytest.raises(NotReadyError):
        prime_window(h, 0, 0.04)


def test_window_detects_rise():
    h = FisherHistory(2)
    for v in ([1.0, 1.0], [2.0, 1.01], [2.05, 1.02]):
        h.append(v)
    assert prime_window(h, 0, 0.04, t=2) and not prime_window(h, 1, 0.04, t=2)
    assert not prime_window(h, 0, 0.04, t=3)  # (2.05-2)/2.05 < 0.04


def test_zero_denominator_is_no_window():
    assert window_ratio(1.0, 0.0) == -math.inf


@given(a=st.floats(1e-6, 1e6), b=st.floats(1e-6, 1e6), c=st.floats(1e-3, 1e3), K=st.floats(1e-4, 1.0))
@settings(max_examples=200, deadline=None)
def test_window_is_scale_free(a, b, c, K):
    h1, h2 = FisherHistory(1), FisherHistory(1)
    h1.append([a]), h1.append([b])
    h2.append([a * c]), h2.append([b * c])
    r1, r2 = window_ratio(a, b), window_ratio(a * c, b * c)
    assert r1 == pytest.approx(r2, rel=1e-9, abs=1e-12)
    if abs(r1 - K) > 1e-9:
        assert prime_window(h1, 0, K) == prime_window(h2, 0, K)


@given(K=st.floats(1e-3, 10.0))
@settings(max_examples=50, deadline=None)
def test_flat_or_falling_trace_never_windows(K):
    h = FisherHistory(1)
    h.append([2.0]), h.append([2.0]), h.append([1.0])
    assert not prime_window(h, 0, K, t=2) and not prime_window(h, 0, K, t=3)


def test_cosine_matrix(rng):
    g = [rng.normal(size=5) for _ in range(3)] + [np.zeros(5)]
    C = batch_cosine_matrix(g)
    np.testing.assert_allclose(np.diag(C)[:3], 1.0)
    assert np.isnan(C[3]).all() and np.isnan(C[:, 3]).all()
    np.testing.assert_allclose(C[:3, :3], C[:3, :3].T)
    assert C[0, 1] == pytest.approx(g[0] @ g[1] / np.linalg.norm(g[0]) / np.linalg.norm(g[1]))
    assert 0 <= mean_offdiag_abs(C) <= 1
    with pytest.raises(InputError):
        batch_cosine_matrix(g[:1])


def test_trace_gap_and_csv(tmp_path):
    h = FisherHistory(2)
    h.append([1.0, 0.5], None)
    h.append([3.0, 1.0], None)
    h.append([4.0, 1.5], [True, False])
    np.testing.assert_array_equal(trace_gap(h, 0, 1), [0.5, 2.0, 2.5])
    write_traces_csv(h, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,modality,value,window" and len(lines) == 7
    assert lines[-2] == "2,m0,4.0,1"

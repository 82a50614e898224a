import math

import numpy as np
import pytest
from scipy import integrate

from inforeg_lab.diagnostics import (descent_check, expected_abs_cosine, orthogonality_mc, penalty_equivalence,
                                     regulation_bound)
from inforeg_lab.errors import ContractError, InputError
from inforeg_lab.inforeg import RegulationConfig
from inforeg_lab.numerics import make_rng
from inforeg_lab.trainer import TrainConfig, train


@pytest.mark.parametrize("n", [2, 3, 10, 100])
def test_expected_abs_cosine_matches_quadrature(n):
    # density of cos on S^{n-1} is proportional to (1 - x^2)^((n-3)/2)
    w = lambda x: (1 - x * x) ** ((n - 3) / 2)
    num = integrate.quad(lambda x: abs(x) * w(x), -1, 1, points=[0])[0]
    den = integrate.quad(w, -1, 1)[0]
    assert expected_abs_cosine(n) == pytest.approx(num / den, rel=1e-6)
    assert expected_abs_cosine(2) == pytest.approx(2 / math.pi)


def test_mc_tracks_exact_expectation():
    for n in (2, 50, 2000):
        rep = orthogonality_mc(n, 4000, make_rng(0, "mc"))
        assert abs(rep.mean_abs_cos - rep.reference_exact) < 4 * 0.6 / math.sqrt(4000)


def test_identical_pairs_are_excluded():
    rep = orthogonality_mc(100, 50, make_rng(0, "mc"), inject_identical=5)
    assert rep.excluded_degenerate == 5 and rep.pairs == 45
    with pytest.raises(InputError):
        orthogonality_mc(1, 10, make_rng(0, "mc"))


@pytest.fixture(scope="module")
def logged_run():
    from conftest import small_specs
    from inforeg_lab.datagen import generate

    specs = small_specs()
    tr = generate(specs, 3, 90, make_rng(0, "data"))
    te = generate(specs, 3, 45, make_rng(0, "test_data"))
    c = TrainConfig("inforeg", epochs=6, batch_size=10, eta=0.1, hidden=(6,), seed=0,
                    regulation=RegulationConfig(0.9, 1e-6), log_gradients=True, log_descent=True)
    return train(c, tr, te)


@pytest.mark.parametrize("mode", ["shadow", "total"])
def test_penalty_identity_holds(logged_run, mode):
    rep = penalty_equivalence(logged_run.gradlog, mode)
    assert len(rep.records) == 6 * 9 * 2
    assert rep.max_identity_rel_err < 1e-9
    assert rep.max_telescoping_rel_err < 1e-9


def test_total_and_shadow_differ_once_regulated(logged_run):
    s = penalty_equivalence(logged_run.gradlog, "shadow")
    t = penalty_equivalence(logged_run.gradlog, "total")
    assert any(abs(a.exact - b.exact) > 0 for a, b in zip(s.records, t.records))


def test_equivalence_refuses_other_optimizers(logged_run):
    with pytest.raises(ContractError):
        penalty_equivalence(logged_run.gradlog, optimizer="adam")
    with pytest.raises(InputError):
        penalty_equivalence([])


def test_regulation_bounds(logged_run):
    rep = descent_check(logged_run.gradlog, logged_run.descent)
    assert rep.regulated > 0 and rep.bound_holds
    assert rep.max_bound_ratio <= 1 + 1e-9
    assert rep.descent_steps == 6 * 9 and 0 <= rep.descent_fraction <= 1


def test_bound_catches_violation(logged_run):
    bad = [dict(r) for r in logged_run.gradlog]
    for r in bad:
        if r["active"]:
            r["reg_grad_norm"] *= 10
    assert descent_check(bad).bound_violations > 0


def test_regulation_bound_is_triangle_inequality(rng):
    g = rng.normal(size=(7, 5))
    G = np.linalg.norm(g, axis=1).max()
    assert 2.0 * 0.1 * np.linalg.norm(g.sum(0)) <= regulation_bound(2.0, 0.1, 7, G)


def test_high_dimensional_pairs_mostly_below_threshold():
    rep = orthogonality_mc(10_000, 100, make_rng(1, "mc"))
    assert rep.mean_abs_cos < 0.02 and rep.q95_abs_cos < 0.03
    assert rep.reference_asymptotic == pytest.approx(0.008, abs=1e-4)


def test_mean_abs_cos_decreases_with_dimension():
    rng = make_rng(2, "mc")
    means = [orthogonality_mc(n, 10_000, rng).mean_abs_cos for n in (100, 1000, 10_000)]
    assert means[0] > means[1] > means[2]


def test_batch_gradients_nearly_orthogonal_in_high_dimension():
    from inforeg_lab.datagen import ModalitySpec, generate
    from inforeg_lab.fisher import batch_cosine_matrix, mean_offdiag_abs

    specs = [ModalitySpec(512, 8, 8.0, 1.0), ModalitySpec(512, 8, 6.0, 1.0)]
    tr = generate(specs, 4, 400, make_rng(0, "data"))
    te = generate(specs, 4, 100, make_rng(0, "test_data"))
    res = train(TrainConfig("joint", epochs=3, batch_size=5, eta=0.005, hidden=(32, 32), store_gradients=True),
                tr, te)
    assert res.params.encoder_size(0) >= 10_000
    for grads in res.stored_grads.values():
        assert mean_offdiag_abs(batch_cosine_matrix(grads)) < 0.1

"""Ensemble strategies: combination rules, weight fitting, fused representations."""
import numpy as np
import pytest

from l3ens import heads as H
from l3ens.embedding_store import unit_rows
from l3ens.ensemble import (
    EnsembleSpec,
    EnsembleWeights,
    build_fused_representation,
    ensemble_objective,
    fit_weights,
    naive_combine,
    project_simplex,
    train_fusion_ensemble,
    weighted_combine,
)
from l3ens.errors import EmptyMemberList, ShapeMismatch


# --- combination rules -------------------------------------------------------

def test_naive_combine_of_identical_inputs_is_bit_exact():
    p = np.random.default_rng(0).uniform(size=(6, 3))
    p /= p.sum(axis=1, keepdims=True)
    out = naive_combine([p, p.copy()])
    assert out.tobytes() == p.tobytes()


def test_naive_combine_two_members_is_exact_midpoint():
    a = np.array([0.0, 1.0, 0.25])
    b = np.array([1.0, 0.0, 0.75])
    assert np.array_equal(naive_combine([a, b]), np.array([0.5, 0.5, 0.5]))


def test_naive_combine_is_permutation_invariant():
    rng = np.random.default_rng(1)
    members = [rng.standard_normal(8) for _ in range(3)]
    a = naive_combine(members)
    b = naive_combine(members[::-1])
    assert np.allclose(a, b, atol=1e-15)


def test_naive_combine_keeps_probability_rows_normalized():
    rng = np.random.default_rng(2)
    members = []
    for _ in range(3):
        p = rng.uniform(size=(5, 4))
        members.append(p / p.sum(axis=1, keepdims=True))
    out = naive_combine(members)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert out.min() >= 0


def test_combine_shape_and_emptiness_errors():
    with pytest.raises(EmptyMemberList):
        naive_combine([])
    with pytest.raises(ShapeMismatch):
        naive_combine([np.zeros(3), np.zeros(4)])
    with pytest.raises(ShapeMismatch):
        weighted_combine([np.zeros(3), np.zeros(3)], EnsembleWeights(values=np.array([1.0])))


def test_weighted_combine_hand_example():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    out = weighted_combine([a, b], EnsembleWeights(values=np.array([0.3, 0.7])))
    assert np.allclose(out, [0.3, 0.7], atol=1e-15)


def test_simplex_weighted_combine_stays_in_member_hull():
    rng = np.random.default_rng(3)
    members = [rng.standard_normal(10) for _ in range(4)]
    w = project_simplex(rng.standard_normal(4))
    out = weighted_combine(members, EnsembleWeights(values=w))
    lo = np.min(members, axis=0)
    hi = np.max(members, axis=0)
    assert np.all(out >= lo - 1e-12)
    assert np.all(out <= hi + 1e-12)


# --- simplex projection ---------------------------------------------------------

def test_project_simplex_basics():
    out = project_simplex(np.array([0.2, 0.3, 0.5]))
    assert np.allclose(out, [0.2, 0.3, 0.5], atol=1e-12)  # already feasible
    out = project_simplex(np.array([10.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0], atol=1e-12)
    out = project_simplex(np.array([-5.0, -5.0]))
    assert np.allclose(out, [0.5, 0.5], atol=1e-12)


def test_project_simplex_satisfies_optimality_conditions():
    # projection w of v minimizes ||w - v||, so for any feasible z:
    # (z - w) . (w - v) >= 0 (variational inequality)
    rng = np.random.default_rng(4)
    for _ in range(50):
        m = int(rng.integers(1, 7))
        v = rng.standard_normal(m) * 3
        w = project_simplex(v)
        assert w.min() >= 0
        assert abs(w.sum() - 1.0) < 1e-9
        for _ in range(10):
            z = rng.dirichlet(np.ones(m))
            assert (z - w) @ (w - v) >= -1e-9


# --- weight fitting ---------------------------------------------------------------

def test_unconstrained_fit_matches_hand_solved_normal_equations():
    # P^T P = [[5, 2], [2, 2]], P^T y = [3.5, 2], det = 6 -> w = (0.5, 0.5)
    p1 = np.array([1.0, 0.0, 2.0])
    p2 = np.array([0.0, 1.0, 1.0])
    y = np.array([0.5, 0.5, 1.5])
    weights = fit_weights([p1, p2], y, task_kind=H.REGRESSION, constraint="unconstrained")
    assert np.allclose(weights.values, [0.5, 0.5], atol=1e-6)
    residual = weighted_combine([p1, p2], weights) - y
    assert float(residual @ residual) < 1e-10
    assert not weights.degenerate


def test_unconstrained_fit_is_classification_error():
    p = np.random.default_rng(0).uniform(size=(2, 4, 3))
    with pytest.raises(ValueError):
        fit_weights([p[0], p[1]], np.array([0, 1, 2, 0]), task_kind=H.CLASSIFICATION, constraint="unconstrained")


def test_single_member_gets_weight_one():
    w = fit_weights([np.array([1.0, 2.0])], np.array([1.0, 2.0]))
    assert np.array_equal(w.values, [1.0])
    assert not w.degenerate


def test_identical_members_fall_back_to_uniform(caplog):
    import logging

    p = np.array([0.1, 0.9, 0.4])
    with caplog.at_level(logging.WARNING):
        w = fit_weights([p, p.copy(), p.copy()], np.array([0.0, 1.0, 0.5]))
    assert w.degenerate
    assert np.allclose(w.values, [1 / 3] * 3, atol=1e-15)
    assert any("identical" in r.message for r in caplog.records)


def test_simplex_fit_never_loses_to_best_member_regression():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = int(rng.integers(2, 5))
        n = int(rng.integers(5, 40))
        preds = [rng.standard_normal(n) for _ in range(m)]
        y = rng.standard_normal(n)
        w = fit_weights(preds, y, task_kind=H.REGRESSION)
        fitted = ensemble_objective(preds, y, w.values, H.REGRESSION)
        best_member = min(ensemble_objective(preds, y, np.eye(m)[i], H.REGRESSION) for i in range(m))
        assert fitted <= best_member + 1e-9
        w.validate("simplex")


def test_simplex_fit_never_loses_to_best_member_classification():
    rng = np.random.default_rng(6)
    for _ in range(5):
        m = int(rng.integers(2, 4))
        n = int(rng.integers(6, 30))
        k = int(rng.integers(2, 4))
        preds = []
        for _ in range(m):
            p = rng.uniform(0.05, 1.0, size=(n, k))
            preds.append(p / p.sum(axis=1, keepdims=True))
        y = rng.integers(0, k, size=n)
        w = fit_weights(preds, y, task_kind=H.CLASSIFICATION)
        fitted = ensemble_objective(preds, y, w.values, H.CLASSIFICATION)
        best_member = min(ensemble_objective(preds, y, np.eye(m)[i], H.CLASSIFICATION) for i in range(m))
        assert fitted <= best_member + 1e-9
        w.validate("simplex")


def test_simplex_fit_recovers_planted_mixture():
    rng = np.random.default_rng(7)
    n = 400
    p1 = rng.standard_normal(n)
    p2 = rng.standard_normal(n)
    y = 0.3 * p1 + 0.7 * p2  # the optimum is interior, so PGD must move
    w = fit_weights([p1, p2], y, task_kind=H.REGRESSION)
    assert np.allclose(w.values, [0.3, 0.7], atol=1e-3)


def test_ensemble_objective_is_plain_mse_for_regression():
    preds = [np.array([1.0, 2.0]), np.array([3.0, 0.0])]
    w = np.array([0.5, 0.5])
    combined = np.array([2.0, 1.0])
    y = np.array([0.0, 0.0])
    assert ensemble_objective(preds, y, w, H.REGRESSION) == pytest.approx(np.mean(combined**2))


# --- fused representations ---------------------------------------------------------

def test_fusion_layout_and_per_segment_normalization():
    m1 = np.array([[3.0, 4.0]])
    m2 = np.array([[0.0, 5.0, 0.0]])
    aux = np.array([[2.0]])
    know = np.array([[0.0, 0.0]])  # zero knowledge row stays zero
    fused = build_fused_representation([m1, m2], aux, know)
    assert fused.shape == (1, 2 + 3 + 1 + 2)
    assert np.allclose(fused[0, :2], [0.6, 0.8])
    assert np.allclose(fused[0, 2:5], [0.0, 1.0, 0.0])
    assert fused[0, 5] == 1.0
    assert not fused[0, 6:].any()


def test_fusion_is_scale_invariant_per_segment():
    rng = np.random.default_rng(8)
    m1 = rng.standard_normal((4, 3))
    m2 = rng.standard_normal((4, 2))
    a = build_fused_representation([m1, m2])
    b = build_fused_representation([m1 * 100.0, m2])
    # scaling a whole segment by a positive constant changes nothing
    assert np.allclose(a, b, atol=1e-12)


def test_fusion_shape_errors():
    with pytest.raises(EmptyMemberList):
        build_fused_representation([])
    with pytest.raises(ShapeMismatch):
        build_fused_representation([np.zeros((2, 3)), np.zeros((3, 3))])


def test_single_member_fusion_equals_solo_training_bit_exact():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((30, 5))
    y = rng.uniform(0, 1, size=30)
    splits = {
        "train": (x[:20], y[:20]),
        "validation": (x[20:25], y[20:25]),
        "test": (x[25:], y[25:]),
    }
    cfg = H.TrainConfig(max_epochs=5, seed=3)

    fused = {k: (build_fused_representation([vx]), vy) for k, (vx, vy) in splits.items()}
    fusion_head, _, fusion_metric = train_fusion_ensemble(H.REGRESSION, 1, fused, cfg, seed=11)

    solo = H.init_head(H.LINEAR, 5, 1, H.REGRESSION, seed=11)
    solo_trained, _ = H.train_head(
        solo, (unit_rows(splits["train"][0]), splits["train"][1]),
        (unit_rows(splits["validation"][0]), splits["validation"][1]), cfg,
    )
    solo_metric = H.evaluate(solo_trained, unit_rows(splits["test"][0]), splits["test"][1])
    assert fusion_metric == solo_metric
    assert all(np.array_equal(fusion_head.params[k], solo_trained.params[k]) for k in solo_trained.params)


def test_duplicated_auxiliary_channel_changes_little():
    # feeding member 1 again as the auxiliary segment adds no information,
    # so the fused model should track the plain two-member fusion closely
    rng = np.random.default_rng(10)
    n = 120
    x1 = rng.standard_normal((n, 6))
    x2 = rng.standard_normal((n, 6))
    w1 = rng.standard_normal(6)
    y = np.clip(0.5 + 0.2 * (unit_rows(x1) @ w1) + 0.05 * rng.standard_normal(n), 0, 1)
    idx = {"train": slice(0, 80), "validation": slice(80, 100), "test": slice(100, None)}
    cfg = H.TrainConfig(max_epochs=40, early_stop_patience=40, seed=1)

    plain = {k: (build_fused_representation([x1[s], x2[s]]), y[s]) for k, s in idx.items()}
    doubled = {k: (build_fused_representation([x1[s], x2[s]], auxiliary_rows=x1[s]), y[s]) for k, s in idx.items()}
    _, _, plain_metric = train_fusion_ensemble(H.REGRESSION, 1, plain, cfg, seed=2)
    _, _, doubled_metric = train_fusion_ensemble(H.REGRESSION, 1, doubled, cfg, seed=2)
    assert abs(plain_metric.value - doubled_metric.value) <= 0.02


# --- spec validation ------------------------------------------------------------

def test_spec_validation():
    good = EnsembleSpec(name="e", strategy="naive", task="t", members=["a", "b"])
    good.validate()
    with pytest.raises(ValueError):
        EnsembleSpec(name="e", strategy="magic", task="t", members=["a"]).validate()
    with pytest.raises(EmptyMemberList):
        EnsembleSpec(name="e", strategy="naive", task="t", members=[]).validate()
    with pytest.raises(ValueError):
        EnsembleSpec(name="e", strategy="naive", task="t", members=["a", "a"]).validate()
    with pytest.raises(ValueError):
        EnsembleSpec(name="e", strategy="llm", task="t", members=["a"]).validate()
    with pytest.raises(ValueError):
        EnsembleSpec(name="e", strategy="ki", task="t", members=["a"]).validate()


def test_weights_validation():
    EnsembleWeights(values=np.array([0.5, 0.5])).validate("simplex")
    with pytest.raises(ValueError):
        EnsembleWeights(values=np.array([0.8, 0.8])).validate("simplex")
    with pytest.raises(ValueError):
        EnsembleWeights(values=np.array([-0.2, 1.2])).validate("simplex")
    EnsembleWeights(values=np.array([-0.2, 1.2])).validate("unconstrained")

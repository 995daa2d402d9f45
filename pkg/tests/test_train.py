import math

import numpy as np
import pytest

from wearagen.exceptions import NumericalError, ValidationError
from wearagen.model import ModelConfig, init_params, load_checkpoint
from wearagen.train import (
    EQUAL_WEIGHTS, OptimizerState, ShakeShakeWeights, TrainConfig, adam_step, combine_losses,
    cross_entropy, cross_entropy_with_grad, evaluate_loss, lr_at_epoch, sample_shake_weights,
    split_by_individual, subsample_individuals, train,
)

IDS = [f"p{i}" for i in range(10)]


# -- splits -----------------------------------------------------------------

def test_split_all_train():
    tr, va, te = split_by_individual(IDS, (1.0, 0.0, 0.0))
    assert sorted(tr) == IDS and va == [] and te == []


def test_split_exact_sizes_disjoint():
    tr, va, te = split_by_individual(IDS, (0.8, 0.1, 0.1), seed=3)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert sorted(tr + va + te) == IDS


def test_split_largest_remainder():
    tr, va, te = split_by_individual([f"p{i}" for i in range(7)], (0.5, 0.25, 0.25))
    # raw 3.5, 1.75, 1.75: the two leftovers go to the larger remainders
    assert (len(tr), len(va), len(te)) == (3, 2, 2)


def test_split_seeded():
    assert split_by_individual(IDS, seed=1) == split_by_individual(IDS, seed=1)
    assert split_by_individual(IDS, seed=1) != split_by_individual(IDS, seed=2)


def test_split_rejects_empty_and_bad_fractions():
    with pytest.raises(ValidationError, match="zero individuals"):
        split_by_individual(IDS[:3], (0.8, 0.1, 0.1))
    with pytest.raises(ValidationError):
        split_by_individual(IDS, (0.5, 0.1, 0.1))
    with pytest.raises(ValidationError):
        split_by_individual(IDS, (1.2, -0.1, -0.1))


def test_subsample_rounding():
    ids = [f"p{i}" for i in range(160)]
    assert len(subsample_individuals(ids, 0.01)) == 2
    assert len(subsample_individuals(ids, 0.005)) == 1
    sub = subsample_individuals(ids, 0.1, seed=4)
    assert len(sub) == 16 and sub == sorted(sub, key=ids.index)
    assert subsample_individuals(ids, 1.0) == ids


# -- cross-entropy ----------------------------------------------------------

def test_ce_uniform_is_log_bins():
    logits = np.zeros((2, 21, 100))
    targets = np.random.default_rng(0).integers(0, 100, (2, 21))
    assert cross_entropy(logits, targets) == pytest.approx(math.log(100), abs=1e-12)
    assert math.log(100) == pytest.approx(4.60517, abs=1e-5)


def test_ce_saturated_is_near_zero():
    targets = np.array([[1, 2, 0]])
    logits = np.full((1, 3, 4), -50.0)
    logits[0, 0, 2] = 50.0
    logits[0, 1, 0] = 50.0
    assert 0 <= cross_entropy(logits, targets) < 1e-40


def test_ce_matches_logsumexp_oracle():
    rng = np.random.default_rng(1)
    logits = rng.normal(scale=3, size=(4, 6, 7))
    targets = rng.integers(0, 7, (4, 6))
    terms = []
    for b in range(4):
        for t in range(5):
            row = logits[b, t]
            m = max(row)
            lse = m + math.log(math.fsum(math.exp(x - m) for x in row))
            terms.append(lse - row[targets[b, t + 1]])
    assert cross_entropy(logits, targets) == pytest.approx(math.fsum(terms) / len(terms),
                                                           rel=1e-12, abs=1e-12)


def test_ce_gradient_finite_difference():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(2, 4, 5))
    targets = rng.integers(0, 5, (2, 4))
    _, g = cross_entropy_with_grad(logits, targets)
    assert not g[:, -1].any()
    h = 1e-6
    for idx in [(0, 0, 1), (1, 2, 4), (1, 1, 0)]:
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        fd = (cross_entropy(up, targets) - cross_entropy(down, targets)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_ce_rejects_out_of_range_targets():
    with pytest.raises(ValidationError):
        cross_entropy(np.zeros((1, 3, 4)), np.array([[0, 4, 1]]))


# -- shake-shake --------------------------------------------------------------

def test_shake_weights_unit_norm_non_negative():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = sample_shake_weights(rng).alpha
        assert abs(np.linalg.norm(a) - 1) <= 1e-9 and np.all(a >= 0)


def test_equal_weights_scale_mean():
    assert EQUAL_WEIGHTS == pytest.approx([1 / math.sqrt(3)] * 3, abs=1e-15)
    losses = np.array([1.0, 2.0, 4.5])
    assert combine_losses(losses, ShakeShakeWeights(EQUAL_WEIGHTS)) == pytest.approx(
        math.sqrt(3) * losses.mean(), rel=1e-14)


def test_shake_component_means():
    rng = np.random.default_rng(5)
    draws = np.array([sample_shake_weights(rng).alpha for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.5) < 0.01)


def test_shake_weights_validation():
    with pytest.raises(ValidationError):
        ShakeShakeWeights(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValidationError):
        ShakeShakeWeights(np.array([-1.0, 0.0, 0.0]))


def test_shake_zero_draw_falls_back_to_equal():
    class ZeroRng:
        def standard_normal(self, n):
            return np.zeros(n)
    assert np.array_equal(sample_shake_weights(ZeroRng()).alpha, EQUAL_WEIGHTS)


# -- Adam -------------------------------------------------------------------

def _adam_oracle(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_first_step_is_lr_sized():
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState.zeros_like(params)
    adam_step(params, {"w": np.array([0.3, -7.0])}, state, 1e-3)
    np.testing.assert_allclose(params["w"], [1.0 - 1e-3, -2.0 + 1e-3], rtol=0, atol=1e-10)


def test_adam_matches_scalar_oracle():
    params = {"w": np.array([0.5])}
    state = OptimizerState.zeros_like(params)
    seq = [0.2, -0.05, 0.4]
    for g in seq:
        adam_step(params, {"w": np.array([g])}, state, 1e-2)
    assert params["w"][0] == pytest.approx(_adam_oracle(0.5, seq, 1e-2), abs=1e-12)
    assert state.step == 3


def test_adam_zero_gradient_is_no_op():
    params = {"w": np.array([0.5, 1.5])}
    state = OptimizerState.zeros_like(params)
    adam_step(params, {"w": np.zeros(2)}, state, 1e-3)
    assert np.array_equal(params["w"], [0.5, 1.5])


def test_adam_rejects_non_finite():
    params = {"w": np.zeros(2)}
    with pytest.raises(NumericalError, match="w"):
        adam_step(params, {"w": np.array([np.nan, 0])}, OptimizerState.zeros_like(params), 1e-3)


# -- schedule ---------------------------------------------------------------

def test_lr_schedule_values():
    cfg = TrainConfig()
    assert [lr_at_epoch(e, cfg) for e in range(15)] == [1e-3] * 5 + [1e-4] * 5 + [1e-5] * 5
    with pytest.raises(ValidationError):
        lr_at_epoch(15, cfg)


# -- training loop ----------------------------------------------------------

def test_zero_epochs_writes_initialisation(tmp_path, tiny_config):
    w = np.random.default_rng(0).integers(0, 5, (4, 4, 3))
    res = train(w, tiny_config, TrainConfig(epochs=0, seed=3), out_dir=tmp_path)
    params, _, _ = load_checkpoint(tmp_path / "final.agck")
    fresh = init_params(tiny_config, np.random.default_rng(np.random.SeedSequence(3).spawn(4)[0]))
    for name in params:
        assert np.array_equal(params[name], fresh[name])
    assert res.loss_log == []


def test_training_deterministic_and_logged(tmp_path, tiny_config):
    w = np.random.default_rng(1).integers(0, 5, (20, 4, 3))
    cfg = TrainConfig(epochs=2, batch_size=8, seed=4)
    a = train(w, tiny_config, cfg, val_windows=w[:4], out_dir=tmp_path / "a")
    b = train(w, tiny_config, cfg, val_windows=w[:4], out_dir=tmp_path / "b")
    assert (tmp_path / "a/loss_log.csv").read_bytes() == (tmp_path / "b/loss_log.csv").read_bytes()
    assert len(a.loss_log) == 6 and len(a.val_log) == 2
    assert [p.name for p in a.checkpoints] == ["epoch01.agck", "epoch02.agck", "final.agck"]
    header = (tmp_path / "a/loss_log.csv").read_text().splitlines()[0]
    assert header == "epoch,step,lr,loss_hr,loss_sleep,loss_steps,loss_combined"
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_max_steps_stops_early(tiny_config):
    w = np.random.default_rng(1).integers(0, 5, (20, 4, 3))
    res = train(w, tiny_config, TrainConfig(epochs=3, batch_size=4), max_steps=7)
    assert len(res.loss_log) == 7


def test_evaluate_loss_equal_weights(tiny_config, tiny_params):
    w = np.random.default_rng(2).integers(0, 5, (9, 4, 3))
    out = evaluate_loss(w, tiny_params, tiny_config, batch_size=4)
    assert out["combined"] == pytest.approx(math.sqrt(3) * out["per_task"].mean(), rel=1e-12)
    # batching does not change the average
    whole = evaluate_loss(w, tiny_params, tiny_config, batch_size=100)
    np.testing.assert_allclose(out["per_task"], whole["per_task"], rtol=1e-12)


def test_untrained_loss_near_uniform(tiny_config, tiny_params):
    w = np.random.default_rng(2).integers(0, 5, (16, 4, 3))
    out = evaluate_loss(w, tiny_params, tiny_config)
    np.testing.assert_allclose(out["per_task"], math.log(5), rtol=0.05)


def test_training_reduces_loss(tiny_config):
    w = np.random.default_rng(3).integers(0, 5, (32, 4, 3))
    before = evaluate_loss(w, init_params(tiny_config, 0, np.float64), tiny_config)["combined"]
    res = train(w, tiny_config, TrainConfig(epochs=100, batch_size=32, lr=1e-2,
                                            decay_interval=1000, dtype="float64"))
    assert evaluate_loss(w, res.params, tiny_config)["combined"] < 0.7 * before


def test_train_rejects_bad_windows(tiny_config):
    with pytest.raises(ValidationError):
        train(np.zeros((2, 5, 3), dtype=int), tiny_config, TrainConfig(epochs=1))
    with pytest.raises(ValidationError):
        train(np.full((2, 4, 3), 5), tiny_config, TrainConfig(epochs=1))
    with pytest.raises(ValidationError):
        train(np.zeros((0, 4, 3), dtype=int), ModelConfig.tiny(), TrainConfig(epochs=1))

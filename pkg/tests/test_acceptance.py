"""Acceptance criteria, one test each.

Every test prints a ``[PASS]``/``[FAIL]`` line via the ``acceptance`` marker
(collected in conftest). Criterion 8 trains two full-size models and takes a
few minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from helpers import brute_force_dtw, finite_difference_grads, relative_errors
from wearagen.cohort import CohortConfig, simulate_cohort
from wearagen.data import (
    clean_cohort, dequantize, fit_scaler, make_cohort_windows, quantize,
)
from wearagen.estimator import ActivityTransformer
from wearagen.evaluation import dtw_distance, evaluate_sets
from wearagen.generate import GenerationConfig, generate, tempered_probs
from wearagen.model import ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from wearagen.train import (
    EQUAL_WEIGHTS, TrainConfig, evaluate_loss, lr_at_epoch, sample_shake_weights,
    split_by_individual, subsample_individuals, train,
)

acceptance = pytest.mark.acceptance


@acceptance("1. gradient correctness (tiny config, h=1e-4, rel err < 1e-4)")
def test_gradient_correctness():
    start = time.time()
    cfg = ModelConfig.tiny()
    assert (cfg.d_model, cfg.num_heads, cfg.num_blocks, cfg.seq_len, cfg.num_bins) == (8, 2, 1, 4, 5)
    params = init_params(cfg, 0, dtype=np.float64)
    windows = np.random.default_rng(0).integers(0, 5, (4, 4, 3))
    grads, fds = finite_difference_grads(windows, params, cfg, EQUAL_WEIGHTS, h=1e-4)
    errors = relative_errors(grads, fds)
    worst = max(errors, key=errors.get)
    print(f"\nworst per-tensor relative error {errors[worst]:.3e} ({worst}) over {len(errors)} tensors")
    # elementwise figures are reported, not asserted: entries with tiny gradients
    # are dominated by the O(h^2) truncation of the central difference
    elem = {n: np.abs(grads[n] - fds[n]) / np.maximum(np.abs(grads[n]) + np.abs(fds[n]), 1e-8)
            for n in grads}
    name = max(elem, key=lambda n: elem[n].max())
    idx = tuple(int(i) for i in np.unravel_index(np.argmax(elem[name]), elem[name].shape))
    print(f"worst elementwise relative error {elem[name].max():.3e} at {name}{idx}: "
          f"analytic {grads[name][idx]:.6e}, central difference {fds[name][idx]:.6e}; "
          f"max abs diff {max(np.abs(grads[n] - fds[n]).max() for n in grads):.2e}")
    elapsed = time.time() - start
    print(f"runtime {elapsed:.1f}s")
    assert set(errors) == set(params)
    assert errors[worst] < 1e-4
    assert elapsed < 60


@acceptance("2. causality (100 random perturbations, bitwise)")
def test_causality():
    cfg = ModelConfig()
    params = init_params(cfg, 1)
    rng = np.random.default_rng(2)
    base_w = rng.integers(0, 100, (2, 21, 3))
    base = forward(base_w, params, cfg).logits
    positions = set()
    for _ in range(100):
        t = int(rng.integers(0, 20))
        w = base_w.copy()
        changed = rng.random((2, 20 - t, 3)) < 0.5
        changed[:, 0, 0] = True
        w[:, t + 1:][changed] = rng.integers(0, 100, int(changed.sum()))
        out = forward(w, params, cfg).logits
        assert np.array_equal(out[:, : t + 1], base[:, : t + 1]), f"prefix 0..{t} changed"
        assert not np.array_equal(out[:, t + 1:], base[:, t + 1:])
        positions.add(t)
    print(f"\n100 perturbations over {len(positions)} distinct cut points: prefixes bitwise equal")


@acceptance("3. overfit sanity (32 windows, 400 Adam steps, loss < 0.5)")
def test_overfit():
    start = time.time()
    cfg = ModelConfig.tiny()
    windows = np.random.default_rng(1).integers(0, cfg.num_bins, (32, cfg.seq_len, 3))
    tcfg = TrainConfig(epochs=400, batch_size=32, lr=1e-2, decay_interval=400, seed=0, dtype="float64")
    initial = evaluate_loss(windows, init_params(cfg, np.random.default_rng(
        np.random.SeedSequence(0).spawn(4)[0]), np.float64), cfg)["combined"]
    res = train(windows, cfg, tcfg)
    final = evaluate_loss(windows, res.params, cfg)["combined"]
    tail = np.mean([r["loss_combined"] for r in res.loss_log[-10:]])
    print(f"\nsteps {len(res.loss_log)}; combined loss {initial:.4f} -> {final:.4f} "
          f"(equal weights); last-10 shake-weighted mean {tail:.4f}; uniform reference "
          f"{math.sqrt(3) * math.log(cfg.num_bins):.4f}; {time.time() - start:.1f}s")
    assert len(res.loss_log) == 400
    assert final < 0.5
    assert time.time() - start < 60


@acceptance("4. quantization round trip and monotonicity")
def test_quantization(small_cohort):
    spec = fit_scaler(small_cohort)
    rng = np.random.default_rng(3)
    for c in range(3):
        values = rng.uniform(spec.mins[c], spec.maxs[c], 1000)
        bins = quantize(values, c, spec)
        err = np.abs(dequantize(bins, c, spec) - values)
        half = spec.bin_width(c) / 2
        print(f"\nchannel {c}: max round-trip error {err.max():.6g} vs half width {half:.6g}", end="")
        assert np.all(err <= half * (1 + 1e-12))
        order = np.argsort(values)
        assert np.all(np.diff(bins[order]) >= 0)
        wide = np.sort(rng.uniform(spec.mins[c] - 10, spec.maxs[c] + 10, 1000))
        assert np.all(np.diff(quantize(wide, c, spec)) >= 0)
    print()


@acceptance("5. DTW equals exhaustive alignment search (500 pairs)")
def test_dtw_oracle():
    start = time.time()
    rng = np.random.default_rng(4)
    for _ in range(500):
        n, m = rng.integers(1, 7, 2)
        x, y = rng.normal(size=n) * 10, rng.normal(size=m) * 10
        d = dtw_distance(x, y)
        assert d == brute_force_dtw(x, y)
        assert dtw_distance(x, x) == 0.0
        assert d == dtw_distance(y, x)
        if n == m:
            assert d <= float(np.sum(np.abs(x - y)))
    elapsed = time.time() - start
    print(f"\n500 pairs exact; {elapsed:.1f}s")
    assert elapsed < 60


@acceptance("6. shake-shake weights (unit norm, symmetric means)")
def test_shake_shake():
    rng = np.random.default_rng(5)
    draws = np.array([sample_shake_weights(rng).alpha for _ in range(100_000)])
    norms = np.linalg.norm(draws, axis=1)
    means = draws.mean(axis=0)
    print(f"\nmax |norm - 1| {np.abs(norms - 1).max():.2e}; component means {means}")
    assert np.all(np.abs(norms - 1) <= 1e-9)
    assert np.all(draws >= 0)
    assert means.max() - means.min() < 0.01


@acceptance("7. learning-rate schedule over 15 epochs")
def test_lr_schedule():
    cfg = TrainConfig()
    lrs = [lr_at_epoch(e, cfg) for e in range(cfg.epochs)]
    print(f"\n{lrs}")
    assert lrs == [1e-3] * 5 + [1e-4] * 5 + [1e-5] * 5


@acceptance("8. desk-scale scaling trend (100% vs 1% of windows)")
def test_scaling_trend():
    start = time.time()
    cohort, _ = clean_cohort(simulate_cohort(CohortConfig(num_individuals=200, num_days=365, seed=42)))
    by_id = {s.individual_id: s for s in cohort}
    train_ids, val_ids, test_ids = split_by_individual(list(by_id), (0.8, 0.1, 0.1), seed=0)
    spec = fit_scaler([by_id[i] for i in train_ids])
    tr = make_cohort_windows([by_id[i] for i in train_ids], spec)
    va = make_cohort_windows([by_id[i] for i in val_ids], spec)
    te = make_cohort_windows([by_id[i] for i in test_ids], spec)

    results = {}
    for frac in (1.0, 0.01):
        keep = set(subsample_individuals(train_ids, frac, seed=0))
        idx = [k for k, (iid, _) in enumerate(tr.sources) if iid in keep]
        model = ActivityTransformer(random_state=0).fit(tr.windows[idx])
        val_loss = evaluate_loss(va.windows, model.params_, model.model_config_)["combined"]
        gen = model.generate(te.windows, spec, horizon=21, random_state=1)
        cos, _ = evaluate_sets(te.values, gen.values, spec)
        results[frac] = (len(idx), val_loss, cos["cross"]["mean"], cos["intra_real"]["mean"])
        print(f"\nfraction {frac:g}: {len(idx)} windows, val combined loss {val_loss:.4f}, "
              f"cross cosine {cos['cross']['mean']:.4f} (intra-real {cos['intra_real']['mean']:.4f})",
              end="")
    elapsed = time.time() - start
    print(f"\nruntime {elapsed:.0f}s")
    full, small = results[1.0], results[0.01]
    assert full[1] < small[1]
    assert full[2] - small[2] > 0.01
    assert elapsed < 30 * 60


@acceptance("9. generation contract")
def test_generation_contract(small_spec):
    cfg = ModelConfig(d_model=16, num_heads=2, num_blocks=1, ffn_hidden=32, dropout_p=0.1)
    params = init_params(cfg, 6)
    prompts = np.random.default_rng(7).integers(0, 100, (5, 21, 3))
    gc = GenerationConfig(horizon=30, seed=8)
    a = generate(prompts, params, cfg, small_spec, gc)
    b = generate(prompts, params, cfg, small_spec, gc)
    # window length stays fixed at every horizon and slides by one day per step
    for h in (1, 2, 21, 30):
        r = generate(prompts, params, cfg, small_spec, GenerationConfig(horizon=h, seed=8))
        assert r.final_windows.shape == prompts.shape
        tail = np.concatenate([prompts, r.bins], axis=1)[:, -21:]
        assert np.array_equal(r.final_windows, tail)
        assert np.array_equal(r.bins, a.bins[:, :h])
    for c in range(3):
        assert small_spec.mins[c] <= a.values[..., c].min()
        assert a.values[..., c].max() <= small_spec.maxs[c]
    assert np.array_equal(a.bins, b.bins) and np.array_equal(a.values, b.values)
    rng = np.random.default_rng(9)
    for _ in range(200):
        logits = rng.normal(scale=3, size=100)
        for t in (0.1, 0.5, 1.0, 2.0, 10.0):
            assert np.argmax(tempered_probs(logits, t)) == np.argmax(logits)
    print("\nshape, range, determinism and argmax invariance hold")


@acceptance("10. checkpoint round trip gives bit-identical logits")
def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig()
    params = init_params(cfg, 10)
    path = tmp_path / "model.agck"
    save_checkpoint(path, params, cfg, {"scaler": None})
    loaded, cfg2, _ = load_checkpoint(path)
    batch = np.random.default_rng(11).integers(0, 100, (8, 21, 3))
    a = forward(batch, params, cfg).logits
    b = forward(batch, loaded, cfg2).logits
    print(f"\n{path.stat().st_size} bytes; logits identical: {np.array_equal(a, b)}")
    assert cfg2 == cfg
    assert a.dtype == b.dtype and np.array_equal(a, b)

import numpy as np
import pytest

from tasml.config import from_dict
from tasml.driver import (
    adapt,
    build_metaset,
    evaluate,
    load_checkpoint,
    meta_train,
    save_checkpoint,
)
from tasml.ls_meta_learn import MetaParams
from tasml.meta_objectives import erm_objective, optimizer_init, optimizer_step
from tasml.seeding import derive_rng
from tasml.taskgen import MetaSet

BASE = {
    "experiment": "unit",
    "source": {"type": "generator", "n_modes": 2, "cluster_spread": 1.0},
    "kernel": {"family": "gaussian", "sigma": "median"},
    "n_ways": 3,
    "n_shots": 2,
    "query_per_class": 4,
    "rep_dim": 16,
    "n_train_tasks": 40,
    "test_tasks": 3,
    "top_m": 5,
    "adapt_steps": 5,
    "init_steps": 30,
    "meta_batch": 4,
    "learning_rate": 1e-3,
    "seeds": [0],
    "output_dir": "unused",
}


def make_cfg(**overrides):
    raw = dict(BASE)
    raw.update(overrides)
    return from_dict(raw)


def make_system(cfg, seed=0):
    train = build_metaset(cfg, seed, "train", cfg.n_train_tasks)
    return meta_train(train, cfg, seed), train


def test_zero_steps_returns_warm_start():
    cfg = make_cfg()
    system, _ = make_system(cfg)
    target = build_metaset(cfg, 0, "test", 1).tasks[0]
    trace = adapt(
        system, target, adapt_steps=0, top_m=5, beta1=1.0, beta2=1.0,
        cfg=cfg, batch_seed=0,
    )
    assert trace.steps == 0
    assert trace.objective.shape == (1,)
    np.testing.assert_array_equal(
        trace.final_theta.to_flat(), system.theta0.to_flat()
    )
    assert 0.0 <= trace.accuracy[0] <= 1.0


def test_random_init_skips_unconditional_training():
    cfg = make_cfg(random_init=True)
    system, train = make_system(cfg)
    fresh = MetaParams.initial(cfg.rep_dim, derive_rng(0, "theta0"))
    np.testing.assert_array_equal(system.theta0.to_flat(), fresh.to_flat())

    # init_steps = 0 is the same thing
    cfg2 = make_cfg(random_init=False, init_steps=0)
    system2, _ = make_system(cfg2)
    np.testing.assert_array_equal(system2.theta0.to_flat(), fresh.to_flat())


def test_unconditional_training_reduces_erm_loss():
    cfg = make_cfg(init_steps=150, n_train_tasks=60)
    train = build_metaset(cfg, 1, "train", cfg.n_train_tasks)
    system = meta_train(train, cfg, 1)
    fresh = MetaParams.initial(cfg.rep_dim, derive_rng(1, "theta0"))
    batch = list(train.tasks[:20])
    before, _ = erm_objective(fresh, batch, cfg.lambda_theta, cfg.l2_theta)
    after, _ = erm_objective(system.theta0, batch, cfg.lambda_theta, cfg.l2_theta)
    assert after < before


def test_trace_length_and_indexing():
    cfg = make_cfg()
    system, _ = make_system(cfg)
    target = build_metaset(cfg, 0, "test", 1).tasks[0]
    for j in (0, 1, 7):
        trace = adapt(
            system, target, adapt_steps=j, top_m=5, beta1=1.0, beta2=1.0,
            cfg=cfg, batch_seed=3,
        )
        assert trace.objective.shape == (j + 1,)
        assert trace.accuracy.shape == (j + 1,)
        assert np.isfinite(trace.objective).all()
        assert ((trace.accuracy >= 0) & (trace.accuracy <= 1)).all()


def test_adapt_equals_continued_erm_on_uniform_weights():
    # every training task identical: weights are uniform, and with the target
    # term off, adaptation is exactly continued unconditional training
    cfg = make_cfg(random_init=True, meta_batch=3)
    base_train = build_metaset(cfg, 2, "train", 8)
    one = base_train.tasks[0]
    train = MetaSet(tasks=(one,) * 8, split="train", class_pool=base_train.class_pool)
    system = meta_train(train, cfg, 2)
    target = build_metaset(cfg, 2, "test", 1).tasks[0]

    steps = 6
    trace = adapt(
        system, target, adapt_steps=steps, top_m=8, beta1=1.0, beta2=0.0,
        cfg=cfg, batch_rng=derive_rng(5, "stream"), trace_eval=False,
    )

    # manual continued-training loop with the identical batch stream
    rng = derive_rng(5, "stream")
    theta = system.theta0
    state = optimizer_init(theta, cfg.learning_rate, cfg.optimizer)
    for _ in range(steps):
        idx = rng.integers(0, 8, size=cfg.meta_batch)
        batch = [train.tasks[i] for i in idx]
        _, grad = erm_objective(theta, batch, cfg.lambda_theta, cfg.l2_theta)
        state, theta = optimizer_step(state, theta, grad)

    assert np.abs(trace.final_theta.to_flat() - theta.to_flat()).max() < 1e-10


def test_mode_retrieval_smoke():
    cfg = make_cfg(n_train_tasks=80, init_steps=0, random_init=True)
    system, train = make_system(cfg, seed=3)
    test = build_metaset(cfg, 3, "test", 10)
    agreements = []
    for target in test.tasks:
        trace = adapt(
            system, target, adapt_steps=0, top_m=5, beta1=1.0, beta2=1.0,
            cfg=cfg, batch_seed=0,
        )
        modes = [train.tasks[i].mode_id for i, _ in trace.selected]
        agreements.append(np.mean([m == target.mode_id for m in modes]))
    assert np.mean(agreements) > 0.8


def test_query_set_never_drives_gradients():
    # two targets sharing a support but with different queries must produce
    # identical parameters and objective traces
    cfg = make_cfg()
    system, _ = make_system(cfg)
    test = build_metaset(cfg, 7, "test", 2)
    t0, t1 = test.tasks[0], test.tasks[1]
    from tasml.taskgen import Task

    same_support_other_query = Task(
        support=t0.support, query=t1.query, mode_id=t0.mode_id
    )
    tr_a = adapt(
        system, t0, adapt_steps=4, top_m=5, beta1=1.0, beta2=1.0,
        cfg=cfg, batch_seed=11,
    )
    tr_b = adapt(
        system, same_support_other_query, adapt_steps=4, top_m=5,
        beta1=1.0, beta2=1.0, cfg=cfg, batch_seed=11,
    )
    np.testing.assert_array_equal(
        tr_a.final_theta.to_flat(), tr_b.final_theta.to_flat()
    )
    np.testing.assert_array_equal(tr_a.objective, tr_b.objective)


def test_evaluate_deterministic_and_thread_invariant():
    cfg = make_cfg(test_tasks=4)
    system, _ = make_system(cfg)
    test = build_metaset(cfg, 0, "test", cfg.test_tasks)
    kwargs = dict(
        adapt_steps=3, top_m=5, beta1=1.0, beta2=1.0, cfg=cfg, seed=9
    )
    serial = evaluate(system, test, workers=1, **kwargs)
    again = evaluate(system, test, workers=1, **kwargs)
    threaded = evaluate(system, test, workers=3, **kwargs)
    np.testing.assert_array_equal(serial.final_acc, again.final_acc)
    np.testing.assert_array_equal(serial.final_acc, threaded.final_acc)
    np.testing.assert_array_equal(serial.step0_acc, threaded.step0_acc)


def test_evaluate_zero_steps_equals_baseline():
    cfg = make_cfg()
    system, _ = make_system(cfg)
    test = build_metaset(cfg, 0, "test", 3)
    summary = evaluate(
        system, test, adapt_steps=0, top_m=5, beta1=1.0, beta2=1.0,
        cfg=cfg, seed=0, workers=1,
    )
    np.testing.assert_array_equal(summary.final_acc, summary.step0_acc)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = make_cfg()
    system, _ = make_system(cfg)
    path = tmp_path / "sys.tasml"
    save_checkpoint(system, path)
    loaded = load_checkpoint(path)

    np.testing.assert_array_equal(
        loaded.theta0.to_flat(), system.theta0.to_flat()
    )
    np.testing.assert_array_equal(
        loaded.scoring.signatures, system.scoring.signatures
    )
    np.testing.assert_array_equal(
        loaded.scoring.chol.lower, system.scoring.chol.lower
    )
    assert loaded.scoring.lam == system.scoring.lam
    assert loaded.scoring.kernel == system.scoring.kernel
    assert len(loaded.train_set) == len(system.train_set)

    target = build_metaset(cfg, 0, "test", 1).tasks[0]
    kwargs = dict(adapt_steps=4, top_m=5, beta1=1.0, beta2=1.0, cfg=cfg)
    tr_orig = adapt(system, target, batch_rng=derive_rng(4, "s"), **kwargs)
    tr_load = adapt(loaded, target, batch_rng=derive_rng(4, "s"), **kwargs)
    np.testing.assert_array_equal(tr_orig.objective, tr_load.objective)
    np.testing.assert_array_equal(tr_orig.accuracy, tr_load.accuracy)
    np.testing.assert_array_equal(
        tr_orig.final_theta.to_flat(), tr_load.final_theta.to_flat()
    )


def test_checkpoint_bytes_deterministic(tmp_path):
    cfg = make_cfg()
    system, _ = make_system(cfg)
    p1, p2 = tmp_path / "a.tasml", tmp_path / "b.tasml"
    save_checkpoint(system, p1)
    save_checkpoint(system, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_embedding_source_single_file_split(tmp_path):
    from tasml.taskgen import sample_class_bank, write_embedding_file

    gen_cfg = make_cfg().generator_config(0)
    bank = sample_class_bank(gen_cfg, per_class=10)
    path = tmp_path / "bank.emb"
    write_embedding_file(path, bank)
    cfg = make_cfg(
        source={"type": "embedding", "path": str(path), "train_fraction": 0.7},
        n_train_tasks=6,
        test_tasks=3,
        query_per_class=3,
    )
    train = build_metaset(cfg, 0, "train", cfg.n_train_tasks)
    test = build_metaset(cfg, 0, "test", cfg.test_tasks)
    assert len(train) == 6 and len(test) == 3
    assert train.class_pool & test.class_pool == frozenset()
    system = meta_train(train, cfg, 0)
    summary = evaluate(
        system, test, adapt_steps=2, top_m=3, beta1=1.0, beta2=1.0,
        cfg=cfg, seed=0, workers=1,
    )
    assert summary.final_acc.shape == (3,)

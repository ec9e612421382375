import numpy as np
import pytest

from tasml.errors import (
    ConfigInvalid,
    FileMalformed,
    InsufficientClasses,
    InsufficientExamplesPerClass,
)
from tasml.taskgen import (
    GeneratorConfig,
    LabeledSet,
    Task,
    load_embedding_metaset,
    read_embedding_file,
    sample_class_bank,
    sample_multimodal_tasks,
    write_embedding_file,
)

DESK = GeneratorConfig(
    n_modes=2, d=16, n_ways=5, n_shots=5, query_per_class=15, cluster_spread=1.0,
    seed=11,
)


def ridge_probe(x, y, n_classes, lam=1.0):
    """Independent oracle: closed-form ridge classifier on raw features."""
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    targets = np.eye(n_classes)[y]
    w = np.linalg.solve(xb.T @ xb + lam * np.eye(xb.shape[1]), xb.T @ targets)
    return lambda q: np.argmax(np.hstack([q, np.ones((q.shape[0], 1))]) @ w, axis=1)


def test_task_shapes_and_label_structure():
    ms = sample_multimodal_tasks(DESK, 20, "train")
    assert len(ms) == 20
    for task in ms.tasks:
        assert len(task.support) == DESK.n_ways * DESK.n_shots
        assert len(task.query) == DESK.n_ways * DESK.query_per_class
        support_counts = np.bincount(task.support.y, minlength=DESK.n_ways)
        query_counts = np.bincount(task.query.y, minlength=DESK.n_ways)
        assert (support_counts == DESK.n_shots).all()
        assert (query_counts == DESK.query_per_class).all()
        assert set(np.unique(task.query.y)) <= set(np.unique(task.support.y))


def test_determinism_byte_identical():
    a = sample_multimodal_tasks(DESK, 10, "train")
    b = sample_multimodal_tasks(DESK, 10, "train")
    for ta, tb in zip(a.tasks, b.tasks):
        assert ta.mode_id == tb.mode_id
        assert ta.support.x.tobytes() == tb.support.x.tobytes()
        assert ta.query.x.tobytes() == tb.query.x.tobytes()
        assert ta.support.y.tobytes() == tb.support.y.tobytes()


def test_unimodal_all_mode_zero():
    cfg = GeneratorConfig(n_modes=1, d=8, n_ways=3, n_shots=2, query_per_class=2, seed=3)
    ms = sample_multimodal_tasks(cfg, 15, "test")
    assert all(t.mode_id == 0 for t in ms.tasks)


def test_split_class_pools_disjoint():
    pools = [
        sample_multimodal_tasks(DESK, 2, split).class_pool
        for split in ("train", "validation", "test")
    ]
    assert pools[0] & pools[1] == frozenset()
    assert pools[0] & pools[2] == frozenset()
    assert pools[1] & pools[2] == frozenset()


def test_mode_coverage():
    cfg = GeneratorConfig(n_modes=3, d=9, n_ways=3, n_shots=1, query_per_class=1, seed=5)
    ms = sample_multimodal_tasks(cfg, 50 * 3, "train")
    assert {t.mode_id for t in ms.tasks} == {0, 1, 2}


def test_pooled_probe_scores_chance_across_modes():
    # mode permutations {identity, reverse}: a probe fit on pooled mode-0
    # support sets must be uninformative on mode-1 queries
    cfg = GeneratorConfig(
        n_modes=2, d=16, n_ways=5, n_shots=5, query_per_class=15,
        cluster_spread=1.0, mode_permutations=((0, 1, 2, 3, 4), (4, 3, 2, 1, 0)),
        seed=23,
    )
    ms = sample_multimodal_tasks(cfg, 200, "train")
    mode0 = [t for t in ms.tasks if t.mode_id == 0]
    mode1 = [t for t in ms.tasks if t.mode_id == 1]
    x0 = np.vstack([t.support.x for t in mode0])
    y0 = np.concatenate([t.support.y for t in mode0])
    probe = ridge_probe(x0, y0, cfg.n_ways)
    x1 = np.vstack([t.query.x for t in mode1])
    y1 = np.concatenate([t.query.y for t in mode1])
    acc_cross = np.mean(probe(x1) == y1)
    assert acc_cross <= 1 / cfg.n_ways + 0.1
    # sanity: the same probe is strong within its own mode
    xq0 = np.vstack([t.query.x for t in mode0])
    yq0 = np.concatenate([t.query.y for t in mode0])
    assert np.mean(probe(xq0) == yq0) > 0.5


def test_invalid_configs_rejected():
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(n_modes=0)
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(query_per_class=0)
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(mode_permutations=((0, 1, 2, 3, 3), (0, 1, 2, 3, 4)))
    with pytest.raises(ConfigInvalid):
        sample_multimodal_tasks(DESK, 5, "holdout")


def test_labeled_set_validation():
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((2, 3)), np.array([0, 5]), n_classes=3)
    with pytest.raises(ValueError):
        LabeledSet(np.full((1, 2), np.nan), np.array([0]), n_classes=1)
    with pytest.raises(ValueError):
        Task(
            support=LabeledSet(np.zeros((1, 2)), np.array([0]), 2),
            query=LabeledSet(np.zeros((1, 2)), np.array([1]), 2),
        )


# ---------------------------------------------------------------------------
# embedding files


def make_bank(n_classes=5, per_class=20, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    return {
        cid: rng.standard_normal((per_class, dim)) + 3.0 * cid
        for cid in range(n_classes)
    }


def test_binary_round_trip(tmp_path):
    bank = make_bank()
    path = tmp_path / "bank.emb"
    write_embedding_file(path, bank)
    loaded = read_embedding_file(path)
    assert sorted(loaded) == sorted(bank)
    for cid in bank:
        np.testing.assert_allclose(
            loaded[cid], bank[cid].astype(np.float32), rtol=0, atol=0
        )


def test_exactly_sufficient_pool(tmp_path):
    path = tmp_path / "bank.emb"
    write_embedding_file(path, make_bank(n_classes=5, per_class=20))
    ms = load_embedding_metaset(
        path, n_ways=5, n_shots=1, query_per_class=15, n_tasks=10, seed=0
    )
    assert len(ms) == 10
    for task in ms.tasks:
        assert len(task.support) == 5
        assert len(task.query) == 75
        # within a task, support and query never share an example
        joint = np.vstack([task.support.x, task.query.x])
        assert np.unique(joint, axis=0).shape[0] == joint.shape[0]


def test_insufficient_classes(tmp_path):
    path = tmp_path / "bank.emb"
    write_embedding_file(path, make_bank(n_classes=4))
    with pytest.raises(InsufficientClasses):
        load_embedding_metaset(
            path, n_ways=5, n_shots=1, query_per_class=1, n_tasks=1, seed=0
        )


def test_insufficient_examples(tmp_path):
    path = tmp_path / "bank.emb"
    write_embedding_file(path, make_bank(n_classes=5, per_class=3))
    with pytest.raises(InsufficientExamplesPerClass):
        load_embedding_metaset(
            path, n_ways=5, n_shots=2, query_per_class=2, n_tasks=1, seed=0
        )


def test_embedding_episodes_deterministic(tmp_path):
    path = tmp_path / "bank.emb"
    write_embedding_file(path, make_bank())
    kwargs = dict(n_ways=3, n_shots=2, query_per_class=4, n_tasks=6, seed=9)
    a = load_embedding_metaset(path, **kwargs)
    b = load_embedding_metaset(path, **kwargs)
    for ta, tb in zip(a.tasks, b.tasks):
        assert ta.support.x.tobytes() == tb.support.x.tobytes()
        assert ta.query.x.tobytes() == tb.query.x.tobytes()


def test_malformed_files(tmp_path):
    bad_magic = tmp_path / "bad.emb"
    bad_magic.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(FileMalformed):
        read_embedding_file(bad_magic)

    truncated = tmp_path / "trunc.emb"
    path = tmp_path / "ok.emb"
    write_embedding_file(path, make_bank())
    truncated.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FileMalformed):
        read_embedding_file(truncated)

    with pytest.raises(FileMalformed):
        read_embedding_file(tmp_path / "missing.emb")


def test_csv_fallback(tmp_path):
    path = tmp_path / "bank.csv"
    rows = ["class_id,v0,v1"]
    rng = np.random.default_rng(1)
    for cid in range(3):
        for _ in range(5):
            v = rng.standard_normal(2)
            rows.append(f"{cid},{v[0]},{v[1]}")
    path.write_text("\n".join(rows) + "\n")
    bank = read_embedding_file(path)
    assert sorted(bank) == [0, 1, 2]
    assert bank[0].shape == (5, 2)

    bad = tmp_path / "ragged.csv"
    bad.write_text("0,1.0,2.0\n1,3.0\n")
    with pytest.raises(FileMalformed):
        read_embedding_file(bad)


def test_class_bank_matches_generator_geometry(tmp_path):
    bank = sample_class_bank(DESK, per_class=8)
    # one bank per class over all three splits and both modes
    assert len(bank) == 3 * DESK.n_modes * DESK.classes_per_pool
    path = tmp_path / "gen.emb"
    write_embedding_file(path, bank)
    ms = load_embedding_metaset(
        path, n_ways=5, n_shots=1, query_per_class=2, n_tasks=4, seed=2
    )
    assert len(ms) == 4

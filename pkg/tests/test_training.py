import numpy as np
import pytest

from learnpool import classifier as clf
from learnpool import dataset, training
from learnpool.config import preset
from learnpool.errors import StateError
from learnpool.pooling import NormStats, init_quadrant_maps


@pytest.fixture(scope="module")
def desk():
    cfg = preset("desk").replace(synthetic_count=120, phase1_examples=600, phase2_examples=200,
                                 val_check_interval=50, phase1_check_interval=200,
                                 codebook_patches=1500, k=8)
    samples = dataset.generate_synthetic(cfg.synthetic_count, cfg.n, 0)
    split = dataset.split(samples, cfg.train_fraction, 0)
    cb = training.build_codebook(cfg, split.train, 0)
    return cfg, split, cb


def test_iter_schedule_counts():
    steps = list(training.iter_schedule(25, 10, 10))
    assert [bs for bs, _, _ in steps] == [10, 10, 5]
    assert [seen for _, seen, c in steps if c] == [10, 20, 25]
    assert list(training.iter_schedule(0, 10, 5)) == []


def test_plan_paper_protocol():
    plan = training.plan_schedule(preset("paper"))
    assert plan.phase1_batches == 25_000
    assert plan.phase2_batches == 1_500
    assert plan.boundary == 250_000
    assert plan.phase2_checks == list(range(250_500, 265_001, 500))


def test_phase1_no_examples(desk):
    cfg, split, cb = desk
    cfg = cfg.replace(phase1_examples=0)
    res = training.run_phase1(cfg, split, cb, init_quadrant_maps(cfg.grid_size), seed=0)
    init = clf.ClassifierState.init(cfg.p * cfg.k, cfg.hidden, cfg.t, training.stream(0, "classifier"))
    assert res.classifier.checksum() == init.checksum()
    assert res.stats.frozen and res.classifier.frozen
    assert [r.examples_seen for r in res.history] == [0]


def test_phase1_learns_and_is_deterministic(desk):
    cfg, split, cb = desk
    maps = init_quadrant_maps(cfg.grid_size)
    a = training.run_phase1(cfg, split, cb, maps, seed=0)
    b = training.run_phase1(cfg, split, cb, maps, seed=0)
    assert a.baseline_val_acc == b.baseline_val_acc
    assert a.classifier.checksum() == b.classifier.checksum()
    assert a.baseline_val_acc >= 0.7
    assert [r.examples_seen for r in a.history] == [200, 400, 600]


def test_phase2_freeze_and_zero_eta(desk):
    cfg, split, cb = desk
    maps = init_quadrant_maps(cfg.grid_size)
    p1 = training.run_phase1(cfg, split, cb, maps, seed=0)
    before = (p1.classifier.checksum(), p1.stats.checksum())
    rep = training.run_phase2(cfg.replace(eta_pool=0.0), split, cb, p1.classifier, p1.stats, maps, seed=0)
    assert (p1.classifier.checksum(), p1.stats.checksum()) == before
    assert rep.baseline_val_acc == p1.baseline_val_acc
    assert all(r.val_acc == rep.baseline_val_acc for r in rep.history)
    assert np.array_equal(rep.final_maps.maps, maps.maps)


def test_phase2_tracks_best(desk):
    cfg, split, cb = desk
    maps = init_quadrant_maps(cfg.grid_size)
    p1 = training.run_phase1(cfg, split, cb, maps, seed=0)
    rep = training.run_phase2(cfg.replace(eta_pool=1e-3), split, cb, p1.classifier, p1.stats, maps,
                              seed=0, examples_offset=cfg.phase1_examples)
    assert rep.best_post_pool_acc == max([rep.baseline_val_acc] + [r.val_acc for r in rep.history])
    assert [r.examples_seen for r in rep.history] == [650, 700, 750, 800]
    assert all(r.phase == 2 for r in rep.history)
    assert not np.array_equal(rep.final_maps.maps, maps.maps)


def test_phase2_requires_frozen(desk):
    cfg, split, cb = desk
    maps = init_quadrant_maps(cfg.grid_size)
    state = clf.ClassifierState.init(cfg.p * cfg.k, cfg.hidden, cfg.t, np.random.default_rng(0))
    stats = NormStats(np.zeros(cfg.p * cfg.k), np.ones(cfg.p * cfg.k), frozen=True)
    with pytest.raises(StateError):
        training.run_phase2(cfg, split, cb, state, stats, maps)
    with pytest.raises(StateError):
        training.run_phase2(cfg, split, cb, state.freeze(), NormStats(stats.mu, stats.sigma), maps)


def test_evaluate_rules(desk, rng):
    cfg, split, cb = desk
    maps = init_quadrant_maps(cfg.grid_size)
    p1 = training.run_phase1(cfg, split, cb, maps, seed=0)
    val = split.validation
    # constant outputs with ties: everything predicted as class 0
    const = clf.ClassifierState(np.zeros_like(p1.classifier.v1), p1.classifier.b1,
                                np.zeros_like(p1.classifier.v2), np.zeros(cfg.t))
    freq0 = np.mean([s.label == 0 for s in val])
    assert training.evaluate(const, cb, maps, p1.stats, val) == freq0
    with pytest.raises(ValueError):
        training.evaluate(const, cb, maps, p1.stats, [])


def test_evaluate_untrained_ten_classes(desk, rng):
    cfg, split, cb = desk
    cfg10 = cfg.replace(t=10)
    samples = [dataset.ImageSample(rng.uniform(0, 255, (cfg.n, cfg.n, 3)), int(rng.integers(10)))
               for _ in range(1000)]
    maps = init_quadrant_maps(cfg.grid_size)
    enc = training.GridEncoder(cb)
    H = enc.pooled(maps, [("x", i) for i in range(len(samples))], samples)
    from learnpool.pooling import fit_norm_stats
    stats = fit_norm_stats(H)
    state = clf.ClassifierState.init(cfg.p * cfg.k, cfg.hidden, 10, rng)
    acc = training.evaluate(state, cb, maps, stats, samples, enc, [("x", i) for i in range(len(samples))])
    assert abs(acc - 0.1) <= 0.05


def test_encoder_cache_bounded(desk):
    cfg, split, cb = desk
    enc = training.GridEncoder(cb, cache_size=3)
    keys = [("t", i) for i in range(5)]
    first = enc.grids(keys, split.train[:5])
    assert len(enc._cache) == 3
    again = enc.grids(keys, split.train[:5])
    assert np.array_equal(first, again)


def test_trials_aggregate(desk):
    cfg, split, cb = desk
    cfg = cfg.replace(trials=2, phase1_examples=200, phase2_examples=100)
    samples = dataset.generate_synthetic(cfg.synthetic_count, cfg.n, 0)
    summary = training.run_trials(cfg, samples)
    agg = summary.aggregate()
    assert [t.seed for t in summary.trials] == [0, 1]
    assert agg["baseline_mean"] == pytest.approx(np.mean(summary.baselines))
    assert agg["delta_of_means"] == pytest.approx(agg["mean_of_deltas"])
    single = training.run_trials(cfg.replace(trials=1), samples)
    assert single.aggregate()["baseline_mean"] == summary.trials[0].report.baseline_val_acc
    reversed_summary = training.TrialsSummary(list(reversed(summary.trials)))
    assert reversed_summary.aggregate()["best_mean"] == pytest.approx(agg["best_mean"], abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_phase1_desk_scale_beats_chance(seed):
    cfg = preset("desk").replace(synthetic_count=200, k=8, phase1_examples=2000, codebook_patches=2000)
    samples = dataset.generate_synthetic(cfg.synthetic_count, cfg.n, seed)
    split = dataset.split(samples, cfg.train_fraction, seed)
    cb = training.build_codebook(cfg, split.train, seed)
    res = training.run_phase1(cfg, split, cb, init_quadrant_maps(cfg.grid_size), seed=seed)
    assert res.baseline_val_acc > 0.5 + 0.2

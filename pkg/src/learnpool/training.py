"""Two-phase schedule: train the classifier on fixed quadrant maps, then freeze it
and train the maps.

Every trial draws its randomness from independent streams keyed by
``(seed, stream id)`` so changing one stage never perturbs another.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import classifier as clf
from .codebook import Codebook, encode_image, train_kmeans
from .config import TrainConfig
from .dataset import DatasetSplit, split as split_samples
from .errors import StateError
from .pooling import (NormStats, PoolMapSet, apply_norm, fit_norm_stats, init_quadrant_maps,
                      pool_forward, pool_update)
from .preprocess import apply_whitening, extract_patches, fit_whitening, normalize_patch

log = logging.getLogger(__name__)

_STREAMS = {"codebook": 1, "kmeans": 2, "classifier": 3, "phase1": 4, "phase2": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[name]])


class HistoryRow(NamedTuple):
    examples_seen: int
    phase: int
    loss: float      # mean validation loss at the check
    val_acc: float


# -- schedule -------------------------------------------------------------

def iter_schedule(total: int, batch_size: int, interval: int, final_check: bool = True):
    """Yield ``(batch_size, seen_after, check)`` for each mini-batch of a phase.

    A check fires whenever the running example count reaches a new multiple of
    ``interval`` (interval 0 disables periodic checks) and, with
    ``final_check``, after the last batch.
    """
    seen = 0
    while seen < total:
        bs = min(batch_size, total - seen)
        before, seen = seen, seen + bs
        periodic = interval > 0 and seen // interval > before // interval
        yield bs, seen, periodic or (final_check and seen == total)


@dataclass
class SchedulePlan:
    phase1_batches: int
    phase1_rows: list      # cumulative counts of phase-1 validation rows
    phase2_batches: int
    phase2_checks: list    # cumulative counts of phase-2 validation checks
    boundary: int          # cumulative count where phase 2 begins
    phase2_examples: int

    def describe(self) -> str:
        return "\n".join([
            f"phase1: examples={self.boundary} batches={self.phase1_batches} "
            f"validation_rows={len(self.phase1_rows)}",
            f"boundary: examples_seen={self.boundary} (classifier and normalization frozen; "
            f"baseline evaluated with starting maps)",
            f"phase2: examples={self.phase2_examples} batches={self.phase2_batches} "
            f"validation_checks={len(self.phase2_checks)}",
            "phase2 check points: " + ",".join(str(c) for c in self.phase2_checks),
        ])


def plan_schedule(config: TrainConfig) -> SchedulePlan:
    """Count batches and validation checks exactly as the training loops will."""
    p1 = list(iter_schedule(config.phase1_examples, config.batch_size, config.phase1_check_interval))
    p2 = list(iter_schedule(config.phase2_examples, config.batch_size, config.val_check_interval))
    boundary = config.phase1_examples
    return SchedulePlan(
        phase1_batches=len(p1),
        phase1_rows=[seen for _, seen, check in p1 if check] or [0],
        phase2_batches=len(p2),
        phase2_checks=[boundary + seen for _, seen, check in p2 if check],
        boundary=boundary,
        phase2_examples=config.phase2_examples,
    )


# -- encoding -------------------------------------------------------------

class GridEncoder:
    """Encodes images to (P, P, k) grids with a bounded LRU cache keyed by caller ids."""

    def __init__(self, codebook: Codebook, cache_size: int = 0, threads: int = 1):
        self.codebook = codebook
        self.cache_size = cache_size
        self.threads = max(1, threads)
        self._cache: OrderedDict = OrderedDict()

    def _encode(self, sample) -> np.ndarray:
        return encode_image(self.codebook, sample)

    def grids(self, keys, samples) -> np.ndarray:
        out = [None] * len(keys)
        missing = []
        for j, key in enumerate(keys):
            if key in self._cache:
                self._cache.move_to_end(key)
                out[j] = self._cache[key]
            else:
                missing.append(j)
        if missing:
            todo = [samples[j] for j in missing]
            if self.threads > 1 and len(todo) > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    encoded = list(ex.map(self._encode, todo))
            else:
                encoded = [self._encode(s) for s in todo]
            for j, g in zip(missing, encoded):
                out[j] = g
                if self.cache_size > 0:
                    self._cache[keys[j]] = g
                    self._cache.move_to_end(keys[j])
                    while len(self._cache) > self.cache_size:
                        self._cache.popitem(last=False)
        return np.stack(out)

    def pooled(self, maps: PoolMapSet, keys, samples, chunk: int = 64) -> np.ndarray:
        """Raw pooled vectors (N, p*k), encoded in chunks to bound memory."""
        parts = [pool_forward(maps, self.grids(keys[s:s + chunk], samples[s:s + chunk]))
                 for s in range(0, len(samples), chunk)]
        return np.concatenate(parts) if parts else np.zeros((0, maps.p * self.codebook.k))


def _keys(tag: str, count: int) -> list:
    return [(tag, i) for i in range(count)]


# -- stages ---------------------------------------------------------------

def build_codebook(config: TrainConfig, train, seed: int) -> Codebook:
    """Sample patches from training images, fit whitening, run k-means."""
    rng = stream(seed, "codebook")
    P = (config.n - config.w) // config.stride + 1
    count = config.codebook_patches
    img_idx = rng.integers(0, len(train), size=count)
    rows = rng.integers(0, P, size=count)
    cols = rng.integers(0, P, size=count)
    d = 3 * config.w * config.w
    X = np.empty((count, d))
    for j in np.unique(img_idx):
        sel = np.flatnonzero(img_idx == j)
        grid = extract_patches(train[j], config.w, config.stride)
        X[sel] = grid[rows[sel], cols[sel]]
    X = normalize_patch(X, config.eps_norm)
    whitening = fit_whitening(X, config.eps_zca)
    Xw = apply_whitening(whitening, X)
    return train_kmeans(Xw, config.k, config.kmeans_iters,
                        seed=int(stream(seed, "kmeans").integers(2**63)),
                        whitening=whitening, w=config.w, stride=config.stride,
                        eps_norm=config.eps_norm)


def _val_metrics(state, h_bar: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(mean loss, accuracy) over pre-normalized inputs."""
    out = clf.forward(state, h_bar)
    target = clf.one_hot(labels, state.outputs)
    loss = float(0.5 * np.mean(np.sum((out - target) ** 2, axis=1)))
    acc = float(np.mean(np.argmax(out, axis=1) == labels))
    return loss, acc


def evaluate(classifier, codebook, maps, stats, samples, encoder: GridEncoder | None = None,
             keys=None) -> float:
    """Fraction of samples whose arg-max output equals the label (ties to the lowest class)."""
    return _evaluate(classifier, codebook, maps, stats, samples, encoder, keys)[1]


def _evaluate(classifier, codebook, maps, stats, samples, encoder=None, keys=None):
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    encoder = encoder or GridEncoder(codebook)
    keys = keys if keys is not None else [("eval", i) for i in range(len(samples))]
    h_bar = apply_norm(stats, encoder.pooled(maps, keys, samples))
    labels = np.array([s.label for s in samples])
    return _val_metrics(classifier, h_bar, labels)


class Phase1Result(NamedTuple):
    classifier: clf.ClassifierState
    stats: NormStats
    baseline_val_acc: float
    history: list


def run_phase1(config: TrainConfig, data: DatasetSplit, codebook: Codebook, maps: PoolMapSet,
               seed: int | None = None, encoder: GridEncoder | None = None) -> Phase1Result:
    """Fit and freeze normalization, then train the classifier on fixed maps.

    Maps are fixed throughout, so each image's pooled vector is computed once.
    """
    seed = config.seed if seed is None else seed
    encoder = encoder or GridEncoder(codebook, config.cache_size)
    train, val = data.train, data.validation
    H_train = encoder.pooled(maps, _keys("train", len(train)), train)
    H_val = encoder.pooled(maps, _keys("val", len(val)), val)
    stats = fit_norm_stats(H_train, config.sigma_floor)
    X_train, X_val = apply_norm(stats, H_train), apply_norm(stats, H_val)
    y_train = np.array([s.label for s in train])
    y_val = np.array([s.label for s in val])
    T_train = clf.one_hot(y_train, config.t)

    state = clf.ClassifierState.init(maps.p * codebook.k, config.hidden, config.t,
                                     stream(seed, "classifier"), config.activation)
    rng = stream(seed, "phase1")
    history = []
    acc = None
    for bs, seen, check in iter_schedule(config.phase1_examples, config.batch_size,
                                         config.phase1_check_interval):
        idx = rng.integers(0, len(train), size=bs)
        state, _ = clf.sgd_step(state, X_train[idx], T_train[idx], config.eta_net)
        if check:
            loss, acc = _val_metrics(state, X_val, y_val)
            history.append(HistoryRow(seen, 1, loss, acc))
            log.info("phase1 examples=%d val_loss=%.5f val_acc=%.4f", seen, loss, acc)
    if acc is None:  # no batches ran
        loss, acc = _val_metrics(state, X_val, y_val)
        history.append(HistoryRow(0, 1, loss, acc))
    return Phase1Result(state.freeze(), stats, acc, history)


@dataclass
class TrainReport:
    baseline_val_acc: float
    best_post_pool_acc: float
    history: list
    best_maps: PoolMapSet
    final_maps: PoolMapSet | None = None
    best_examples_seen: int = 0

    @property
    def delta(self) -> float:
        return self.best_post_pool_acc - self.baseline_val_acc


def run_phase2(config: TrainConfig, data: DatasetSplit, codebook: Codebook,
               classifier: clf.ClassifierState, stats: NormStats, maps: PoolMapSet,
               seed: int | None = None, encoder: GridEncoder | None = None,
               examples_offset: int = 0) -> TrainReport:
    """Train the pool maps against the frozen classifier.

    Validation accuracy with the starting maps is measured first and seeds the
    best-so-far tracking; that measurement is the baseline. Rows are recorded
    at cumulative example counts ``examples_offset + seen``.
    """
    if not classifier.frozen:
        raise StateError("classifier must be frozen before pool learning")
    if not stats.frozen:
        raise StateError("normalization statistics must be frozen before pool learning")
    seed = config.seed if seed is None else seed
    encoder = encoder or GridEncoder(codebook, config.cache_size)
    train, val = data.train, data.validation
    val_keys = _keys("val", len(val))
    train_keys = _keys("train", len(train))
    T = clf.one_hot(np.array([s.label for s in train]), config.t)

    _, baseline = _evaluate(classifier, codebook, maps, stats, val, encoder, val_keys)
    best, best_maps, best_seen = baseline, maps.copy(), examples_offset
    rng = stream(seed, "phase2")
    history = []
    for bs, seen, check in iter_schedule(config.phase2_examples, config.batch_size,
                                         config.val_check_interval):
        idx = rng.integers(0, len(train), size=bs)
        grids = encoder.grids([train_keys[i] for i in idx], [train[i] for i in idx])
        h_bar = apply_norm(stats, pool_forward(maps, grids))
        res = clf.backward(classifier, h_bar, T[idx])
        maps = pool_update(maps, grids, res.delta0, stats, config.eta_pool)
        if check:
            loss, acc = _evaluate(classifier, codebook, maps, stats, val, encoder, val_keys)
            history.append(HistoryRow(examples_offset + seen, 2, loss, acc))
            log.info("phase2 examples=%d val_loss=%.5f val_acc=%.4f", seen, loss, acc)
            if acc > best:
                best, best_maps, best_seen = acc, maps.copy(), examples_offset + seen
    return TrainReport(baseline, best, history, best_maps, maps, best_seen)


# -- trials ---------------------------------------------------------------

@dataclass
class TrialResult:
    trial: int
    seed: int
    report: TrainReport
    phase1_baseline: float
    codebook: Codebook
    classifier: clf.ClassifierState
    stats: NormStats

    @property
    def history(self) -> list:
        return self.report.history


def run_trial(config: TrainConfig, samples, trial: int = 0, threads: int = 1) -> TrialResult:
    seed = config.seed + trial
    data = split_samples(samples, config.train_fraction, seed)
    codebook = build_codebook(config, data.train, seed)
    encoder = GridEncoder(codebook, config.cache_size, threads)
    maps = init_quadrant_maps(config.grid_size)
    p1 = run_phase1(config, data, codebook, maps, seed, encoder)
    report = run_phase2(config, data, codebook, p1.classifier, p1.stats, maps, seed, encoder,
                        examples_offset=config.phase1_examples)
    report.history = p1.history + report.history
    log.info("trial %d baseline=%.4f best=%.4f", trial, report.baseline_val_acc,
             report.best_post_pool_acc)
    return TrialResult(trial, seed, report, p1.baseline_val_acc, codebook, p1.classifier, p1.stats)


@dataclass
class TrialsSummary:
    trials: list = field(default_factory=list)

    @property
    def baselines(self) -> np.ndarray:
        return np.array([t.report.baseline_val_acc for t in self.trials])

    @property
    def bests(self) -> np.ndarray:
        return np.array([t.report.best_post_pool_acc for t in self.trials])

    @property
    def deltas(self) -> np.ndarray:
        return self.bests - self.baselines

    def aggregate(self) -> dict:
        b, best, d = self.baselines, self.bests, self.deltas
        return {
            "trials": len(self.trials),
            "baseline_mean": float(b.mean()), "baseline_std": float(b.std()),
            "best_mean": float(best.mean()), "best_std": float(best.std()),
            "mean_of_deltas": float(d.mean()),
            "delta_of_means": float(best.mean() - b.mean()),
        }

    def format(self) -> str:
        lines = [f"{'trial':>5} {'seed':>8} {'baseline':>9} {'best':>9} {'delta':>9}"]
        for t in self.trials:
            r = t.report
            lines.append(f"{t.trial:>5} {t.seed:>8} {r.baseline_val_acc:>9.4f} "
                         f"{r.best_post_pool_acc:>9.4f} {r.delta:>+9.4f}")
        a = self.aggregate()
        lines.append(f"mean baseline {a['baseline_mean']:.4f} (std {a['baseline_std']:.4f})  "
                     f"mean best {a['best_mean']:.4f} (std {a['best_std']:.4f})")
        lines.append(f"mean of per-trial deltas {a['mean_of_deltas']:+.4f}  "
                     f"difference of means {a['delta_of_means']:+.4f}")
        return "\n".join(lines)


def run_trials(config: TrainConfig, samples, threads: int = 1, on_trial=None) -> TrialsSummary:
    """Trial r uses seed ``config.seed + r``; ``on_trial`` sees each result as it lands."""
    if config.trials < 1:
        raise ValueError("trials must be >= 1")
    summary = TrialsSummary()
    for r in range(config.trials):
        result = run_trial(config, samples, r, threads)
        summary.trials.append(result)
        if on_trial is not None:
            on_trial(result)
    return summary

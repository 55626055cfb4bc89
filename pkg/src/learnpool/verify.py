"""Independent oracles for the pooling and classifier gradients.

Nothing here calls the code paths it checks: the loss used for finite
differences is a separate straight-line evaluation carried out in extended
precision (``np.longdouble``), which keeps central-difference roundoff far
below the 1e-5 relative tolerance used by the checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import pooling

EXT = np.longdouble


def rel_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)


def _act(x, activation):
    if activation == "sigmoid":
        return 1 / (1 + np.exp(-x))
    return np.tanh(x)


def _loss_ext(W, g, mu, sigma, v1, b1, v2, b2, target, activation) -> EXT:
    """J for one sample, written out loop-by-loop in extended precision."""
    p, P, _ = W.shape
    k = g.shape[2]
    h = np.zeros(p * k, dtype=EXT)
    for i in range(p):
        for c in range(k):
            h[i * k + c] = np.sum(W[i] * g[:, :, c])
    h_bar = (h - mu) / sigma
    a = _act(v1 @ h_bar + b1, activation)
    out = v2 @ a + b2
    diff = out - target
    return EXT(0.5) * np.sum(diff * diff)


def _ext(*arrays):
    return [np.asarray(x, dtype=EXT) for x in arrays]


def brute_pool(maps, g) -> np.ndarray:
    """Quadruple-loop weighted pooling, pool-major output."""
    W = maps.maps if isinstance(maps, pooling.PoolMapSet) else np.asarray(maps)
    g = np.asarray(g, dtype=np.float64)
    p, P, _ = W.shape
    k = g.shape[2]
    h = np.zeros(p * k)
    for i in range(p):
        for c in range(k):
            acc = 0.0
            for m in range(P):
                for n in range(P):
                    acc += W[i, m, n] * g[m, n, c]
            h[i * k + c] = acc
    return h


def quadrant_means(g: np.ndarray) -> np.ndarray:
    """Channel means over the four quadrants, split at ceil(P/2), pool-major."""
    g = np.asarray(g, dtype=np.float64)
    P = g.shape[0]
    s = math.ceil(P / 2)
    blocks = [g[:s, :s], g[:s, s:], g[s:, :s], g[s:, s:]]
    return np.concatenate([b.reshape(-1, g.shape[2]).mean(axis=0) for b in blocks])


def check_quadrant_equivalence(P: int, g: np.ndarray, tol: float = 1e-12) -> bool:
    if P < 2:
        raise ValueError("P must be >= 2")
    h = pooling.pool_forward(pooling.init_quadrant_maps(P), g)
    return bool(np.all(np.abs(h - quadrant_means(g)) <= tol * np.maximum(1.0, np.abs(h))))


def fd_pool_gradient(maps, g, stats, state, target, step: float = 1e-6) -> np.ndarray:
    """Central-difference dJ/dW for every (pool, m, n); returns a (p, P, P) array."""
    W = np.array(maps.maps, dtype=EXT)
    g_, mu, sigma, v1, b1, v2, b2, y = _ext(g, stats.mu, stats.sigma, state.v1, state.b1,
                                           state.v2, state.b2, target)
    grad = np.zeros(W.shape)
    for idx in np.ndindex(*W.shape):
        orig = W[idx]
        W[idx] = orig + EXT(step)
        jp = _loss_ext(W, g_, mu, sigma, v1, b1, v2, b2, y, state.activation)
        W[idx] = orig - EXT(step)
        jm = _loss_ext(W, g_, mu, sigma, v1, b1, v2, b2, y, state.activation)
        W[idx] = orig
        grad[idx] = float((jp - jm) / (2 * EXT(step)))
    return grad


def _classifier_loss_ext(params, h_bar, target, activation):
    v1, b1, v2, b2 = params
    a = _act(v1 @ h_bar + b1, activation)
    diff = v2 @ a + b2 - target
    return EXT(0.5) * np.sum(diff * diff)


def fd_classifier_gradients(state, h_bar, target, step: float = 1e-6) -> dict:
    """Central differences for v1, b1, v2, b2 and the input sensitivity delta0.

    ``delta0`` is reported as -dJ/dh_bar to match the backprop convention.
    """
    params = _ext(state.v1, state.b1, state.v2, state.b2)
    x, y = _ext(h_bar, target)
    out = {}
    for name, arr in zip(("v1", "b1", "v2", "b2"), params):
        grad = np.zeros(arr.shape)
        for idx in np.ndindex(*arr.shape):
            orig = arr[idx]
            arr[idx] = orig + EXT(step)
            jp = _classifier_loss_ext(params, x, y, state.activation)
            arr[idx] = orig - EXT(step)
            jm = _classifier_loss_ext(params, x, y, state.activation)
            arr[idx] = orig
            grad[idx] = float((jp - jm) / (2 * EXT(step)))
        out[name] = grad
    d0 = np.zeros(x.shape)
    for j in range(x.shape[0]):
        orig = x[j]
        x[j] = orig + EXT(step)
        jp = _classifier_loss_ext(params, x, y, state.activation)
        x[j] = orig - EXT(step)
        jm = _classifier_loss_ext(params, x, y, state.activation)
        x[j] = orig
        d0[j] = -float((jp - jm) / (2 * EXT(step)))
    out["delta0"] = d0
    return out


@dataclass
class Instance:
    maps: pooling.PoolMapSet
    g: np.ndarray
    stats: pooling.NormStats
    state: clf.ClassifierState
    target: np.ndarray


def random_instance(rng: np.random.Generator, P: int = 4, k: int = 2, p: int = 4,
                    hidden: int = 3, t: int = 3, activation: str = "sigmoid") -> Instance:
    """A small, well-conditioned pooling + classifier problem.

    Grids are non-negative like triangle codes; normalization statistics are
    drawn so h_bar stays O(1) and the hidden units are not saturated.
    """
    maps = pooling.PoolMapSet(rng.normal(0.0, 1.0 / (P * P), size=(p, P, P)))
    g = rng.uniform(0.0, 1.0, size=(P, P, k))
    h = pooling.pool_forward(maps, g)
    stats = pooling.NormStats(h + rng.normal(0.0, 0.1, size=h.shape),
                              rng.uniform(0.5, 2.0, size=h.shape), frozen=True)
    state = clf.ClassifierState.init(p * k, hidden, t, rng, activation)
    state = clf.ClassifierState(state.v1, rng.normal(0, 0.3, hidden), state.v2,
                                rng.normal(0, 0.3, t), activation)
    target = clf.one_hot(rng.integers(t), t)
    return Instance(maps, g, stats, state, target)


def analytic_pool_gradient(inst: Instance, eta: float = 1.0, update=None) -> np.ndarray:
    """-(map change)/eta from one single-image pool update, i.e. dJ/dW."""
    update = update or pooling.pool_update
    h_bar = pooling.apply_norm(inst.stats, pooling.pool_forward(inst.maps, inst.g))
    res = clf.backward(inst.state, h_bar, inst.target)
    new = update(inst.maps, inst.g[None], res.delta0[None], inst.stats, eta)
    return -(new.maps - inst.maps.maps) / eta


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    worst_coordinate: tuple = ()
    worst_block: str = ""
    block_errors: dict = field(default_factory=dict)
    instances: int = 0
    threshold: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.threshold

    def add(self, block: str, analytic, oracle, coord_of=None):
        err = rel_error(analytic, oracle)
        worst = float(err.max()) if err.size else 0.0
        self.block_errors[block] = max(self.block_errors.get(block, 0.0), worst)
        if err.size and (worst > self.max_rel_error or not self.worst_block):
            self.max_rel_error = worst
            self.worst_block = block
            self.worst_coordinate = tuple(int(i) for i in np.unravel_index(int(err.argmax()), err.shape))

    def format_table(self) -> str:
        lines = [f"{'block':<8}{'max rel error':>16}"]
        for name, err in self.block_errors.items():
            lines.append(f"{name:<8}{err:>16.3e}")
        lines.append(f"{'overall':<8}{self.max_rel_error:>16.3e}  worst={self.worst_block}{self.worst_coordinate}")
        return "\n".join(lines)

    def summary_line(self) -> str:
        blocks = " ".join(f"{k}={v:.3e}" for k, v in self.block_errors.items())
        return (f"gradcheck status={'PASS' if self.passed else 'FAIL'} instances={self.instances} "
                f"max_rel_error={self.max_rel_error:.3e} threshold={self.threshold:.1e} "
                f"worst={self.worst_block}{list(self.worst_coordinate)} {blocks}")


def run_gradcheck(instances: int = 10, P: int = 4, k: int = 2, hidden: int = 3, t: int = 3,
                  p: int = 4, step: float = 1e-6, threshold: float = 1e-5, seed: int = 0,
                  eta: float = 1.0, update=None) -> GradCheckReport:
    """Check W (via the pool update) and all classifier blocks against finite differences.

    With ``eta == 0`` the W block instead checks that the update leaves the maps
    untouched.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport(threshold=threshold)
    update = update or pooling.pool_update
    for _ in range(instances):
        inst = random_instance(rng, P=P, k=k, p=p, hidden=hidden, t=t)
        h_bar = pooling.apply_norm(inst.stats, pooling.pool_forward(inst.maps, inst.g))
        res = clf.backward(inst.state, h_bar, inst.target)
        fd = fd_classifier_gradients(inst.state, h_bar, inst.target, step)
        for name in ("v1", "b1", "v2", "b2"):
            report.add(name, res.grads[name], fd[name])
        report.add("delta0", res.delta0, fd["delta0"])
        if eta == 0:
            new = update(inst.maps, inst.g[None], res.delta0[None], inst.stats, 0.0)
            report.add("W", new.maps, inst.maps.maps)
        else:
            fdw = fd_pool_gradient(inst.maps, inst.g, inst.stats, inst.state, inst.target, step)
            report.add("W", analytic_pool_gradient(inst, eta, update), fdw)
        report.instances += 1
    return report

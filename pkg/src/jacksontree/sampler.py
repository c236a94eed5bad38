"""Importance-sampling and plain Monte Carlo estimation of overflow probabilities.

Paths start at ``(1, 0, ..., 0)`` and run until the buffer overflows or the
network empties.  Under the IS policy each step draws from the
weight-averaged tilted kernel

    pbar(v | x) = sum_l w_l(x / n) * pbar_{b_x}(q_l)(v)

and the log likelihood ratio ``log p(v) - log pbar(v | x)`` is accumulated on
every sampled step, including steps whose jump is blocked by an empty node.
"""
from __future__ import annotations

import enum
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _walk
from .network import BufferStructure, SharedBuffer, TreeNetwork, exit_test
from .subsolution import (
    GradientTable,
    MollifierParams,
    _numerators,
    build_gradient_table,
    choose_params,
    weights,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 10**9
BLOCK_SIZE = 64


class StepBudgetExceeded(RuntimeError):
    pass


class Outcome(enum.IntEnum):
    EMPTIED = _walk.EMPTIED
    OVERFLOW = _walk.OVERFLOW


class Policy(str, enum.Enum):
    IS = "is"
    NAIVE = "naive"


# kernels ------------------------------------------------------------------


@dataclass(frozen=True)
class JumpDistribution:
    labels: tuple[tuple[int, int], ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("jump probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "probs", p)

    def as_dict(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.labels, self.probs.tolist()))

    def __getitem__(self, label: tuple[int, int]) -> float:
        return float(self.probs[self.labels.index(label)])

    def total_variation(self, other: "JumpDistribution") -> float:
        return 0.5 * float(np.abs(self.probs - other.probs).sum())


def boundary_of(x) -> tuple[int, ...]:
    return tuple(int(v > 0) for v in np.asarray(x))


def constrain(x, v) -> np.ndarray:
    """Zero out a jump that would take a customer from an empty node."""
    x = np.asarray(x)
    v = np.asarray(v)
    if np.any((x == 0) & (v < 0)):
        return np.zeros_like(v)
    return v


def nominal_distribution(net: TreeNetwork) -> JumpDistribution:
    return JumpDistribution(net.jumps.labels, net.jumps.prob.copy())


def is_kernel(net: TreeNetwork, b, q) -> JumpDistribution:
    """Exponentially tilted jump law on boundary ``b`` for gradient ``q``.

    Jumps out of nonempty nodes and the arrival are tilted by
    ``exp((q[src] - q[dst]) / 2)`` (the outside has ``q = 0``); jumps out of
    empty nodes keep their nominal weight.  Everything is renormalized by
    ``N_b(q)``.
    """
    num = _numerators(net, np.asarray(b), np.asarray(q, dtype=float))
    return JumpDistribution(net.jumps.labels, num / num.sum())


class KernelCache:
    """Lazily built per-(boundary, piece) kernels for one gradient table."""

    def __init__(self, net: TreeNetwork, table: GradientTable):
        self.net = net
        self.table = table
        self._store: dict[tuple[tuple[int, ...], int], np.ndarray] = {}

    def get(self, b: tuple[int, ...], l: int) -> np.ndarray:
        key = (b, l)
        hit = self._store.get(key)
        if hit is None:
            hit = is_kernel(self.net, b, self.table.gradients[l]).probs
            self._store[key] = hit
        return hit

    def __len__(self) -> int:
        return len(self._store)


def averaged_kernel(net: TreeNetwork, x, n: int, table: GradientTable,
                    params: MollifierParams, cache: KernelCache | None = None) -> JumpDistribution:
    x = np.asarray(x)
    cache = KernelCache(net, table) if cache is None else cache
    b = boundary_of(x)
    w = weights(x / n, table, params)
    mix = sum(w[l] * cache.get(b, l) for l in range(len(table)))
    return JumpDistribution(net.jumps.labels, mix / mix.sum())


# path simulation ------------------------------------------------------------


@dataclass(frozen=True)
class PathOutcome:
    hit: Outcome
    steps: int
    log_lr: float

    @property
    def contribution(self) -> float:
        return math.exp(self.log_lr) if self.hit == Outcome.OVERFLOW else 0.0


class Simulator:
    """Everything a batch of paths needs, flattened into arrays for the compiled loop."""

    def __init__(self, net: TreeNetwork, buf: BufferStructure, n: int | None = None,
                 table: GradientTable | None = None, params: MollifierParams | None = None,
                 policy: Policy | str = Policy.IS, max_steps: int = DEFAULT_MAX_STEPS):
        self.net = net
        self.buf = buf if n is None else buf.with_n(n)
        self.n = self.buf.n
        self.policy = Policy(policy)
        self.max_steps = int(max_steps)
        jumps = net.jumps
        self._src = jumps.src
        self._dst = jumps.dst
        self._prob = jumps.prob
        self._logp = np.log(jumps.prob)
        self.shared = isinstance(self.buf, SharedBuffer)
        self._sizes = (np.zeros(net.d, dtype=np.int64) if self.shared
                       else self.buf.sizes.astype(np.int64))
        if self.policy is Policy.IS:
            if params is None:
                raise ValueError("IS policy needs mollifier parameters")
            self.table = table if table is not None else build_gradient_table(net)
            self.params = params
            G = np.ascontiguousarray(self.table.gradients)
            ones = np.ones((len(self.table), net.d), dtype=np.int64)
            self._tilt = np.ascontiguousarray(_numerators(net, ones, G))
            self._grads = G
            self._offsets = 2.0 * params.gamma - self.table.alphas * params.epsilon
            self._inv_delta = 1.0 / params.delta
        else:
            self.table = table
            self.params = params
            self._tilt = np.zeros((1, len(jumps)))
            self._grads = np.zeros((1, net.d))
            self._offsets = np.zeros(1)
            self._inv_delta = 1.0

    def run(self, gen: np.random.Generator, count: int, status=None, steps=None,
            loglr=None, start: int = 0):
        if status is None:
            status = np.empty(count, dtype=np.int64)
            steps = np.empty(count, dtype=np.int64)
            loglr = np.empty(count)
        _walk.run_paths(gen, count, self.net.d, self._src, self._dst, self._prob,
                        self._logp, self._tilt, self._grads, self._offsets,
                        self._inv_delta, self.n, self.shared, self._sizes,
                        self.policy is Policy.NAIVE, self.max_steps,
                        status, steps, loglr, start)
        return status, steps, loglr

    def kernel_at(self, x) -> np.ndarray:
        """The compiled loop's kernel at ``x`` (for cross-checking)."""
        kernel = np.empty(len(self._prob))
        if self.policy is Policy.NAIVE:
            return self._prob.copy()
        _walk.fill_kernel(np.asarray(x, dtype=np.int64), 1.0 / self.n, self._src, self._prob,
                          self._tilt, self._grads, self._offsets, self._inv_delta, kernel,
                          np.empty(len(self._offsets)), np.empty(len(self._prob)))
        return kernel


def simulate_path(net: TreeNetwork, buf: BufferStructure, n: int | None,
                  policy: Policy | str, rng: np.random.Generator,
                  table: GradientTable | None = None, params: MollifierParams | None = None,
                  max_steps: int = DEFAULT_MAX_STEPS) -> PathOutcome:
    sim = Simulator(net, buf, n, table, params, policy, max_steps)
    status, steps, loglr = sim.run(rng, 1)
    if status[0] == _walk.BUDGET:
        raise StepBudgetExceeded(f"path did not terminate within {max_steps} steps")
    return PathOutcome(Outcome(int(status[0])), int(steps[0]), float(loglr[0]))


# estimation ---------------------------------------------------------------------


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for a block of paths: Philox keyed by the seed, counter set by block."""
    key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(counter=[0, 0, 0, block], key=key))


@dataclass(frozen=True)
class EstimatorSummary:
    K: int
    p_hat: float
    std_err: float
    ci95: tuple[float, float]
    second_moment: float
    hit_count: int
    seed: int
    wall_time: float
    n: int = 0
    policy: str = "is"
    mean_steps: float = 0.0

    @property
    def rel_err(self) -> float:
        return self.std_err / self.p_hat if self.p_hat > 0 else math.inf

    def to_json(self, timing: bool = True) -> dict:
        out = {
            "p_hat": self.p_hat,
            "std_err": self.std_err,
            "ci95": list(self.ci95),
            "K": self.K,
            "seed": self.seed,
            "hits": self.hit_count,
            "second_moment": self.second_moment,
        }
        if timing:
            out["wall_ms"] = round(self.wall_time * 1000.0, 3)
        return out


def summarize(status: np.ndarray, loglr: np.ndarray, seed: int = 0, wall_time: float = 0.0,
              n: int = 0, policy: str = "is", steps: np.ndarray | None = None) -> EstimatorSummary:
    """Reduce per-path outcomes in path order, working in a rescaled space to dodge underflow."""
    K = len(status)
    hits = status == _walk.OVERFLOW
    hit_count = int(hits.sum())
    if hit_count == 0:
        p_hat = se = m2 = 0.0
    else:
        top = float(np.max(loglr[hits]))
        c = np.where(hits, np.exp(np.where(hits, loglr, top) - top), 0.0)
        mean_s = math.fsum(c) / K
        var_s = math.fsum((c - mean_s) ** 2) / (K - 1)
        m2_s = math.fsum(c * c) / K
        scale = math.exp(top)
        p_hat = mean_s * scale
        se = math.sqrt(var_s / K) * scale
        m2 = m2_s * scale * scale if m2_s > 0 else 0.0
        if scale > 0 and m2 == 0.0 and m2_s > 0:
            m2 = math.exp(math.log(m2_s) + 2 * top)
    if p_hat - 2 * se > 1.0:
        warnings.warn(f"estimate {p_hat:.3g} is implausibly above one", RuntimeWarning,
                      stacklevel=2)
    mean_steps = float(np.mean(steps)) if steps is not None else 0.0
    return EstimatorSummary(K=K, p_hat=p_hat, std_err=se, ci95=(p_hat - 2 * se, p_hat + 2 * se),
                            second_moment=m2, hit_count=hit_count, seed=seed,
                            wall_time=wall_time, n=n, policy=str(policy), mean_steps=mean_steps)


def run_paths(sim: Simulator, K: int, seed: int, threads: int = 1,
              block_size: int = BLOCK_SIZE):
    """Run ``K`` paths split into fixed blocks; outcome arrays are independent of ``threads``."""
    status = np.empty(K, dtype=np.int64)
    steps = np.empty(K, dtype=np.int64)
    loglr = np.empty(K)
    starts = list(range(0, K, block_size))

    def work(j: int):
        lo = starts[j]
        count = min(block_size, K - lo)
        sim.run(block_generator(seed, j), count, status, steps, loglr, lo)

    if threads <= 1:
        for j in range(len(starts)):
            work(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(starts))))
    if np.any(status == _walk.BUDGET):
        raise StepBudgetExceeded(f"a path exceeded the budget of {sim.max_steps} steps")
    return status, steps, loglr


def estimate(net: TreeNetwork, buf: BufferStructure, n: int | None = None, K: int = 10_000,
             params: MollifierParams | None = None, policy: Policy | str = Policy.IS,
             seed: int = 0, threads: int = 1, table: GradientTable | None = None,
             max_steps: int = DEFAULT_MAX_STEPS) -> EstimatorSummary:
    """Estimate ``P_s(hit the overflow set before emptying)`` from ``K`` independent paths.

    Parameters
    ----------
    net, buf
        Network and buffer structure; ``n`` overrides the buffer's scale.
    params
        Mollifier parameters (required for the IS policy; see
        :func:`~jacksontree.subsolution.choose_params`).
    policy
        ``"is"`` for the subsolution-based change of measure, ``"naive"`` for
        plain Monte Carlo.
    seed
        Master seed.  Results are bit-identical for a given seed regardless of
        ``threads``.
    """
    if K < 2:
        raise ValueError("need at least two paths for a standard error")
    policy = Policy(policy)
    t0 = time.perf_counter()
    sim = Simulator(net, buf, n, table, params, policy, max_steps)
    status, steps, loglr = run_paths(sim, K, seed, threads)
    wall = time.perf_counter() - t0
    out = summarize(status, loglr, seed, wall, sim.n, policy.value, steps)
    log.info("n=%d K=%d policy=%s p_hat=%.4g se=%.3g (%.2fs)", sim.n, K, policy.value,
             out.p_hat, out.std_err, wall)
    return out


# decay diagnostics --------------------------------------------------------------


@dataclass(frozen=True)
class DecayRow:
    n: int
    p_hat: float
    std_err: float
    rate1: float
    rate2: float

    @property
    def ratio(self) -> float:
        return self.rate2 / self.rate1


def decay_diagnostics(net: TreeNetwork, buf: BufferStructure, n_list: Sequence[int],
                      K: int = 10_000, seed: int = 0, C: float | None = None,
                      epsilon: float | None = None, delta: float | None = None,
                      policy: Policy | str = Policy.IS, threads: int = 1) -> list[DecayRow]:
    """Empirical first- and second-moment decay rates ``-log(.)/n`` over a sweep of ``n``.

    For an asymptotically optimal scheme the second-moment rate approaches
    twice the first-moment rate.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    policy = Policy(policy)
    table = build_gradient_table(net) if policy is Policy.IS else None
    rows = []
    for n in n_list:
        params = (choose_params(net, buf, n, C=C, epsilon=epsilon, delta=delta)
                  if policy is Policy.IS else None)
        s = estimate(net, buf, n, K, params, policy, seed, threads, table)
        r1 = -math.log(s.p_hat) / n if s.p_hat > 0 else math.inf
        r2 = -math.log(s.second_moment) / n if s.second_moment > 0 else math.inf
        rows.append(DecayRow(n, s.p_hat, s.std_err, r1, r2))
    return rows


def exit_reached(buf: BufferStructure, x) -> bool:
    return exit_test(buf, np.asarray(x))

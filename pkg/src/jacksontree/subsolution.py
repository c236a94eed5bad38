"""Effective rates, effective gradients and the mollified min-of-affine subsolution.

A *boundary* is a 0/1 tuple ``b`` of length ``d`` with ``b[i - 1] == 0`` when
node ``i`` is empty.  For each boundary the recursion over the tree gives an
effective service rate per node; these define an effective gradient, and the
distinct gradients (with integer offsets ``alpha``) are the affine pieces of
the subsolution

    W_l(x) = 2 * gamma - alpha_l * eps + <q_l, x>
    W(x)   = -delta * log(sum_l exp(-W_l(x) / delta))
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .network import (
    BufferStructure,
    NetworkError,
    TreeNetwork,
    Unstable,
    decay_rate,
)

Boundary = tuple[int, ...]

MAX_DIM = 30
DEDUP_TOL = 1e-12
DEFAULT_C = 2.4


class DimensionTooLarge(ValueError):
    pass


class NonPositive(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def all_boundaries(d: int):
    """All ``2**d`` boundaries in lexicographic order, all-empty first."""
    return itertools.product((0, 1), repeat=d)


def dominating(b: Sequence[int]):
    """Every ``b2 >= b`` componentwise, ``b`` itself included."""
    free = [i for i, v in enumerate(b) if v == 0]
    for bits in itertools.product((0, 1), repeat=len(free)):
        out = list(b)
        for i, v in zip(free, bits):
            out[i] = v
        yield tuple(out)


def _tree_rates(net: TreeNetwork, b: Sequence[int], capped: bool) -> np.ndarray:
    mu = net.mu
    exit_eff = net.rates.mu_exit_eff
    out = np.zeros(net.d)
    for i in reversed(net.order):
        k = i - 1
        if b[k]:
            out[k] = mu[k]
            continue
        total = sum(out[j - 1] for j in net.children[k]) + exit_eff[k]
        out[k] = min(mu[k], total) if capped else total
    return out


def effective_rates(net: TreeNetwork, b: Sequence[int]) -> np.ndarray:
    """Effective service rate of every node on boundary ``b``, computed leaves-up.

    A nonempty node serves at its full rate.  An empty node is credited with the
    effective rates of its children plus the fluid traffic it sends outside,
    capped at its own service rate.
    """
    return _tree_rates(net, b, capped=True)


def simple_rates(net: TreeNetwork, b: Sequence[int]) -> np.ndarray:
    return _tree_rates(net, b, capped=False)


def effective_gradient(net: TreeNetwork, b: Sequence[int]) -> np.ndarray:
    return 2.0 * np.log(net.rates.Lambda / effective_rates(net, b))


def simple_gradient(net: TreeNetwork, b: Sequence[int]) -> np.ndarray:
    return 2.0 * np.log(net.rates.Lambda / simple_rates(net, b))


def lift_boundary(net: TreeNetwork, b: Sequence[int]) -> Boundary:
    """Mark as nonempty every empty node whose effective rate is capped at its service rate.

    The simple gradient of the returned boundary equals the effective
    gradient of ``b``.
    """
    M = effective_rates(net, b)
    return tuple(int(bool(b[k]) or M[k] == net.mu[k]) for k in range(net.d))


@dataclass(frozen=True)
class GradientTable:
    """Distinct effective gradients ``q_l`` and their offsets ``alpha_l``.

    ``boundaries[l]`` is the first boundary (in lexicographic order) whose
    effective gradient is ``q_l``; ``lifted[l]`` is the lifted boundary that
    fixes ``alpha_l``.  ``boundary_index`` maps every boundary to its piece.
    """

    gradients: np.ndarray
    alphas: np.ndarray
    boundaries: tuple[Boundary, ...] = ()
    lifted: tuple[Boundary, ...] = ()
    boundary_index: Mapping[Boundary, int] = field(default_factory=dict)

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        a = np.asarray(self.alphas, dtype=np.int64).reshape(-1)
        if g.shape[0] != a.shape[0]:
            raise ValueError("gradients and alphas differ in length")
        g.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "alphas", a)

    def __len__(self) -> int:
        return self.gradients.shape[0]

    @property
    def d(self) -> int:
        return self.gradients.shape[1]

    def index_of(self, b: Sequence[int]) -> int:
        return self.boundary_index[tuple(int(v) for v in b)]

    def to_csv(self, target: str | Path | io.TextIOBase | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["l", "alpha"] + [f"q{i + 1}" for i in range(self.d)])
        for l, (q, a) in enumerate(zip(self.gradients, self.alphas), start=1):
            w.writerow([l, int(a)] + [repr(float(v)) for v in q])
        text = buf.getvalue()
        if isinstance(target, (str, Path)):
            Path(target).write_text(text)
        elif target is not None:
            target.write(text)
        return text


def build_gradient_table(net: TreeNetwork, max_dim: int = MAX_DIM) -> GradientTable:
    if net.d > max_dim:
        raise DimensionTooLarge(f"d={net.d} exceeds the enumeration cap of {max_dim}")
    grads: list[np.ndarray] = []
    alphas: list[int] = []
    firsts: list[Boundary] = []
    lifts: list[Boundary] = []
    index: dict[Boundary, int] = {}
    buckets: dict[tuple, list[int]] = {}
    for b in all_boundaries(net.d):
        q = effective_gradient(net, b)
        lifted = lift_boundary(net, b)
        key = tuple(np.round(q, 9))
        hit = None
        for l in buckets.get(key, ()):
            if np.all(np.abs(grads[l] - q) <= DEDUP_TOL):
                hit = l
                break
        if hit is None:
            hit = len(grads)
            grads.append(q)
            alphas.append(1 + lifted.count(0))
            firsts.append(b)
            lifts.append(lifted)
            buckets.setdefault(key, []).append(hit)
        elif lifts[hit] != lifted:
            raise RuntimeError(
                f"boundaries {firsts[hit]} and {b} share a gradient but lift to "
                f"{lifts[hit]} and {lifted}")
        index[b] = hit
    return GradientTable(np.array(grads), np.array(alphas), tuple(firsts), tuple(lifts), index)


# Hamiltonians ----------------------------------------------------------------


def _numerators(net: TreeNetwork, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Tilted (unnormalized) jump weights; ``b`` and ``q`` may carry leading batch axes."""
    jumps = net.jumps
    q = np.asarray(q, dtype=float)
    b = np.asarray(b)
    qx = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
    tilt = 0.5 * (qx[..., jumps.src] - qx[..., jumps.dst])
    bx = np.concatenate([b.astype(bool), np.ones(b.shape[:-1] + (1,), dtype=bool)], axis=-1)
    active = bx[..., jumps.src]
    return jumps.prob * np.where(active, np.exp(tilt), 1.0)


def hamiltonian(net: TreeNetwork, b: Sequence[int], q) -> tuple[float, float]:
    """Return ``(N_b(q), H_b(q))`` with ``H_b = -2 log N_b``."""
    N = float(np.sum(_numerators(net, np.asarray(b), np.asarray(q, dtype=float))))
    return N, -2.0 * math.log(N)


def hamiltonian_batch(net: TreeNetwork, B: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``H_{B[k]}(Q[k])`` for each row ``k``; broadcasting over leading axes is allowed."""
    N = np.sum(_numerators(net, np.asarray(B), np.asarray(Q, dtype=float)), axis=-1)
    return -2.0 * np.log(N)


# mollified subsolution ---------------------------------------------------------


@dataclass(frozen=True)
class MollifierParams:
    epsilon: float
    delta: float
    gamma: float

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise NonPositive(f"epsilon and delta must be positive, got "
                              f"{self.epsilon!r}, {self.delta!r}")


def choose_params(net: TreeNetwork, buf: BufferStructure, n: int | None = None,
                  C: float | None = None, epsilon: float | None = None,
                  delta: float | None = None) -> MollifierParams:
    """Pick ``delta = C / n`` and ``epsilon = -delta log delta`` unless overridden.

    ``C`` defaults to 2.4, which gives ``delta = 0.08`` at ``n = 30``.
    """
    n = buf.n if n is None else n
    if n < 1:
        raise NonPositive(f"n must be >= 1, got {n}")
    if delta is None:
        if C is None:
            C = DEFAULT_C
        if not C > 0:
            raise NonPositive(f"C must be positive, got {C}")
        delta = C / n
    if epsilon is None:
        epsilon = -delta * math.log(delta)
    return MollifierParams(float(epsilon), float(delta), decay_rate(net, buf))


def piece_values(x, table: GradientTable, params: MollifierParams) -> np.ndarray:
    """Affine pieces ``W_l(x)``; the last axis of the result runs over pieces."""
    x = np.asarray(x, dtype=float)
    offsets = 2.0 * params.gamma - table.alphas * params.epsilon
    return offsets + x @ table.gradients.T


def mollified_value(x, table: GradientTable, params: MollifierParams):
    z = -piece_values(x, table, params) / params.delta
    return -params.delta * logsumexp(z, axis=-1)


def weights(x, table: GradientTable, params: MollifierParams) -> np.ndarray:
    return softmax(-piece_values(x, table, params) / params.delta, axis=-1)


def mollified_gradient(x, table: GradientTable, params: MollifierParams) -> np.ndarray:
    return weights(x, table, params) @ table.gradients


def mollified_hessian(x, table: GradientTable, params: MollifierParams) -> np.ndarray:
    """Exact Hessian: minus the weight-covariance of the gradients, over ``delta``."""
    w = weights(x, table, params)
    Q = table.gradients
    mean = w @ Q
    second = np.einsum("...l,li,lj->...ij", w, Q, Q)
    return -(second - mean[..., :, None] * mean[..., None, :]) / params.delta


def unsmoothed_value(x, table: GradientTable, params: MollifierParams):
    return np.min(piece_values(x, table, params), axis=-1)


# general (non-tree) networks -------------------------------------------------------


@dataclass(frozen=True)
class GeneralNetwork:
    """Jackson network with arbitrary routing; arrivals still enter at node 1."""

    d: int
    lam: float
    service: Mapping[tuple[int, int], float]

    @classmethod
    def from_tree(cls, net: TreeNetwork) -> "GeneralNetwork":
        return cls(net.d, net.lam, dict(net.service))

    @property
    def mu(self) -> np.ndarray:
        out = np.zeros(self.d)
        for (i, _), r in self.service.items():
            out[i - 1] += r
        return out

    @property
    def routing(self) -> np.ndarray:
        """``P[i, j]`` routing probability between nodes (0-based); exits excluded."""
        P = np.zeros((self.d, self.d))
        mu = self.mu
        for (i, j), r in self.service.items():
            if j > 0:
                P[i - 1, j - 1] += r / mu[i - 1]
        return P

    @property
    def exit_prob(self) -> np.ndarray:
        return 1.0 - self.routing.sum(axis=1)

    @property
    def Lambda(self) -> np.ndarray:
        e1 = np.zeros(self.d)
        e1[0] = self.lam
        return np.linalg.solve(np.eye(self.d) - self.routing.T, e1)


def general_effective_rates(net: GeneralNetwork | TreeNetwork, b: Sequence[int],
                            damping: float = 0.5, tol: float = 1e-10,
                            max_iter: int = 100_000) -> np.ndarray:
    """Effective rates of an arbitrary stable Jackson network by damped fixed-point iteration.

    Works with the service-to-arrival ratios ``R_i(b) = M_i(b) / Lambda_i``:
    an empty node gets the routing-weighted average of its successors' ratios
    (the outside counts as ratio one), capped at ``1 / rho_i``.  On a tree this
    reproduces :func:`effective_rates`.
    """
    if isinstance(net, TreeNetwork):
        net = GeneralNetwork.from_tree(net)
    Lam = net.Lambda
    mu = net.mu
    if np.any(Lam <= 0):
        raise NetworkError("every node must receive traffic")
    cap = mu / Lam
    if np.any(cap <= 1.0):
        raise Unstable("some node has utility >= 1")
    P = net.routing
    p_exit = net.exit_prob
    full = np.asarray(b, dtype=bool)
    R = np.where(full, cap, np.minimum(cap, 1.0))
    residual = math.inf
    for _ in range(max_iter):
        target = np.where(full, cap, np.minimum(cap, P @ R + p_exit))
        residual = float(np.max(np.abs(target - R)))
        if residual < tol:
            R = target
            break
        R = (1.0 - damping) * R + damping * target
    else:
        raise NoConvergence("effective-rate fixed point did not converge", residual)
    return R * Lam

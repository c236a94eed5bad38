"""Exact first-passage probabilities on the truncated state lattice.

``h(x) = P_x(hit the overflow set before 0)`` solves

    h(x) = sum_v p(v) h(x + pi(x, v)),   h = 1 on the overflow set, h(0) = 0,

which is a sparse substochastic linear system on the transient states.  Both
solvers start from ``h = 0`` and increase monotonically to the solution, so the
successive change together with an estimate of the contraction factor gives
an error bound used as the stopping rule.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp
from numba import njit

from .network import BufferStructure, SharedBuffer, TreeNetwork
from .subsolution import NoConvergence

log = logging.getLogger(__name__)

STATE_CAP = 50_000_000


class LatticeTooLarge(ValueError):
    pass


def state_count(buf: BufferStructure, n: int | None = None, d: int | None = None) -> int:
    """Number of lattice points in the truncated region, absorbing layer included.

    Shared buffers use the simplex ``sum(x) <= n``; per-node buffers the box
    ``x <= sizes``.
    """
    if n is not None:
        buf = buf.with_n(n)
    if isinstance(buf, SharedBuffer):
        if d is None:
            raise ValueError("shared buffers need the dimension d")
        return comb(buf.n + d, d)
    return math.prod(int(s) + 1 for s in buf.sizes)


class LatticeIndex:
    """Bijection between lattice points and dense indices ``0..len-1``.

    Points are stored in order of decreasing total population so that a
    forward sweep moves roughly against the flow of probability.
    """

    def __init__(self, d: int, buf: BufferStructure, cap: int = STATE_CAP):
        self.d = d
        self.buf = buf
        count = state_count(buf, d=d)
        if count > cap:
            raise LatticeTooLarge(f"{count} lattice states exceeds the cap of {cap}")
        if isinstance(buf, SharedBuffer):
            self.extent = np.full(d, buf.n + 1, dtype=np.int64)
            pts = _simplex(d, buf.n)
        else:
            self.extent = np.asarray(buf.sizes, dtype=np.int64) + 1
            grids = np.meshgrid(*[np.arange(e) for e in self.extent], indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=1)
        order = np.lexsort((self._raw_codes(pts), -pts.sum(axis=1)))
        self.points = np.ascontiguousarray(pts[order])
        codes = self._raw_codes(self.points)
        self._sort = np.argsort(codes, kind="stable")
        self._sorted_codes = codes[self._sort]

    def _raw_codes(self, pts: np.ndarray) -> np.ndarray:
        strides = np.cumprod(np.concatenate([[1], self.extent[:-1]]))
        return pts.astype(np.int64) @ strides

    def __len__(self) -> int:
        return len(self.points)

    def index(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        if np.any(pts < 0) or np.any(pts >= self.extent):
            raise KeyError("point outside the lattice")
        codes = self._raw_codes(pts)
        k = np.searchsorted(self._sorted_codes, codes)
        k = np.minimum(k, len(self._sorted_codes) - 1)
        if np.any(self._sorted_codes[k] != codes):
            raise KeyError("point outside the lattice")
        return self._sort[k]

    def point(self, i: int) -> np.ndarray:
        return self.points[i].copy()


def _simplex(d: int, n: int) -> np.ndarray:
    """All ``x`` in ``Z_+^d`` with ``sum(x) <= n``."""
    pts = np.zeros((1, 0), dtype=np.int64)
    for _ in range(d):
        used = pts.sum(axis=1)
        reps = n + 1 - used
        base = np.repeat(pts, reps, axis=0)
        col = np.concatenate([np.arange(r) for r in reps])
        pts = np.column_stack([base, col])
    return pts


def _is_exit(buf: BufferStructure, pts: np.ndarray) -> np.ndarray:
    if isinstance(buf, SharedBuffer):
        return pts.sum(axis=1) >= buf.n
    return np.any(pts >= np.asarray(buf.sizes), axis=1)


@dataclass(frozen=True)
class LinearSystem:
    """``h = P h + r`` restricted to transient states, self-loops kept on the diagonal."""

    lattice: LatticeIndex
    transient: np.ndarray      # lattice indices of transient states
    P: sp.csr_matrix           # off-diagonal transitions among transient states
    diag: np.ndarray           # self-loop probability per transient state
    r: np.ndarray              # one-step probability of entering the overflow set
    start: int                 # position of s in ``transient`` (-1 if s is absorbing)


def build_system(net: TreeNetwork, buf: BufferStructure, cap: int = STATE_CAP) -> LinearSystem:
    lat = LatticeIndex(net.d, buf, cap)
    pts = lat.points
    exit_ = _is_exit(buf, pts)
    zero = ~pts.any(axis=1)
    tmask = ~exit_ & ~zero
    tidx = np.flatnonzero(tmask)
    pos = np.full(len(lat), -1, dtype=np.int64)
    pos[tidx] = np.arange(len(tidx))
    T = pts[tidx]
    m = len(tidx)
    diag = np.zeros(m)
    r = np.zeros(m)
    rows, cols, vals = [], [], []
    vecs = net.jumps.vectors(net.d)
    for v, pv in zip(vecs, net.jumps.prob):
        Y = T + v
        blocked = np.any(Y < 0, axis=1)
        diag[blocked] += pv
        ok = ~blocked
        Yi = lat.index(Y[ok]) if ok.any() else np.empty(0, dtype=np.int64)
        src = np.flatnonzero(ok)
        hit = exit_[Yi]
        np.add.at(r, src[hit], pv)
        live = pos[Yi] >= 0
        rows.append(src[live])
        cols.append(pos[Yi[live]])
        vals.append(np.full(int(live.sum()), pv))
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, m))
    P.sum_duplicates()
    P.sort_indices()
    s = np.zeros(net.d, dtype=np.int64)
    s[0] = 1
    start = int(pos[lat.index(s)[0]])
    return LinearSystem(lat, tidx, P, diag, r, start)


@njit(cache=True)
def _gs_sweep(indptr, indices, data, diag, r, h):
    """One in-place Gauss-Seidel sweep; returns the largest relative change."""
    worst = 0.0
    for i in range(h.shape[0]):
        acc = r[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * h[indices[k]]
        new = acc / (1.0 - diag[i])
        if new > 0.0:
            ch = (new - h[i]) / new
            if ch > worst:
                worst = ch
        h[i] = new
    return worst


@dataclass(frozen=True)
class ExactResult:
    p_exact: float
    iterations: int
    residual: float
    states: int
    method: str = "gauss_seidel"

    def to_json(self) -> dict:
        return {"p_exact": self.p_exact, "iterations": self.iterations,
                "residual": self.residual, "states": self.states}


def first_passage(net: TreeNetwork, buf: BufferStructure, n: int | None = None,
                  method: str = "gauss_seidel", tol: float = 1e-14,
                  max_iter: int = 1_000_000, cap: int = STATE_CAP,
                  return_values: bool = False):
    """Exact ``P_s(overflow before emptying)`` starting from ``s = (1, 0, ..., 0)``.

    The iteration stops once the estimated remaining relative error
    ``change * kappa / (1 - kappa)`` falls below ``tol``, where ``kappa`` is the
    observed ratio of successive changes.  ``NoConvergence`` is raised when
    the iteration stalls (``kappa`` stays at or above 1) or runs out of
    iterations; its ``residual`` is the last relative change.
    """
    if method not in ("gauss_seidel", "value_iteration"):
        raise ValueError(f"unknown method {method!r}")
    if n is not None:
        buf = buf.with_n(n)
    sysm = build_system(net, buf, cap)
    states = len(sysm.lattice)
    if sysm.start < 0:
        out = ExactResult(1.0, 0, 0.0, states, method)
        return (out, sysm, np.empty(0)) if return_values else out
    m = len(sysm.r)
    h = np.zeros(m)
    prev = math.inf
    stall = 0
    it = 0
    change = math.inf
    bound = math.inf
    if method == "value_iteration":
        P = sysm.P
        inv = 1.0 / (1.0 - sysm.diag)
        Pn = sp.diags(inv) @ P
        rn = sysm.r * inv
    else:
        P = sysm.P
    while it < max_iter:
        it += 1
        if method == "gauss_seidel":
            change = _gs_sweep(P.indptr, P.indices, P.data, sysm.diag, sysm.r, h)
        else:
            new = Pn @ h + rn
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where(new > 0, (new - h) / new, 0.0)
            change = float(rel.max())
            h = new
        if change == 0.0:
            bound = 0.0
            break
        kappa = change / prev if math.isfinite(prev) else math.nan
        prev = change
        if kappa == kappa:
            if kappa >= 1.0:
                stall += 1
                if stall > 50:
                    raise NoConvergence(f"iteration stalled after {it} sweeps", change)
                continue
            stall = 0
            bound = change * kappa / (1.0 - kappa)
            if bound <= tol:
                break
    else:
        raise NoConvergence(f"no convergence within {max_iter} iterations", change)
    p = float(h[sysm.start])
    log.info("exact p=%.6g after %d %s iterations (%d states)", p, it, method, states)
    out = ExactResult(p, it, float(bound), states, method)
    return (out, sysm, h) if return_values else out


def gamblers_ruin(lam: float, mu: float, n: int) -> float:
    """``P_1(reach n before 0)`` for the birth-death walk with up-probability ``lam/(lam+mu)``."""
    r = mu / lam
    if r == 1.0:
        return 1.0 / n
    return (1.0 - r) / (1.0 - r**n)

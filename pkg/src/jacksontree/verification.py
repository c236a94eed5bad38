"""Numerical checks of the structural facts the IS scheme relies on.

Every check returns a :class:`CheckReport`.  With ``strict=True`` (the
default) a failing check raises :class:`CheckFailed` carrying the report, whose
``witness`` pinpoints the worst offender.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .network import BufferStructure, PerNodeBuffer, SharedBuffer, TreeNetwork, decay_rate
from .subsolution import (
    GradientTable,
    MollifierParams,
    all_boundaries,
    build_gradient_table,
    dominating,
    effective_gradient,
    hamiltonian_batch,
    mollified_gradient,
    mollified_value,
    simple_gradient,
    unsmoothed_value,
    _numerators,
)

SLACK = 1e-10
ROOT_TOL = 1e-10


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst: float
    witness: object = None
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "" if self.witness is None else f"  witness={self.witness}"
        return f"{status}  {self.name:<40s} worst={self.worst:.3e}{extra}"

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "witness": _jsonable(self.witness), "details": _jsonable(self.details)}


class CheckFailed(AssertionError):
    def __init__(self, report: CheckReport):
        super().__init__(report.line())
        self.report = report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _finish(report: CheckReport, strict: bool) -> CheckReport:
    if strict and not report.passed:
        raise CheckFailed(report)
    return report


# boundary lemmas -------------------------------------------------------------


def check_simple_gradient_roots(net: TreeNetwork, perturb: Sequence[float] | None = None,
                                tol: float = ROOT_TOL, strict: bool = True) -> CheckReport:
    """``N_{b2}(simple_gradient(b)) == 1`` for every boundary ``b`` and every ``b2 >= b``."""
    worst, witness = 0.0, None
    shift = np.zeros(net.d) if perturb is None else np.asarray(perturb, dtype=float)
    for b in all_boundaries(net.d):
        q = simple_gradient(net, b) + shift
        B = np.array(list(dominating(b)))
        N = _numerators(net, B, np.broadcast_to(q, B.shape)).sum(axis=-1)
        dev = np.abs(N - 1.0)
        k = int(np.argmax(dev))
        if dev[k] > worst:
            worst, witness = float(dev[k]), (b, tuple(int(v) for v in B[k]), float(N[k] - 1.0))
    report = CheckReport("simple gradient roots", worst <= tol, worst,
                         witness if worst > tol else None, {"pairs": 3 ** net.d})
    return _finish(report, strict)


def check_effective_gradient_supersolution(net: TreeNetwork, scale: float = 1.0,
                                           slack: float = SLACK,
                                           strict: bool = True) -> CheckReport:
    """``H_{b2}(effective_gradient(b)) >= 0`` for every ``b`` and every ``b2 >= b``.

    ``scale`` multiplies the gradients, which is handy as a negative control.
    """
    worst, witness = math.inf, None
    for b in all_boundaries(net.d):
        q = scale * effective_gradient(net, b)
        B = np.array(list(dominating(b)))
        H = hamiltonian_batch(net, B, np.broadcast_to(q, B.shape))
        k = int(np.argmin(H))
        if H[k] < worst:
            worst, witness = float(H[k]), (b, tuple(int(v) for v in B[k]))
    ok = worst >= -slack
    report = CheckReport("effective gradient supersolution", ok, -worst if worst < 0 else 0.0,
                         None if ok else witness, {"min_H": worst})
    return _finish(report, strict)


# sample sets ---------------------------------------------------------------------


def interior_samples(d: int, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points of ``[0, 1]^d``; sample ``k`` zeroes the coordinates whose bit in ``k mod 2^d`` is clear."""
    rng = np.random.default_rng(seed)
    x = rng.random((count, d))
    k = np.arange(count) % (1 << d)
    mask = (k[:, None] >> np.arange(d)[None, :]) & 1
    return x * mask


def exit_samples(buf: BufferStructure, d: int, count: int, seed: int = 0) -> np.ndarray:
    """Points of the scaled exit boundary: the unit simplex face, or the faces ``x(i) = beta(i)``."""
    rng = np.random.default_rng(seed + 1)
    if isinstance(buf, SharedBuffer):
        pts = rng.dirichlet(np.ones(d), size=count)
        return np.vstack([pts, np.eye(d)])
    beta = buf.beta_float
    x = rng.random((count, d)) * beta
    face = np.arange(count) % d
    x[np.arange(count), face] = beta[face]
    corners = np.tile(beta, (1, 1))
    return np.vstack([x, corners])


# subsolution -------------------------------------------------------------------


def _piece_hamiltonians(net: TreeNetwork, table: GradientTable) -> np.ndarray:
    """``H_b(q_l)`` for every boundary ``b`` (rows, lexicographic) and piece ``l``."""
    B = np.array(list(all_boundaries(net.d)))
    return hamiltonian_batch(net, B[:, None, :], table.gradients[None, :, :])


def c1_bound(net: TreeNetwork, table: GradientTable) -> float:
    """Constant ``C1`` with ``H_{b_x}(DW(x)) >= -C1 exp(-eps/delta)``.

    ``H_b`` is concave in ``q``, so ``H_b(sum w_l q_l) >= sum w_l H_b(q_l)``;
    only pieces with ``H_b(q_l) < 0`` can pull it down, and their weight is at
    most ``L exp(-eps/delta)``.
    """
    Hmat = _piece_hamiltonians(net, table)
    return len(table) * float(max(0.0, -Hmat.min()))


def _kink_points(table: GradientTable, params: MollifierParams, d: int, rays: int,
                 seed: int) -> np.ndarray:
    """Points where the two lowest affine pieces tie, found by bisection along random rays."""
    rng = np.random.default_rng(seed + 2)
    out = []
    ts = np.linspace(0.0, 1.0, 65)
    for r in range(rays):
        u = rng.random(d) * ((np.arange(d) + r) % 3 != 0 if d > 2 else 1.0)
        if not u.any():
            u = rng.random(d)
        u = u / u.sum()
        vals = (ts[:, None] * u) @ table.gradients.T + (2 * params.gamma - table.alphas * params.epsilon)
        arg = np.argmin(vals, axis=1)
        for k in np.flatnonzero(arg[1:] != arg[:-1]):
            lo, hi = ts[k], ts[k + 1]
            a = arg[k]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                v = mid * u @ table.gradients.T + (2 * params.gamma - table.alphas * params.epsilon)
                if np.argmin(v) == a:
                    lo = mid
                else:
                    hi = mid
            out.append(0.5 * (lo + hi) * u)
    return np.array(out).reshape(-1, d)


def fd_hessian(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    d = len(x)
    H = np.empty((d, d))
    e = np.eye(d) * h
    fx = f(x)
    for i in range(d):
        H[i, i] = (f(x + e[i]) - 2 * fx + f(x - e[i])) / h**2
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (f(x + e[i] + e[j]) - f(x + e[i] - e[j])
                                 - f(x - e[i] + e[j]) + f(x - e[i] - e[j])) / (4 * h * h)
    return H


def check_subsolution(net: TreeNetwork, buf: BufferStructure, params: MollifierParams,
                      sample_count: int = 10_000, seed: int = 0,
                      table: GradientTable | None = None, gamma: float | None = None,
                      rays: int = 12, strict: bool = True) -> CheckReport:
    """Check four properties of the mollified function ``W``.

    1. ``H_{b_x}(DW(x)) >= -C1 exp(-eps/delta)`` on sampled points, ``C1`` from :func:`c1_bound`.
    2. ``W(0) = 2 gamma - delta log sum_l exp(alpha_l eps / delta)``.
    3. ``W <= 0`` on the scaled exit boundary.
    4. Finite-difference Hessian entries at kink points are at most ``C2 / delta``,
       with ``C2`` the Popoviciu bound ``max_i range_l(q_l(i))^2 / 4``, and the
       measured ``C2`` is stable when ``delta`` is halved twice.

    ``gamma`` overrides the decay rate used in the offsets.
    """
    table = table if table is not None else build_gradient_table(net)
    if gamma is not None:
        params = MollifierParams(params.epsilon, params.delta, gamma)
    eps, delta = params.epsilon, params.delta
    d = net.d
    failures = []
    details: dict = {}
    witness = None

    # item 1
    X = interior_samples(d, sample_count, seed)
    DW = mollified_gradient(X, table, params)
    H = hamiltonian_batch(net, (X > 0).astype(np.int64), DW)
    floor = math.exp(-eps / delta)
    c1_meas = float(max(0.0, -H.min()) / floor)
    c1 = c1_bound(net, table)
    details["C1_measured"] = c1_meas
    details["C1_bound"] = c1
    details["min_H"] = float(H.min())
    if H.min() < -c1 * floor - SLACK:
        failures.append("1")
        witness = ("item 1", X[int(np.argmin(H))].tolist())

    # item 2
    w0 = float(mollified_value(np.zeros(d), table, params))
    closed = 2 * params.gamma - delta * float(logsumexp(table.alphas * eps / delta))
    details["W0"] = w0
    details["W0_closed_form"] = closed
    if abs(w0 - closed) > 1e-10:
        failures.append("2")
        witness = witness or ("item 2", abs(w0 - closed))

    # item 3
    S = exit_samples(buf, d, max(sample_count // 10, 100), seed)
    WS = mollified_value(S, table, params)
    details["max_W_on_exit"] = float(WS.max())
    if WS.max() > SLACK:
        failures.append("3")
        witness = witness or ("item 3", S[int(np.argmax(WS))].tolist())

    # item 4
    spread = np.ptp(table.gradients, axis=0)
    c2_bound = float(np.max(spread) ** 2 / 4.0)
    c2_by_delta = {}
    if len(table) > 1:
        kinks = _kink_points(table, params, d, rays, seed)
        for scale in (1.0, 0.5, 0.25):
            p = MollifierParams(eps, delta * scale, params.gamma)
            hstep = 1e-3 * p.delta
            worst = 0.0
            for x in kinks:
                Hx = fd_hessian(lambda y: float(mollified_value(y, table, p)), x, hstep)
                worst = max(worst, float(np.abs(Hx).max()))
            c2_by_delta[p.delta] = worst * p.delta
        vals = list(c2_by_delta.values())
        details["C2_measured"] = c2_by_delta
        details["C2_bound"] = c2_bound
        details["kink_points"] = len(kinks)
        too_big = max(vals) > c2_bound * (1 + 1e-3) + 1e-6
        unstable = min(vals) > 0 and max(vals) / min(vals) > 2.0
        if too_big or unstable:
            failures.append("4")
            witness = witness or ("item 4", c2_by_delta)
    details["failed_items"] = failures
    worst_val = max(0.0, -float(H.min()) - c1 * floor, float(WS.max()), abs(w0 - closed))
    report = CheckReport("mollified subsolution", not failures, worst_val, witness, details)
    return _finish(report, strict)


def effective_epsilon(net: TreeNetwork, buf: BufferStructure, params: MollifierParams,
                      table: GradientTable, X: np.ndarray, S: np.ndarray) -> dict:
    DW = mollified_gradient(X, table, params)
    H = hamiltonian_batch(net, (X > 0).astype(np.int64), DW)
    a = max(0.0, -float(H.min()))
    b = max(0.0, 2 * params.gamma - float(mollified_value(np.zeros(net.d), table, params)))
    c = max(0.0, float(np.max(mollified_value(S, table, params))))
    return {"a": a, "b": b, "c": c, "eps_eff": max(a, b, c)}


def check_epsilon_subsolution_definition(net: TreeNetwork, buf: BufferStructure,
                                         params: MollifierParams | Iterable[MollifierParams],
                                         sample_count: int = 2_000, seed: int = 0,
                                         table: GradientTable | None = None,
                                         strict: bool = True) -> CheckReport:
    """Smallest ``eps_eff`` for which ``W`` meets the three clauses of an eps-subsolution.

    (a) ``H >= -eps_eff`` on samples, (b) ``W(0) >= 2 gamma - eps_eff``,
    (c) ``W <= eps_eff`` on the exit boundary.  Each ``eps_eff`` must lie
    under ``max(alpha) eps + delta log L + C1 exp(-eps/delta)``, and when a
    sequence of parameters is given the values must strictly decrease.
    """
    table = table if table is not None else build_gradient_table(net)
    plist = [params] if isinstance(params, MollifierParams) else list(params)
    X = interior_samples(net.d, sample_count, seed)
    S = exit_samples(buf, net.d, max(sample_count // 10, 100), seed)
    c1 = c1_bound(net, table)
    rows = []
    ok = True
    witness = None
    for p in plist:
        e = effective_epsilon(net, buf, p, table, X, S)
        bound = (int(table.alphas.max()) * p.epsilon + p.delta * math.log(len(table))
                 + c1 * math.exp(-p.epsilon / p.delta))
        e["bound"] = bound
        e["epsilon"] = p.epsilon
        e["delta"] = p.delta
        rows.append(e)
        if e["eps_eff"] > bound + SLACK:
            ok = False
            witness = witness or ("bound", p.epsilon, p.delta)
    effs = [r["eps_eff"] for r in rows]
    if any(b >= a for a, b in zip(effs, effs[1:])):
        ok = False
        witness = witness or ("not decreasing", effs)
    report = CheckReport("epsilon-subsolution definition", ok, max(effs), witness,
                         {"rows": rows})
    return _finish(report, strict)


def run_all(net: TreeNetwork, buf: BufferStructure, params: MollifierParams,
            sample_count: int = 10_000, seed: int = 0) -> list[CheckReport]:
    """Run every check without raising, in a fixed order."""
    table = build_gradient_table(net)
    return [
        check_simple_gradient_roots(net, strict=False),
        check_effective_gradient_supersolution(net, strict=False),
        check_subsolution(net, buf, params, sample_count, seed, table, strict=False),
        check_epsilon_subsolution_definition(net, buf, params, min(sample_count, 2_000),
                                             seed, table, strict=False),
    ]

"""Tree-topology Jackson networks and their buffer structures.

Nodes are numbered ``1..d`` with ``0`` standing for "outside the network".
Customers arrive only at node 1, the root.  Per-node quantities are stored
in numpy arrays indexed ``0..d-1`` (so node ``i`` lives at ``arr[i - 1]``).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

STABILITY_MARGIN = 1e-12
NORMALIZATION_TOL = 1e-9


class NetworkError(ValueError):
    """Base class for invalid network or buffer descriptions."""


class NotATree(NetworkError):
    pass


class Unstable(NetworkError):
    pass


class ZeroServiceRate(NetworkError):
    pass


class DisconnectedNode(NetworkError):
    pass


class NormalizationWarning(UserWarning):
    """Raised (as a warning) when input rates did not sum to one."""


@dataclass(frozen=True)
class DerivedRates:
    Lambda: np.ndarray
    rho: np.ndarray
    mu_exit_eff: np.ndarray


@dataclass(frozen=True)
class JumpSet:
    """The jump vectors of the embedded chain in a flat, array-friendly form.

    Jump ``k`` removes a customer from node ``src[k]`` (0-based, ``-1`` for an
    outside arrival) and adds one to ``dst[k]`` (``-1`` for leaving the
    network).  ``prob`` holds the nominal jump probabilities.
    """

    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    labels: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.prob)

    def vectors(self, d: int) -> np.ndarray:
        out = np.zeros((len(self), d), dtype=np.int64)
        for k, (s, t) in enumerate(zip(self.src, self.dst)):
            if s >= 0:
                out[k, s] -= 1
            if t >= 0:
                out[k, t] += 1
        return out


@dataclass(frozen=True, eq=False)
class TreeNetwork:
    """A validated, normalized tree Jackson network.

    Build instances with :func:`validate` (or :meth:`from_rates`); the
    constructor itself does not check anything.

    Attributes
    ----------
    d : int
        Number of nodes.
    lam : float
        Arrival rate at the root, which after normalization is also the
        probability that a jump of the embedded chain is an arrival.
    service : dict
        ``(i, j) -> mu_{i,j}`` for every service route, ``j = 0`` meaning exit.
    parent : dict
        ``child -> parent`` for every non-root node.
    """

    d: int
    lam: float
    service: Mapping[tuple[int, int], float]
    parent: Mapping[int, int] = field(default_factory=dict)

    @classmethod
    def from_rates(cls, lam: float, rates: Mapping[tuple[int, int], float],
                   d: int | None = None, normalize: bool = True) -> "TreeNetwork":
        if d is None:
            d = max(max(i, j) for i, j in rates)
        raw = {
            "nodes": d,
            "lambda": lam,
            "edges": [{"from": i, "to": j, "rate": r} for (i, j), r in rates.items()],
        }
        return validate(raw, normalize=normalize)

    # derived structure -------------------------------------------------

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        """``children[i - 1]`` lists the children of node ``i`` in increasing order."""
        kids: list[list[int]] = [[] for _ in range(self.d)]
        for c, p in self.parent.items():
            kids[p - 1].append(c)
        return tuple(tuple(sorted(k)) for k in kids)

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Breadth-first node order from the root; reversed, it goes leaves-up."""
        out = [1]
        k = 0
        while k < len(out):
            out.extend(self.children[out[k] - 1])
            k += 1
        return tuple(out)

    @cached_property
    def mu(self) -> np.ndarray:
        tot = np.zeros(self.d)
        for (i, _), r in self.service.items():
            tot[i - 1] += r
        return tot

    @cached_property
    def mu_exit(self) -> np.ndarray:
        out = np.zeros(self.d)
        for (i, j), r in self.service.items():
            if j == 0:
                out[i - 1] = r
        return out

    @cached_property
    def total_rate(self) -> float:
        return self.lam + float(self.mu.sum())

    @cached_property
    def rates(self) -> DerivedRates:
        return derived_rates(self)

    @cached_property
    def jumps(self) -> JumpSet:
        """Arrival first, then each node's routes in :meth:`edges` order."""
        labels = [(0, 1)] + [(i, j) for i, j, _ in self.edges()]
        src = np.array([i - 1 for i, _ in labels], dtype=np.int64)
        dst = np.array([j - 1 if j > 0 else -1 for _, j in labels], dtype=np.int64)
        prob = np.array([self.lam] + [r for *_, r in self.edges()])
        return JumpSet(src=src, dst=dst, prob=prob, labels=tuple(labels))

    def edges(self) -> list[tuple[int, int, float]]:
        """Service routes sorted by source, internal routes before the exit route."""
        out = []
        for i in range(1, self.d + 1):
            for j in self.children[i - 1]:
                out.append((i, j, self.service[(i, j)]))
            if (i, 0) in self.service:
                out.append((i, 0, self.service[(i, 0)]))
        return out

    def to_dict(self) -> dict:
        return {
            "nodes": self.d,
            "lambda": self.lam,
            "edges": [{"from": i, "to": j, "rate": r} for i, j, r in self.edges()],
        }

    def __eq__(self, other):
        if not isinstance(other, TreeNetwork):
            return NotImplemented
        return (self.d == other.d and self.lam == other.lam
                and dict(self.service) == dict(other.service))

    def __hash__(self):
        return hash((self.d, self.lam, tuple(sorted(self.service.items()))))


def validate(raw: Mapping, normalize: bool = True) -> TreeNetwork:
    """Check a raw ``{"nodes", "lambda", "edges"}`` description and build a network.

    Rates are rescaled to sum to one when they do not already (a
    :class:`NormalizationWarning` is emitted), since the embedded jump chain
    does not depend on the time unit.
    """
    try:
        d = int(raw["nodes"])
        lam = float(raw["lambda"])
        edges = list(raw["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network description: {exc!r}") from None
    if d < 1:
        raise NetworkError("a network needs at least one node")
    if not lam > 0:
        raise NetworkError("arrival rate lambda must be positive")

    service: dict[tuple[int, int], float] = {}
    parent: dict[int, int] = {}
    for e in edges:
        try:
            i, j, r = int(e["from"]), int(e["to"]), float(e["rate"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"malformed edge {e!r}: {exc!r}") from None
        if not (1 <= i <= d and 0 <= j <= d):
            raise NetworkError(f"edge {i}->{j} refers to a node outside 1..{d}")
        if not math.isfinite(r) or r < 0:
            raise NetworkError(f"edge {i}->{j} has invalid rate {r}")
        if (i, j) in service:
            raise NetworkError(f"duplicate edge {i}->{j}")
        if j == 0:
            if r > 0:
                service[(i, 0)] = r
            continue
        if r == 0:
            raise ZeroServiceRate(f"internal route {i}->{j} has zero rate")
        if i == j:
            raise NotATree(f"self-loop at node {i}")
        if j == 1:
            raise NotATree(f"edge {i}->1 points into the root (cycle)")
        if j in parent:
            raise NotATree(f"node {j} has two parents ({parent[j]} and {i})")
        service[(i, j)] = r
        parent[j] = i

    # every non-root node must reach the root through its parent chain
    for node in range(2, d + 1):
        seen = {node}
        k = node
        while k != 1:
            if k not in parent:
                raise DisconnectedNode(f"node {node} is not connected to the root")
            k = parent[k]
            if k in seen:
                raise NotATree(f"cycle through node {k}")
            seen.add(k)

    has_service = np.zeros(d, dtype=bool)
    for (i, _), r in service.items():
        has_service[i - 1] |= r > 0
    if not has_service.all():
        bad = int(np.flatnonzero(~has_service)[0]) + 1
        raise ZeroServiceRate(f"node {bad} has zero total service rate")

    total = lam + sum(service.values())
    if normalize and abs(total - 1.0) > NORMALIZATION_TOL:
        warnings.warn(f"rates sum to {total:.12g}; rescaling to 1", NormalizationWarning,
                      stacklevel=2)
    if normalize:
        lam /= total
        service = {k: v / total for k, v in service.items()}

    net = TreeNetwork(d=d, lam=lam, service=service, parent=parent)
    rho = net.rates.rho
    if np.any(rho >= 1.0 - STABILITY_MARGIN):
        i = int(np.argmax(rho)) + 1
        raise Unstable(f"node {i} has utility {rho[i - 1]:.6g} >= 1")
    return net


def normalize(net: TreeNetwork) -> TreeNetwork:
    """Rescale every rate so that ``lam + sum(mu) == 1``."""
    t = net.total_rate
    return TreeNetwork(
        d=net.d,
        lam=net.lam / t,
        service={k: v / t for k, v in net.service.items()},
        parent=dict(net.parent),
    )


def derived_rates(net: TreeNetwork) -> DerivedRates:
    Lam = np.zeros(net.d)
    Lam[0] = net.lam
    for i in net.order:
        for j in net.children[i - 1]:
            Lam[j - 1] = Lam[i - 1] * net.service[(i, j)] / net.mu[i - 1]
    mu = net.mu
    return DerivedRates(Lambda=Lam, rho=Lam / mu, mu_exit_eff=Lam * net.mu_exit / mu)


# buffers ------------------------------------------------------------------


@dataclass(frozen=True)
class SharedBuffer:
    """One buffer of size ``n`` shared by every node (exit when ``sum(x) >= n``)."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise NetworkError(f"buffer scale n must be a positive integer, got {self.n!r}")

    kind = "shared"

    def with_n(self, n: int) -> "SharedBuffer":
        return SharedBuffer(n)

    def to_dict(self) -> dict:
        return {"type": "shared", "n": self.n}


@dataclass(frozen=True)
class PerNodeBuffer:
    """Independent per-node buffers of size ``floor(n * beta[i])``.

    ``beta`` holds exact fractions so that sizes such as ``19 * 15/19`` come
    out as integers without rounding surprises.
    """

    n: int
    beta: tuple[Fraction, ...]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise NetworkError(f"buffer scale n must be a positive integer, got {self.n!r}")
        beta = tuple(_as_fraction(b) for b in self.beta)
        if not beta:
            raise NetworkError("per-node buffer needs at least one beta")
        if any(b <= 0 or b > 1 for b in beta):
            raise NetworkError("beta values must lie in (0, 1]")
        if max(beta) != 1:
            raise NetworkError("the largest beta must equal 1")
        object.__setattr__(self, "beta", beta)

    kind = "per_node"

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "PerNodeBuffer":
        n = max(sizes)
        return cls(n, tuple(Fraction(int(s), n) for s in sizes))

    def with_n(self, n: int) -> "PerNodeBuffer":
        return PerNodeBuffer(n, self.beta)

    @property
    def sizes(self) -> np.ndarray:
        # a node buffer never drops below one slot
        return np.array([max(1, math.floor(self.n * b)) for b in self.beta], dtype=np.int64)

    @property
    def beta_float(self) -> np.ndarray:
        return np.array([float(b) for b in self.beta])

    def to_dict(self) -> dict:
        return {"type": "per_node", "n": self.n, "beta": [str(b) for b in self.beta]}


BufferStructure = SharedBuffer | PerNodeBuffer


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(float(value)).limit_denominator(10**6)


def parse_buffer(raw: Mapping, d: int | None = None) -> BufferStructure:
    kind = raw.get("type")
    if kind == "shared":
        return SharedBuffer(int(raw["n"]))
    if kind == "per_node":
        if "sizes" in raw:
            buf = PerNodeBuffer.from_sizes([int(s) for s in raw["sizes"]])
            if "n" in raw:
                buf = buf.with_n(int(raw["n"]))
        else:
            buf = PerNodeBuffer(int(raw["n"]), tuple(raw["beta"]))
        if d is not None and len(buf.beta) != d:
            raise NetworkError(f"beta has {len(buf.beta)} entries for a {d}-node network")
        return buf
    raise NetworkError(f"unknown buffer type {kind!r}")


def exit_test(buf: BufferStructure, x: np.ndarray) -> bool:
    if isinstance(buf, SharedBuffer):
        return int(np.sum(x)) >= buf.n
    return bool(np.any(np.asarray(x) >= buf.sizes))


def decay_rate(net: TreeNetwork, buf: BufferStructure) -> float:
    """Large-deviation decay rate of the overflow probability, in nats per unit ``n``."""
    rho = net.rates.rho
    if np.any(rho >= 1.0):
        raise Unstable("decay rate is undefined for an unstable network")
    if isinstance(buf, SharedBuffer):
        return float(np.min(-np.log(rho)))
    if len(buf.beta) != net.d:
        raise NetworkError("beta length does not match the number of nodes")
    return float(np.min(-buf.beta_float * np.log(rho)))


# configs ------------------------------------------------------------------


@dataclass(frozen=True)
class Config:
    network: TreeNetwork
    buffer: BufferStructure
    extras: dict = field(default_factory=dict)


BUNDLED_CONFIGS = ("ex1", "ex2_8node", "five_node", "mm1")
_ALIASES = {"ex2": "ex2_8node"}


def _read_config_text(source: str | Path) -> str:
    path = Path(source)
    if path.exists():
        return path.read_text()
    name = Path(str(source)).name.removesuffix(".json")
    name = _ALIASES.get(name, name)
    if name in BUNDLED_CONFIGS:
        return resources.files("jacksontree.configs").joinpath(f"{name}.json").read_text()
    raise FileNotFoundError(f"no config file or bundled config named {source!r}")


def load_config(source: str | Path) -> Config:
    """Read a network + buffer JSON config from a path or a bundled name (e.g. ``"ex1"``)."""
    try:
        raw = json.loads(_read_config_text(source))
    except json.JSONDecodeError as exc:
        raise NetworkError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)


def parse_config(raw: Mapping) -> Config:
    net = validate(raw)
    if "buffer" not in raw:
        raise NetworkError("config has no 'buffer' section")
    buf = parse_buffer(raw["buffer"], net.d)
    extras = {k: v for k, v in raw.items() if k not in ("nodes", "lambda", "edges", "buffer")}
    return Config(net, buf, extras)


def dump_config(net: TreeNetwork, buf: BufferStructure, extras: Mapping | None = None) -> dict:
    out = net.to_dict()
    out["buffer"] = buf.to_dict()
    if extras:
        out.update(extras)
    return out


# random instances -----------------------------------------------------------


def random_tree(rng: np.random.Generator, d: int, max_rho: tuple[float, float] = (0.2, 0.9),
                exit_prob: float = 0.7) -> TreeNetwork:
    """Draw a random stable tree network with ``d`` nodes.

    Each non-root node picks a uniformly random earlier node as parent.  The
    arrival rate is then scaled so that the busiest node has a utility drawn
    uniformly from ``max_rho``.
    """
    parent = {j: int(rng.integers(1, j)) for j in range(2, d + 1)}
    kids: dict[int, list[int]] = {i: [] for i in range(1, d + 1)}
    for c, p in parent.items():
        kids[p].append(c)
    rates: dict[tuple[int, int], float] = {}
    for i in range(1, d + 1):
        for c in kids[i]:
            rates[(i, c)] = float(rng.uniform(0.05, 1.0))
        if not kids[i] or rng.random() < exit_prob:
            rates[(i, 0)] = float(rng.uniform(0.05, 1.0))
    probe = TreeNetwork(d=d, lam=1.0, service=rates, parent=parent)
    peak = float(probe.rates.rho.max())
    lam = float(rng.uniform(*max_rho)) / peak
    total = lam + sum(rates.values())
    return TreeNetwork.from_rates(lam / total, {k: v / total for k, v in rates.items()}, d=d)

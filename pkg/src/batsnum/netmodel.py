"""Network graph, flows, interference, and TDMA schedule machinery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .loss import LossSpec

ENUMERATION_LIMIT = 25
DOMINATE_TOL = 1e-9


class ValidationError(ValueError):
    pass


class DecompositionError(ValueError):
    def __init__(self, message, achievable_scale=None, binding_links=None):
        super().__init__(message)
        self.achievable_scale = achievable_scale
        self.binding_links = binding_links


@dataclass(frozen=True)
class Link:
    id: str
    tail: str
    head: str
    capacity: float
    loss: LossSpec

    def endpoints(self):
        return {self.tail, self.head}


@dataclass
class Network:
    """Directed links with per-link conflict sets; immutable once built."""

    nodes: list
    links: list
    interference: dict = field(default_factory=dict)
    _schedule_cache: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [l.id for l in self.links]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate link ids")
        node_set = set(self.nodes)
        for l in self.links:
            if l.tail not in node_set or l.head not in node_set:
                raise ValidationError(f"link {l.id} references unknown node")
            if l.capacity <= 0:
                raise ValidationError(f"link {l.id} capacity must be positive")
        if not self.interference:
            self.interference = {l.id: frozenset() for l in self.links}
        known = set(ids)
        for e, conf in self.interference.items():
            if e not in known:
                raise ValidationError(f"interference set for unknown link {e}")
            for e2 in conf:
                if e2 not in known:
                    raise ValidationError(f"unknown link {e2} in I[{e}]")
                if e not in self.interference.get(e2, frozenset()):
                    raise ValidationError(
                        f"interference not symmetric: {e2} in I[{e}] only")
        self.interference = {e: frozenset(c) for e, c in self.interference.items()}

    def link(self, link_id):
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(link_id)

    def link_index(self, link_id):
        for i, l in enumerate(self.links):
            if l.id == link_id:
                return i
        raise KeyError(link_id)

    @property
    def capacities(self):
        return np.array([l.capacity for l in self.links])

    def conflict_matrix(self):
        n = len(self.links)
        idx = {l.id: i for i, l in enumerate(self.links)}
        C = np.zeros((n, n), dtype=bool)
        for e, conf in self.interference.items():
            for e2 in conf:
                C[idx[e], idx[e2]] = True
        return C


@dataclass(frozen=True)
class Flow:
    """A path of consecutive links with a batch size."""

    id: str
    links: tuple
    batch_size: int
    utility: str = "log"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(set(self.links)) != len(self.links):
            raise ValidationError(f"flow {self.id} repeats a link")
        if not self.links:
            raise ValidationError(f"flow {self.id} has no links")
        if self.utility != "log":
            raise ValidationError(f"unsupported utility {self.utility!r}")

    def validate_against(self, network):
        prev_head = None
        for lid in self.links:
            link = network.link(lid)
            if prev_head is not None and link.tail != prev_head:
                raise ValidationError(
                    f"flow {self.id}: link {lid} does not start at {prev_head}")
            prev_head = link.head

    def nodes(self, network):
        out = [network.link(self.links[0]).tail]
        for lid in self.links:
            out.append(network.link(lid).head)
        return out


@dataclass(frozen=True)
class Schedule:
    """0/1 activation vector over the network's links, in link order."""

    active: tuple

    def is_feasible(self, network):
        idx = {l.id: i for i, l in enumerate(network.links)}
        for l in network.links:
            if not self.active[idx[l.id]]:
                continue
            for other in network.interference[l.id]:
                if self.active[idx[other]]:
                    return False
        return True

    def active_links(self, network):
        return [l.id for l, a in zip(network.links, self.active) if a]


def two_hop_interference(network):
    """Conflict sets where links within two hops of each other collide.

    Links conflict when they share an endpoint or some endpoint of one is
    adjacent (via any link, direction ignored) to an endpoint of the other.
    """
    adj = {n: set() for n in network.nodes}
    for l in network.links:
        adj[l.tail].add(l.head)
        adj[l.head].add(l.tail)
    out = {}
    for a in network.links:
        conf = set()
        ea = a.endpoints()
        reach = set(ea)
        for n in ea:
            reach |= adj[n]
        for b in network.links:
            if b.id == a.id:
                continue
            if ea & b.endpoints() or reach & b.endpoints():
                conf.add(b.id)
        out[a.id] = frozenset(conf)
    return out


def all_collision_interference(network):
    """Complete conflict graph: one link at a time."""
    ids = [l.id for l in network.links]
    return {e: frozenset(set(ids) - {e}) for e in ids}


def enumerate_feasible_schedules(network):
    """All collision-free 0/1 activation vectors, lexicographically sorted."""
    n = len(network.links)
    if n > ENUMERATION_LIMIT:
        raise ValidationError(
            f"{n} links exceeds enumeration limit {ENUMERATION_LIMIT}; "
            "use max_weight_schedule")
    if network._schedule_cache is not None:
        return network._schedule_cache
    C = network.conflict_matrix()
    out = []

    def rec(i, cur, banned):
        if i == n:
            out.append(Schedule(active=tuple(cur)))
            return
        cur.append(0)
        rec(i + 1, cur, banned)
        cur.pop()
        if not banned[i]:
            cur.append(1)
            rec(i + 1, cur, banned | C[i])
            cur.pop()

    rec(0, [], np.zeros(n, dtype=bool))
    out.sort(key=lambda s: s.active)
    network._schedule_cache = out
    return out


def schedule_rate_matrix(network):
    """(S, E) matrix of rate vectors c_e * s_e for the enumerated schedules."""
    scheds = enumerate_feasible_schedules(network)
    arr = np.array([s.active for s in scheds], dtype=float)
    return scheds, arr * network.capacities


def max_weight_schedule(network, weights):
    """Feasible schedule maximizing sum_e weight_e * c_e * s_e.

    Ties break toward the lexicographically smallest activation vector
    (the enumeration order), so results are deterministic.
    """
    weights = np.asarray(weights, dtype=float)
    scheds, rates = schedule_rate_matrix(network)
    vals = rates @ weights
    best = float(vals.max())
    # first index among ties == lexicographically smallest active vector
    idx = int(np.flatnonzero(vals >= best - 1e-12 * max(1.0, abs(best)))[0])
    return scheds[idx], float(vals[idx])


def decompose_rate_vector(network, target):
    """Time shares over feasible schedules whose mix dominates `target`.

    Solves a feasibility LP (minimize total time, cover every link's
    target rate, total share <= 1). Raises DecompositionError with the
    best achievable uniform scale when the target is outside the region.
    """
    target = np.asarray(target, dtype=float)
    if np.any(target < 0):
        raise ValidationError("target rates must be nonnegative")
    scheds, rates = schedule_rate_matrix(network)
    S = len(scheds)
    if not np.any(target > 0):
        return []
    res = optimize.linprog(
        c=np.ones(S),
        A_ub=np.vstack([-rates.T, np.ones((1, S))]),
        b_ub=np.concatenate([-target, [1.0]]),
        bounds=[(0, None)] * S,
        method="highs",
    )
    if not res.success:
        # certificate: the largest sigma with sigma*target schedulable
        lp = optimize.linprog(
            c=np.concatenate([[-1.0], np.zeros(S)]),
            A_ub=np.block([[target[:, None], -rates.T],
                           [np.zeros((1, 1)), np.ones((1, S))]]),
            b_ub=np.concatenate([np.zeros(len(target)), [1.0]]),
            bounds=[(0, None)] * (S + 1),
            method="highs",
        )
        sigma = float(lp.x[0]) if lp.success else 0.0
        mix = rates.T @ lp.x[1:] if lp.success else np.zeros(len(target))
        binding = [network.links[i].id for i in range(len(target))
                   if target[i] > 0 and mix[i] <= target[i] * sigma + 1e-9]
        raise DecompositionError(
            f"target rate vector infeasible; at most {sigma:.6f} of it is "
            f"schedulable (binding links: {binding})",
            achievable_scale=sigma, binding_links=binding)
    out = [(scheds[i], float(res.x[i])) for i in range(S) if res.x[i] > 1e-12]
    return out

"""Structure of configurations and trajectories.

Agreement clusters, disagreement components, traces, spin chains, triple
points, the energy audit, and mass transport audits.  Everything here is
a pure function of immutable run output; nothing mutates a trajectory.

Cluster routines deliberately exist twice: once over origin ids and once
over raw value equality.  The dynamics only ever copy initial heights,
so the two must give identical partitions; the tests hold them together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels, engine, exactness, randomness, tree
from .engine import MedianFlipLog, Trajectory
from .randomness import SeedManifest


def _components(n: int, eu: np.ndarray, ev: np.ndarray) -> np.ndarray:
    """Connected-component labels from an edge list.

    Parameters
    ----------
    n : int
        Number of vertices; labels cover range(n).
    eu, ev : ndarray of int32
        Edge endpoints, one edge per position.

    Returns
    -------
    ndarray of int32
        Component label per vertex, labels are component minima.
    """
    parent = np.arange(n, dtype=np.int32)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(eu, ev):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    labels = np.empty(n, dtype=np.int32)
    for i in range(n):
        labels[i] = find(i)
    return labels


def _in_ball_edges(ball: tree.IndexedBall) -> tuple[np.ndarray, np.ndarray]:
    # each in-ball edge once: keep (v, u) with u in-ball and v < u
    v = np.repeat(np.arange(ball.n, dtype=np.int32), 3)
    u = ball.nbr.reshape(-1)
    keep = (u < ball.n) & (v < u)
    return v[keep], u[keep]


@dataclass
class ClusterReport:
    ball: tree.IndexedBall
    labels: np.ndarray          # int32 [n]; -1 = vertex excluded
    cluster_ids: np.ndarray     # sorted unique labels
    sizes: np.ndarray
    boundary_contacts: np.ndarray  # members at distance exactly R, per cluster

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.nonzero(self.labels == cluster_id)[0]

    def size_of(self, address: str) -> int:
        i = self.ball.index_of(tree.key_of(address))
        lab = self.labels[i]
        if lab < 0:
            raise ValueError(f"{address!r} not part of any analyzed cluster")
        return int(self.sizes[np.searchsorted(self.cluster_ids, lab)])


def agreement_clusters(ball: tree.IndexedBall, origin: np.ndarray,
                       restrict: np.ndarray | None = None) -> ClusterReport:
    """Maximal connected sets of equal-origin vertices.

    `restrict`, when given, is an in-ball boolean mask; vertices outside
    it are excluded from the partition entirely (labels -1).
    """
    return _clusters_by(ball, lambda a, b: origin[a] == origin[b], restrict)


def value_clusters(ball: tree.IndexedBall, value: np.ndarray,
                   restrict: np.ndarray | None = None) -> ClusterReport:
    """Cross-check partition using exact float equality instead of origins."""
    return _clusters_by(ball, lambda a, b: value[a] == value[b], restrict)


def _clusters_by(ball: tree.IndexedBall, same: Callable, restrict) -> ClusterReport:
    n = ball.n
    inc = np.ones(n, dtype=bool) if restrict is None else np.asarray(restrict, dtype=bool)
    eu, ev = _in_ball_edges(ball)
    keep = same(eu, ev) & inc[eu] & inc[ev]
    labels = _components(n, eu[keep], ev[keep])
    labels[~inc] = -1
    ids, counts = np.unique(labels[inc], return_counts=True)
    at_edge = ball.dist[:n] == ball.radius
    contacts = np.zeros(len(ids), dtype=np.int64)
    edge_labels = labels[inc & at_edge]
    if edge_labels.size:
        pos = np.searchsorted(ids, edge_labels)
        np.add.at(contacts, pos, 1)
    return ClusterReport(ball=ball, labels=labels, cluster_ids=ids,
                         sizes=counts, boundary_contacts=contacts)


@dataclass
class ComponentReport:
    """Disagreement-graph components: vertices incident to unequal edges."""

    ball: tree.IndexedBall
    labels: np.ndarray
    component_ids: np.ndarray
    sizes: np.ndarray
    max_degrees: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.component_ids)

    @property
    def simple_path_flags(self) -> np.ndarray:
        # a connected acyclic subgraph is a simple path iff no vertex has
        # three or more disagreement edges
        return self.max_degrees <= 2


def disagreement_components(ball: tree.IndexedBall, origin: np.ndarray,
                            restrict: np.ndarray | None = None) -> ComponentReport:
    n = ball.n
    inc = np.ones(n, dtype=bool) if restrict is None else np.asarray(restrict, dtype=bool)
    eu, ev = _in_ball_edges(ball)
    keep = (origin[eu] != origin[ev]) & inc[eu] & inc[ev]
    eu, ev = eu[keep], ev[keep]
    labels = _components(n, eu, ev)
    deg = np.zeros(n, dtype=np.int64)
    np.add.at(deg, eu, 1)
    np.add.at(deg, ev, 1)
    touched = deg > 0
    labels[~touched] = -1
    ids, counts = np.unique(labels[touched], return_counts=True)
    maxdeg = np.zeros(len(ids), dtype=np.int64)
    if touched.any():
        pos = np.searchsorted(ids, labels[touched])
        np.maximum.at(maxdeg, pos, deg[touched])
    return ComponentReport(ball=ball, labels=labels, component_ids=ids,
                           sizes=counts, max_degrees=maxdeg)


def neighbor_agreement_rate(ball: tree.IndexedBall, origin: np.ndarray,
                            restrict: np.ndarray | None = None) -> tuple[float, int]:
    """Fraction of vertices sharing their origin with >= 1 neighbor.

    Considers interior vertices only (all three neighbors in-ball), and
    within `restrict` only vertices whose whole neighborhood is also in
    it: a vertex whose potential witness is outside the analyzed region
    can't be judged either way.
    """
    n = ball.n
    interior = np.all(ball.nbr < n, axis=1)
    if restrict is not None:
        inc = np.asarray(restrict, dtype=bool)
        interior &= inc & np.all(inc[np.clip(ball.nbr, 0, n - 1)], axis=1)
    idx = np.nonzero(interior)[0]
    if idx.size == 0:
        return float("nan"), 0
    agree = (origin[ball.nbr[idx]] == origin[idx][:, None]).any(axis=1)
    return float(agree.mean()), int(idx.size)


@dataclass
class TraceSet:
    source: str
    horizon: float
    members: frozenset[str]
    boundary_contact: bool

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, address: str) -> bool:
        return address in self.members


def trace(manifest: SeedManifest, horizon: float, radius: int = 12,
          source: str = "") -> TraceSet:
    """Vertices that ever carry the source's initial height, by origin log."""
    ball = tree.indexed_ball(source, radius)
    traj = engine.run(manifest, ball, engine.MEDIAN, engine.FROZEN_INITIAL,
                      horizon, center=source, record_flips=True)
    src = ball.index_of(tree.key_of(source))
    carriers = {src}
    carriers.update(int(v) for v in traj.flips.vertex[traj.flips.new_origin == src])
    members = frozenset(tree.address_of(int(ball.keys[i])) for i in carriers)
    at_edge = any(ball.dist[i] >= ball.radius for i in carriers)
    return TraceSet(source=source, horizon=horizon, members=members,
                    boundary_contact=at_edge)


@dataclass
class ThresholdPair:
    """Both projections at the root's initial height, run as spin systems."""

    level: float
    plus_final: np.ndarray
    minus_final: np.ndarray
    difference: frozenset[str]
    boundary_contact: bool


def threshold_pair(manifest: SeedManifest, horizon: float,
                   radius: int = 12) -> ThresholdPair:
    """Evolve the weak and strict projections at level U_o(0) together.

    The two discrete initial conditions differ only at the root (weak:
    root height <= itself, strict: not), and the returned difference set
    collects every vertex at which the two spin trajectories ever
    disagree.  No origin bookkeeping is involved; this is the projection
    route to the trace.
    """
    ball = tree.indexed_ball("", radius)
    u = randomness.initial_uniforms(manifest, ball.keys)
    level = float(u[0])
    plus = np.where(u <= level, 1, -1).astype(np.int8)
    minus = np.where(u < level, 1, -1).astype(np.int8)
    diff = np.zeros(ball.n_ext, dtype=np.uint8)
    diff[plus != minus] = 1
    ev_t, ev_v = randomness.ring_schedule(manifest, ball, horizon)
    _kernels.run_discrete_diff(ev_t, ev_v, ball.nbr, plus, minus, diff)
    idx = np.nonzero(diff[: ball.n])[0]
    members = frozenset(tree.address_of(int(ball.keys[i])) for i in idx)
    at_edge = bool(np.any(ball.dist[idx] >= ball.radius)) if idx.size else False
    return ThresholdPair(level=level, plus_final=plus, minus_final=minus,
                         difference=members, boundary_contact=at_edge)


def _ever_differ(ball: tree.IndexedBall, spin_a0, flips_a, spin_b0, flips_b) -> np.ndarray:
    """Vertices where two discrete trajectories ever disagree.

    Handles runs with different schedules (resampled clocks) by merging
    the per-vertex flip sequences; between flips spins are constant.
    """
    n = ball.n
    diff = spin_a0[:n] != spin_b0[:n]
    per_a: dict[int, list] = {}
    per_b: dict[int, list] = {}
    for v, t, s in zip(flips_a.vertex, flips_a.time, flips_a.new_spin):
        per_a.setdefault(int(v), []).append((float(t), int(s)))
    for v, t, s in zip(flips_b.vertex, flips_b.time, flips_b.new_spin):
        per_b.setdefault(int(v), []).append((float(t), int(s)))
    for v in set(per_a) | set(per_b):
        if diff[v]:
            continue
        fa = per_a.get(v, [])
        fb = per_b.get(v, [])
        sa, sb = int(spin_a0[v]), int(spin_b0[v])
        events = sorted([(t, 0, s) for t, s in fa] + [(t, 1, s) for t, s in fb])
        for _t, which, s in events:
            if which == 0:
                sa = s
            else:
                sb = s
            if sa != sb:
                diff[v] = True
                break
    return diff


def resampling_difference(manifest: SeedManifest, p: float, horizon: float,
                          radius: int = 12, target: str = "",
                          resample_clock: bool = False) -> TraceSet:
    """Vertices ever disagreeing between target-is-+1 and target-is--1 runs.

    Both runs share all randomness except the target's initial spin; with
    `resample_clock` the second run additionally redraws the target's
    clock stream, which changes the schedule itself.
    """
    ball = tree.indexed_ball("", radius)
    man_b = manifest.with_clock_resampled(target) if resample_clock else manifest
    a = engine.run(manifest, ball, engine.Discrete(p), engine.FROZEN_INITIAL, horizon,
                   discrete_path="direct", forced_spins={target: 1}, record_flips=True)
    b = engine.run(man_b, ball, engine.Discrete(p), engine.FROZEN_INITIAL, horizon,
                   discrete_path="direct", forced_spins={target: -1}, record_flips=True)
    a0 = engine._discrete_state(manifest, ball, p, engine.FROZEN_INITIAL, {target: 1})
    b0 = engine._discrete_state(man_b, ball, p, engine.FROZEN_INITIAL, {target: -1})
    diff = _ever_differ(ball, a0, a.flips, b0, b.flips)
    idx = np.nonzero(diff)[0]
    members = frozenset(tree.address_of(int(ball.keys[i])) for i in idx)
    at_edge = bool(np.any(ball.dist[idx] >= ball.radius)) if idx.size else False
    return TraceSet(source=target, horizon=horizon, members=members,
                    boundary_contact=at_edge)


def chain_membership(ball: tree.IndexedBall, spin: np.ndarray, address: str = "",
                     depth: int = 8) -> bool:
    """Does the vertex sit on a monochromatic path reaching depth D both ways?

    The depth-D surrogate for lying on a doubly-infinite chain: at least
    two of the vertex's neighbor directions must admit a same-spin simple
    path descending D further steps away from it.
    """
    n = ball.n
    v0 = ball.index_of(tree.key_of(address))
    s = spin[v0]
    long_dirs = 0
    for u0 in ball.nbr[v0]:
        if u0 >= n or spin[u0] != s:
            continue
        # iterative DFS away from v0, tracking depth
        best = 1
        stack = [(int(u0), int(v0), 1)]
        while stack and best < depth:
            v, parent, d = stack.pop()
            for w in ball.nbr[v]:
                w = int(w)
                if w == parent or w >= n or spin[w] != s:
                    continue
                if d + 1 > best:
                    best = d + 1
                stack.append((w, v, d + 1))
        if best >= depth:
            long_dirs += 1
        if long_dirs >= 2:
            return True
    return False


@dataclass
class TriplePointReport:
    ball: tree.IndexedBall
    sign: int
    vertices: np.ndarray        # local indices of all triple points
    n_spanning_clusters: int
    n_spanning_with_triple: int
    triple_points_per_cluster: dict[int, int]

    @property
    def fraction(self) -> float:
        if self.n_spanning_clusters == 0:
            return float("nan")
        return self.n_spanning_with_triple / self.n_spanning_clusters

    @property
    def addresses(self) -> list[str]:
        return [tree.address_of(int(self.ball.keys[i])) for i in self.vertices]


def triple_points(ball: tree.IndexedBall, spin: np.ndarray, sign: int = 1) -> TriplePointReport:
    """Find cluster vertices splitting their cluster into >= 3 edge-reaching parts.

    The edge shell stands in for infinity, so a triple point is a vertex
    with three cluster directions that each reach it.  For the spanning
    statistics a cluster counts only when it crosses the outer half of
    the window: a member at distance <= R/2 and one at distance R.  Shell
    vertices have degree one inside the ball, so fragments living next to
    the shell touch it freely; they are truncation artifacts, not things
    that look infinite, and they stay out of the denominator.
    """
    n = ball.n
    mine = spin[:n] == sign
    eu, ev = _in_ball_edges(ball)
    keep = mine[eu] & mine[ev]
    labels = _components(n, eu[keep], ev[keep])
    labels[~mine] = -1
    at_edge = (ball.dist[:n] == ball.radius) & mine
    in_core = (ball.dist[:n] <= ball.radius // 2) & mine

    # reach[(v, u)]: walking v -> u and onward inside the cluster, do we
    # touch the edge shell?  Directed-edge DP, memoized, explicit stack.
    reach: dict[tuple[int, int], bool] = {}

    def reach_dir(v0: int, u0: int) -> bool:
        start = (v0, u0)
        if start in reach:
            return reach[start]
        stack = [start]
        while stack:
            v, u = stack[-1]
            if (v, u) in reach:
                stack.pop()
                continue
            if at_edge[u]:
                reach[(v, u)] = True
                stack.pop()
                continue
            pending = False
            out = False
            for w in ball.nbr[u]:
                w = int(w)
                if w == v or w >= n or not mine[w]:
                    continue
                r = reach.get((u, w))
                if r is None:
                    stack.append((u, w))
                    pending = True
                elif r:
                    out = True
            if not pending:
                reach[(v, u)] = out
                stack.pop()
        return reach[start]

    spanning = set(labels[at_edge].tolist()) & set(labels[in_core].tolist())
    triples: dict[int, int] = {}
    found = []
    for v in range(n):
        lab = labels[v]
        if lab < 0:
            continue
        dirs = 0
        for u in ball.nbr[v]:
            u = int(u)
            if u >= n or not mine[u]:
                continue
            if reach_dir(v, u):
                dirs += 1
        if dirs >= 3:
            triples[lab] = triples.get(lab, 0) + 1
            found.append(v)
    with_triple = sum(1 for lab in spanning if triples.get(lab, 0) > 0)
    return TriplePointReport(ball=ball, sign=sign,
                             vertices=np.array(found, dtype=np.int32),
                             n_spanning_clusters=len(spanning),
                             n_spanning_with_triple=with_triple,
                             triple_points_per_cluster=triples)


def energy_audit(flips: MedianFlipLog) -> int:
    """Count flips where the disagreement degree increased.  Contract: 0.

    The disagreement degree of a vertex is the number of neighbors whose
    spin differs from its own; spins are compared by origin.  Taking the
    median makes the new spin equal to at least one neighbor's, so the
    count can only move down or stay.
    """
    if len(flips) == 0:
        return 0
    d_pre = (flips.nb_origins != flips.old_origin[:, None]).sum(axis=1)
    d_post = (flips.nb_origins != flips.new_origin[:, None]).sum(axis=1)
    return int((d_post > d_pre).sum())


class IdentityRule:
    """m(x,y) = 1 exactly when x = y.  Both audit sides are exactly 1."""

    name = "identity"
    max_distance = 0
    exact_value = 1.0

    def prepare(self, manifest: SeedManifest):
        return None

    def destinations(self, manifest, ctx, x_key: int):
        return [(x_key, 1.0)]


class NeighborRankRule:
    """Unit mass to each neighbor holding a larger initial uniform."""

    name = "neighbor_rank"
    max_distance = 1
    exact_value = None

    def prepare(self, manifest: SeedManifest):
        return None

    def destinations(self, manifest, ctx, x_key: int):
        ux = randomness.initial_uniform(manifest, x_key)
        return [(nk, 1.0) for nk in tree.neighbors_key(x_key)
                if randomness.initial_uniform(manifest, nk) > ux]


class NearestLowRule:
    """Unit mass to the closest vertex whose height at time t is <= level.

    Distance ties are broken by the largest dedicated tie-break uniform
    among the equidistant candidates.  Undecided (no candidate within the
    window) counts as a truncation miss.
    """

    name = "nearest_low"
    exact_value = None

    def __init__(self, t: float = 1.0, level: float = 0.5, window: int = 4):
        self.t = t
        self.level = level
        self.max_distance = window

    def prepare(self, manifest: SeedManifest):
        return exactness.BackwardOracle(manifest, self.t)

    def destinations(self, manifest, oracle, x_key: int):
        shells: dict[int, list[int]] = {}
        ball = tree.indexed_ball(tree.address_of(x_key), self.max_distance)
        for i in range(ball.n):
            shells.setdefault(int(ball.dist[i]), []).append(int(ball.keys[i]))
        for d in range(self.max_distance + 1):
            hits = [k for k in shells.get(d, ())
                    if oracle.state_key(k, self.t)[0] <= self.level]
            if hits:
                winner = max(hits, key=lambda k: randomness.tie_break_uniform(manifest, k))
                return [(winner, 1.0)]
        return None


@dataclass
class TransportAudit:
    rule_name: str
    replicas: int
    out_mean: float
    out_halfwidth: float
    in_mean: float
    in_halfwidth: float
    miss_rate: float
    exact: bool

    @property
    def overlap_3sigma(self) -> bool:
        gap = abs(self.out_mean - self.in_mean)
        # halfwidths are 1.96 sigma; compare at 3 sigma
        joint = 3.0 / 1.96 * float(np.hypot(self.out_halfwidth, self.in_halfwidth))
        return gap <= joint or self.exact

    @property
    def passes(self) -> bool:
        return self.overlap_3sigma and self.miss_rate < 0.01


def transport_audit(rule, master_seed: int, replicas: int) -> TransportAudit:
    """Monte Carlo check that expected mass out of o equals mass into o.

    Mass out sums the rule's sends from the root; mass in evaluates the
    rule at every vertex close enough to possibly target the root.  Rules
    are local (radius `max_distance`), so both sums are finite windows.
    """
    root = tree.key_of("")
    window = tree.indexed_ball("", rule.max_distance)
    senders = [int(k) for k in window.keys[: window.n]]
    out = np.empty(replicas)
    into = np.empty(replicas)
    misses = 0
    evals = 0
    for i in range(replicas):
        man = SeedManifest(master_seed=master_seed + i)
        ctx = rule.prepare(man)
        mass_in = 0.0
        mass_out = 0.0
        for x in senders:
            dest = rule.destinations(man, ctx, x)
            evals += 1
            if dest is None:
                misses += 1
                continue
            for y, m in dest:
                if x == root:
                    mass_out += m
                if y == root:
                    mass_in += m
        out[i] = mass_out
        into[i] = mass_in
    exact = rule.exact_value is not None
    if exact:
        assert np.all(out == rule.exact_value) and np.all(into == rule.exact_value)
    hw = lambda a: 1.96 * float(a.std(ddof=1)) / np.sqrt(replicas) if replicas > 1 else 0.0
    return TransportAudit(
        rule_name=rule.name, replicas=replicas,
        out_mean=float(out.mean()), out_halfwidth=hw(out),
        in_mean=float(into.mean()), in_halfwidth=hw(into),
        miss_rate=misses / max(evals, 1), exact=exact,
    )

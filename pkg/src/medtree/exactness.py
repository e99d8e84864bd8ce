"""Exact states on the infinite tree, and certificates thereof.

Three independent routes to the same quantity live here and in the
engine, and the tests hold them against each other:

* the backward oracle: unrolls the dependency recursion of a single
  space-time point (vertex, t) through actual ring times, touching only
  the finitely many states the value in fact depends on.  Exact on the
  infinite tree, cost grows roughly like e^(2t), so it is a tool for
  small horizons.
* the bracketing pair: two coupled ball runs whose static extensions are
  pinned below / above every height.  Monotonicity squeezes the true
  infinite-tree state between them, so wherever the two agree the shared
  value is certified exact, boundary unseen.
* the pruned forward run (engine.run_observed), a third implementation
  path used as a cross-check at radii the full kernel can also reach.

`bracket_run` raises InvariantViolation if the two coupled runs ever
leave order, which is a can't-happen event under the shared schedule.
"""

from __future__ import annotations

import sys
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, engine, randomness, tree
from .randomness import SeedManifest


class InvariantViolation(RuntimeError):
    """A structural property the dynamics guarantee failed to hold."""


class BackwardOracle:
    """Exact infinite-tree median states at one realization of the clocks.

    state(address, t) resolves the last ring of the vertex at or before
    t, evaluates the three neighbors just before that ring (a neighbor's
    ring at exactly the same time counts only if its address is
    lexicographically smaller, matching the forward event order), and
    takes the median.  Results are memoized per (vertex, ring index), so
    repeated queries against one realization share work.
    """

    def __init__(self, manifest: SeedManifest, horizon: float):
        self.manifest = manifest
        self.horizon = float(horizon)
        self._rings: dict[int, np.ndarray] = {}
        self._memo: dict[tuple[int, int], tuple[float, int]] = {}
        sys.setrecursionlimit(max(sys.getrecursionlimit(), 200_000))

    def rings_of(self, key: int) -> np.ndarray:
        r = self._rings.get(key)
        if r is None:
            r = randomness.ring_times(self.manifest, key, self.horizon)
            self._rings[key] = r
        return r

    @property
    def n_evaluations(self) -> int:
        return len(self._memo)

    def state_key(self, key: int, t: float, tie: tuple | None = None) -> tuple[float, int]:
        r = self.rings_of(key)
        if tie is None:
            j = bisect_right(r, t)
        else:
            j = bisect_left(r, t)
            if j < len(r) and r[j] == t and tree.lex_digits(key) < tie:
                j += 1
        got = self._memo.get((key, j))
        if got is not None:
            return got
        if j == 0:
            out = (randomness.initial_uniform(self.manifest, key), key)
        else:
            s = float(r[j - 1])
            my_lex = tree.lex_digits(key)
            nb = [self.state_key(nk, s, tie=my_lex) for nk in tree.neighbors_key(key)]
            nb.sort(key=lambda vo: (vo[0], tree.lex_digits(vo[1])))
            out = nb[1]
        self._memo[(key, j)] = out
        return out

    def state(self, address: str, t: float) -> engine.Spin:
        if t > self.horizon:
            raise ValueError(f"query at {t} beyond oracle horizon {self.horizon}")
        value, origin = self.state_key(tree.key_of(address), t)
        return engine.Spin(value, tree.address_of(origin))


@dataclass
class BracketRun:
    """Coupled below/above-pinned runs on one ball and schedule."""

    ball: tree.IndexedBall
    manifest: SeedManifest
    horizon: float
    n_events: int
    value_lo: np.ndarray
    origin_lo: np.ndarray
    value_hi: np.ndarray
    origin_hi: np.ndarray
    snapshots: dict[float, tuple] = field(default_factory=dict)

    def certified(self, t: float | None = None) -> np.ndarray:
        """In-ball mask of vertices whose bracket has closed at t (final)."""
        if t is None:
            vl, ol, vh, oh = self.value_lo, self.origin_lo, self.value_hi, self.origin_hi
        else:
            vl, ol, vh, oh = self.snapshots[t]
        n = self.ball.n
        mask = ol[:n] == oh[:n]
        if not np.array_equal(vl[:n][mask], vh[:n][mask]):
            raise InvariantViolation("bracket origins agree but values differ")
        return mask

    def certified_state(self, address: str, t: float | None = None) -> engine.Spin | None:
        i = self.ball.index_of(tree.key_of(address))
        vl, ol, _vh, oh = (
            (self.value_lo, self.origin_lo, self.value_hi, self.origin_hi)
            if t is None else self.snapshots[t]
        )
        if ol[i] != oh[i]:
            return None
        return engine.Spin(float(vl[i]), tree.address_of(int(self.ball.keys[ol[i]])))


def bracket_run(
    manifest: SeedManifest,
    ball: tree.IndexedBall | int,
    horizon: float,
    snapshot_times=(),
    *,
    center: str = "",
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> BracketRun:
    """Run the pinned-low and pinned-high pair on shared clocks.

    The kernel asserts the pointwise order after every update; a nonzero
    violation count is a bug in the dynamics, not a data condition, and
    raises InvariantViolation.
    """
    ball = engine._as_ball(ball, center)
    snap_t = np.asarray(sorted(set(float(t) for t in snapshot_times)), dtype=np.float64)
    if snap_t.size and (snap_t[0] < 0.0 or snap_t[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    ev_t, ev_v = engine._schedule(manifest, ball, horizon, 0.0, (), max_events)
    value_lo, origin_lo = engine._median_state(manifest, ball, engine.FROZEN_LOW, None)
    value_hi, origin_hi = engine._median_state(manifest, ball, engine.FROZEN_HIGH, None)
    ns, n_ext = snap_t.size, ball.n_ext
    sv_lo = np.empty((ns, n_ext))
    so_lo = np.empty((ns, n_ext), dtype=np.int32)
    sv_hi = np.empty((ns, n_ext))
    so_hi = np.empty((ns, n_ext), dtype=np.int32)
    violations = _kernels.run_median_pair(
        ev_t, ev_v, ball.nbr, ball.lex, value_lo, origin_lo, value_hi, origin_hi,
        snap_t, sv_lo, so_lo, sv_hi, so_hi,
    )
    if violations:
        raise InvariantViolation(f"bracket order broken at {violations} updates")
    snaps = {
        float(t): (sv_lo[i].copy(), so_lo[i].copy(), sv_hi[i].copy(), so_hi[i].copy())
        for i, t in enumerate(snap_t)
    }
    return BracketRun(
        ball=ball, manifest=manifest, horizon=horizon, n_events=len(ev_t),
        value_lo=value_lo, origin_lo=origin_lo,
        value_hi=value_hi, origin_hi=origin_hi, snapshots=snaps,
    )


@dataclass
class Certificate:
    """One vertex's certification outcome, CSV-ready."""

    vertex: str
    horizon: float
    state: engine.Spin | None
    radius: int | None
    tried: list[int]
    bracket_gap: int

    @property
    def certified(self) -> bool:
        return self.state is not None

    @property
    def verdict(self) -> str:
        return "certified" if self.certified else "undetermined"


def sandwich_certify(
    manifest: SeedManifest,
    address: str,
    t: float,
    radii=(4, 6, 8, 10, 12, 14),
    *,
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> Certificate:
    """Certify one vertex's infinite-tree state at time t, escalating radius.

    Tries each radius in order and stops at the first whose bracket has
    closed at the vertex.  Undetermined is a report, not an error; the
    bracket gap (in-ball vertices where the pinned pair still disagrees
    at t, for the last radius tried) says how far from closing it ended.
    """
    tried = []
    gap = -1
    for radius in radii:
        tried.append(radius)
        br = bracket_run(manifest, tree.indexed_ball(address, radius), t,
                         center=address, max_events=max_events)
        gap = int((~br.certified()).sum())
        st = br.certified_state(address)
        if st is not None:
            return Certificate(vertex=address, horizon=t, state=st,
                               radius=radius, tried=tried, bracket_gap=gap)
    return Certificate(vertex=address, horizon=t, state=None, radius=None,
                       tried=tried, bracket_gap=gap)


@dataclass
class DiscreteBracketRun:
    """Spin runs under the two extreme frozen boundaries, coupled."""

    ball: tree.IndexedBall
    manifest: SeedManifest
    p: float
    horizon: float
    n_events: int
    spin_lo: np.ndarray     # boundary frozen at -1
    spin_hi: np.ndarray     # boundary frozen at +1
    snapshots: dict[float, tuple] = field(default_factory=dict)

    def certified(self, t: float | None = None) -> np.ndarray:
        lo, hi = (self.spin_lo, self.spin_hi) if t is None else self.snapshots[t]
        n = self.ball.n
        return lo[:n] == hi[:n]

    def certified_spin(self, address: str, t: float | None = None) -> int | None:
        i = self.ball.index_of(tree.key_of(address))
        lo, hi = (self.spin_lo, self.spin_hi) if t is None else self.snapshots[t]
        return int(lo[i]) if lo[i] == hi[i] else None


def discrete_bracket_run(
    manifest: SeedManifest,
    ball: tree.IndexedBall | int,
    p: float,
    horizon: float,
    snapshot_times=(),
    *,
    center: str = "",
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> DiscreteBracketRun:
    """Bracket the spin system directly, without going through heights.

    Any fixed boundary behavior lies between everything-minus and
    everything-plus, so spin_lo <= x <= spin_hi pointwise for every
    choice, and equality certifies the infinite-tree spin.  Kept separate
    from the projected-median certificate on purpose: the two certify
    through different state spaces and are held against each other.
    """
    ball = engine._as_ball(ball, center)
    snap_t = np.asarray(sorted(set(float(t) for t in snapshot_times)), dtype=np.float64)
    if snap_t.size and (snap_t[0] < 0.0 or snap_t[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    ev_t, ev_v = engine._schedule(manifest, ball, horizon, 0.0, (), max_events)
    spin_lo = engine._discrete_state(manifest, ball, p, engine.FrozenDiscrete(-1), None)
    spin_hi = engine._discrete_state(manifest, ball, p, engine.FrozenDiscrete(1), None)
    ns = snap_t.size
    sa = np.empty((ns, ball.n_ext), dtype=np.int8)
    sb = np.empty((ns, ball.n_ext), dtype=np.int8)
    violations = _kernels.run_discrete_pair(ev_t, ev_v, ball.nbr, spin_lo, spin_hi,
                                            snap_t, sa, sb)
    if violations:
        raise InvariantViolation(f"spin bracket order broken at {violations} updates")
    snaps = {float(t): (sa[i].copy(), sb[i].copy()) for i, t in enumerate(snap_t)}
    return DiscreteBracketRun(
        ball=ball, manifest=manifest, p=p, horizon=horizon, n_events=len(ev_t),
        spin_lo=spin_lo, spin_hi=spin_hi, snapshots=snaps,
    )


@dataclass
class FixatedRegion:
    """Vertices certified at t and 2t with no state change in between."""

    run: BracketRun | DiscreteBracketRun
    t: float
    mask: np.ndarray

    @property
    def ball(self) -> tree.IndexedBall:
        return self.run.ball

    @property
    def fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def certified_fixated(
    manifest: SeedManifest,
    ball: tree.IndexedBall | int,
    t: float,
    *,
    mode=engine.MEDIAN,
    center: str = "",
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> FixatedRegion:
    """Certified-and-held mask at time t, using a doubled-horizon run.

    Holding the certified state from t out to 2t is the finite surrogate
    for having reached the final configuration; a vertex still moving in
    that stretch is excluded even if certified at both endpoints.
    """
    ball = engine._as_ball(ball, center)
    if isinstance(mode, engine.Discrete):
        run = discrete_bracket_run(manifest, ball, mode.p, 2.0 * t, (t,),
                                   max_events=max_events)
        lo_t, _hi_t = run.snapshots[float(t)]
        held = lo_t[: ball.n] == run.spin_lo[: ball.n]
    else:
        run = bracket_run(manifest, ball, 2.0 * t, (t,), max_events=max_events)
        _vl, ol_t, _vh, _oh = run.snapshots[float(t)]
        held = ol_t[: ball.n] == run.origin_lo[: ball.n]
    mask = run.certified(t) & run.certified() & held
    return FixatedRegion(run=run, t=float(t), mask=mask)


def chronological_reach(manifest: SeedManifest, horizon: float, *,
                        center: str = "", inward: bool = False,
                        k_cap: int = 10_000) -> int:
    """Length of the longest chronological path at the center's clocks.

    Outward (default): the largest k such that some simple path
    center = v1, v2, ..., vk carries rings t2 < t3 < ... < tk within
    [0, horizon], each vertex ringing strictly after its predecessor.
    `inward=True` mirrors it: rings strictly decreasing toward the center.
    The center itself needs no ring; it contributes the first vertex.

    On a tree the path to any vertex is unique, so the frontier keeps one
    optimal time per vertex: minimal last-ring time going outward (greedy
    earliest extension is dominant), maximal first-ring time going inward.
    """
    center_key = tree.key_of(center)
    rings: dict[int, np.ndarray] = {}

    def rings_of(key: int) -> np.ndarray:
        r = rings.get(key)
        if r is None:
            r = randomness.ring_times(manifest, key, horizon)
            rings[key] = r
        return r

    # frontier: vertex -> (best time, parent), best = min going out, max going in
    sentinel = 0.0 if not inward else np.inf
    frontier: dict[int, tuple[float, int]] = {center_key: (sentinel, -1)}
    k = 1
    while frontier and k < k_cap:
        nxt: dict[int, tuple[float, int]] = {}
        for key, (t_best, parent) in frontier.items():
            for nk in tree.neighbors_key(key):
                if nk == parent:
                    continue
                r = rings_of(nk)
                if not inward:
                    i = bisect_right(r, t_best)  # first ring strictly after
                    if i < len(r):
                        cand = float(r[i])
                        old = nxt.get(nk)
                        if old is None or cand < old[0]:
                            nxt[nk] = (cand, key)
                else:
                    i = bisect_left(r, t_best)  # last ring strictly before
                    if i > 0:
                        cand = float(r[i - 1])
                        old = nxt.get(nk)
                        if old is None or cand > old[0]:
                            nxt[nk] = (cand, key)
        if not nxt:
            break
        frontier = nxt
        k += 1
    return k


def reach_tail_bound(horizon: float, k: int) -> float:
    """Closed-form bound on P(chronological reach >= k vertices)."""
    return 1.25 * float(np.exp(4.0 * horizon)) * 0.8 ** k

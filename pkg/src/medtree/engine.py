"""Event-driven dynamics on a ball of the 3-regular tree.

A run processes every ring of every in-ball vertex in global (time, lex
address) order.  In median mode a ringing vertex adopts the median of its
three neighbors' heights; in discrete mode, the strict majority of their
spins (degree 3, so no ties).  The vertex's own state never enters the
update; it only decides whether the event is logged as a flip.

Boundary conditions fix the static extension ring around the ball:

* FROZEN_INITIAL - extension vertices hold their own initial state forever,
* FROZEN_LOW / FROZEN_HIGH - extension pinned below / above every height
  (discrete runs: all -1 / all +1), the bracketing pair used for
  certification,
* FrozenDiscrete(s) - discrete runs, extension pinned at s,
* FREE - ball leaves copy their unique inward neighbor instead of seeing
  the extension at all (exploratory; certification never uses it).

Discrete mode is, by default, the projection of a median-mode run at level
p (the two commute pathwise); `discrete_path="direct"` runs the standalone
majority kernel instead, and `check_commutation` verifies the two paths
agree event for event.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels, randomness, tree
from .randomness import SeedManifest

DEFAULT_MAX_EVENTS = 64_000_000

LOW_VALUE = -1.0
HIGH_VALUE = 2.0


class EngineBudgetError(RuntimeError):
    """A run would exceed its configured maximum event count."""


class _Bc:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name


FROZEN_INITIAL = _Bc("frozen_initial")
FROZEN_LOW = _Bc("frozen_low")
FROZEN_HIGH = _Bc("frozen_high")
FREE = _Bc("free")


@dataclass(frozen=True)
class FrozenDiscrete:
    spin: int

    def __post_init__(self):
        if self.spin not in (-1, 1):
            raise ValueError("boundary spin must be -1 or +1")


class Median:
    def __repr__(self) -> str:
        return "median"


MEDIAN = Median()


@dataclass(frozen=True)
class Discrete:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("density p must be in [0, 1]")


@dataclass(frozen=True)
class Spin:
    """A median-process state: height plus the vertex it was copied from.

    Equality is origin identity; the dynamics only ever copy initial
    heights, so two cells agree exactly when they hold the same origin.
    """

    value: float
    origin: str

    def __eq__(self, other):
        if not isinstance(other, Spin):
            return NotImplemented
        return self.origin == other.origin

    def __hash__(self):
        return hash(self.origin)

    def side(self, p: float) -> int:
        return 1 if self.value <= p else -1


def sort_spins(spins: Sequence[Spin]) -> list[Spin]:
    """Order spins by height with the lex-address tie rule."""
    return sorted(spins, key=lambda s: (s.value, tree.lex_digits(tree.key_of(s.origin))))


def median_update(neighbor_spins: Sequence[Spin]) -> Spin:
    if len(neighbor_spins) != 3:
        raise ValueError("median update reads exactly 3 neighbors")
    return sort_spins(neighbor_spins)[1]


def majority_update(neighbor_spins: Sequence[int]) -> int:
    if len(neighbor_spins) != 3 or any(s not in (-1, 1) for s in neighbor_spins):
        raise ValueError("majority update reads exactly 3 spins of +-1")
    return 1 if sum(neighbor_spins) > 0 else -1


def project(values: np.ndarray, p: float) -> np.ndarray:
    """Threshold heights to spins: +1 where value <= p."""
    return np.where(np.asarray(values) <= p, 1, -1).astype(np.int8)


@dataclass
class MedianFlipLog:
    vertex: np.ndarray      # int32 local index
    time: np.ndarray        # float64
    old_value: np.ndarray   # float64
    old_origin: np.ndarray  # int32 local index, or LOW/HIGH sentinel
    new_value: np.ndarray
    new_origin: np.ndarray
    nb_values: np.ndarray   # (nf, 3) neighbor heights at the update
    nb_origins: np.ndarray  # (nf, 3)

    def __len__(self) -> int:
        return len(self.vertex)


@dataclass
class DiscreteFlipLog:
    vertex: np.ndarray
    time: np.ndarray
    old_spin: np.ndarray
    new_spin: np.ndarray

    def __len__(self) -> int:
        return len(self.vertex)


@dataclass
class Trajectory:
    """Final state of a run plus whatever was recorded along the way."""

    ball: tree.IndexedBall
    manifest: SeedManifest
    mode: Median | Discrete
    bc: object
    horizon: float
    start_time: float
    n_events: int
    n_flips: int
    value: np.ndarray | None = None    # float64 [n_ext] (median)
    origin: np.ndarray | None = None   # int32 [n_ext] (median)
    spin: np.ndarray | None = None     # int8 [n_ext] (discrete)
    snapshots: dict[float, tuple] = field(default_factory=dict)
    flips: MedianFlipLog | DiscreteFlipLog | None = None
    events: tuple | None = None        # (ev_t, ev_v, ev_new_val/new_spin, ev_new_org?)

    @property
    def is_median(self) -> bool:
        return self.value is not None

    def origin_name(self, local_origin: int) -> str:
        if local_origin == _kernels.LOW_ORIGIN:
            return "low"
        if local_origin == _kernels.HIGH_ORIGIN:
            return "high"
        return tree.address_of(int(self.ball.keys[local_origin]))

    def spin_at(self, address: str, p: float | None = None) -> int:
        i = self.ball.index_of(tree.key_of(address))
        if self.is_median:
            if p is None:
                raise ValueError("median trajectories need a level p to report a spin")
            return 1 if self.value[i] <= p else -1
        return int(self.spin[i])

    def state_at(self, address: str) -> Spin:
        i = self.ball.index_of(tree.key_of(address))
        return Spin(float(self.value[i]), self.origin_name(int(self.origin[i])))

    def project(self, p: float) -> "Trajectory":
        """Shared-path discrete view of a median trajectory at level p."""
        if not self.is_median:
            raise ValueError("already discrete")
        spin = project(self.value, p)
        snaps = {t: (project(v, p),) for t, (v, _o) in self.snapshots.items()}
        flips = None
        n_flips = 0
        if self.flips is not None:
            old = project(self.flips.old_value, p)
            new = project(self.flips.new_value, p)
            keep = old != new
            flips = DiscreteFlipLog(
                vertex=self.flips.vertex[keep], time=self.flips.time[keep],
                old_spin=old[keep], new_spin=new[keep],
            )
            n_flips = int(keep.sum())
        events = None
        if self.events is not None:
            ev_t, ev_v, ev_val, _ev_org = self.events
            events = (ev_t, ev_v, project(ev_val, p))
        return Trajectory(
            ball=self.ball, manifest=self.manifest, mode=Discrete(p), bc=self.bc,
            horizon=self.horizon, start_time=self.start_time,
            n_events=self.n_events, n_flips=n_flips, spin=spin,
            snapshots=snaps, flips=flips, events=events,
        )


def _as_ball(ball: tree.IndexedBall | int, center: str = "") -> tree.IndexedBall:
    if isinstance(ball, tree.IndexedBall):
        return ball
    return tree.indexed_ball(center, ball)


def _median_state(manifest: SeedManifest, ball: tree.IndexedBall, bc,
                  forced_values: Mapping[str, float] | None) -> tuple[np.ndarray, np.ndarray]:
    n, n_ext = ball.n, ball.n_ext
    value = randomness.initial_uniforms(manifest, ball.keys).astype(np.float64)
    origin = np.arange(n_ext, dtype=np.int32)
    if bc is FROZEN_LOW:
        value[n:] = LOW_VALUE
        origin[n:] = _kernels.LOW_ORIGIN
    elif bc is FROZEN_HIGH:
        value[n:] = HIGH_VALUE
        origin[n:] = _kernels.HIGH_ORIGIN
    elif bc is FROZEN_INITIAL or bc is FREE:
        pass
    else:
        raise ValueError(f"boundary condition {bc!r} not valid for median mode")
    if forced_values:
        for addr, v in forced_values.items():
            value[ball.index_of(tree.key_of(addr))] = v
    return value, origin


def _discrete_state(manifest: SeedManifest, ball: tree.IndexedBall, p: float, bc,
                    forced_spins: Mapping[str, int] | None) -> np.ndarray:
    n = ball.n
    spin = project(randomness.initial_uniforms(manifest, ball.keys), p)
    # FROZEN_LOW/HIGH are height sentinels: a bottom height thresholds to
    # spin +1 at every level p, a top height to -1.  Spin order is the
    # reverse of height order.
    if bc is FROZEN_LOW:
        spin[n:] = 1
    elif bc is FROZEN_HIGH:
        spin[n:] = -1
    elif isinstance(bc, FrozenDiscrete):
        spin[n:] = bc.spin
    elif bc is FROZEN_INITIAL or bc is FREE:
        pass
    else:
        raise ValueError(f"boundary condition {bc!r} not valid for discrete mode")
    if forced_spins:
        for addr, s in forced_spins.items():
            spin[ball.index_of(tree.key_of(addr))] = s
    return spin


def _free_nbr(ball: tree.IndexedBall) -> np.ndarray:
    if ball.radius == 0:
        raise ValueError("free boundary needs radius >= 1")
    nbr = ball.nbr.copy()
    leaves = np.nonzero(ball.dist[: ball.n] == ball.radius)[0]
    inward = np.where(ball.dist[nbr[leaves]] == ball.radius - 1)
    # each leaf has exactly one inward neighbor; copy it into all 3 slots
    inward_idx = np.empty(len(leaves), dtype=np.int32)
    inward_idx[inward[0]] = nbr[leaves[inward[0]], inward[1]]
    nbr[leaves] = inward_idx[:, None]
    return nbr


def _schedule(manifest: SeedManifest, ball: tree.IndexedBall, horizon: float,
              start_time: float, pinned_idx: Sequence[int], max_events: int):
    est = ball.n * max(horizon, 0.0) * 1.25 + 64
    if est > max_events:
        raise EngineBudgetError(
            f"~{est:.0f} events expected for |ball|={ball.n}, horizon={horizon}; "
            f"budget is {max_events}"
        )
    ev_t, ev_v = randomness.ring_schedule(manifest, ball, horizon)
    if len(ev_t) > max_events:
        raise EngineBudgetError(f"{len(ev_t)} events exceed budget {max_events}")
    if start_time > 0.0:
        keep = ev_t > start_time
        ev_t, ev_v = ev_t[keep], ev_v[keep]
    if pinned_idx:
        keep = ~np.isin(ev_v, np.asarray(pinned_idx, dtype=np.int32))
        ev_t, ev_v = ev_t[keep], ev_v[keep]
    return ev_t, ev_v


def run(
    manifest: SeedManifest,
    ball: tree.IndexedBall | int,
    mode: Median | Discrete = MEDIAN,
    bc=FROZEN_INITIAL,
    horizon: float = 1.0,
    *,
    center: str = "",
    snapshot_times: Sequence[float] = (),
    record_flips: bool = False,
    record_events: bool = False,
    pinned: Sequence[str] = (),
    forced_values: Mapping[str, float] | None = None,
    forced_spins: Mapping[str, int] | None = None,
    discrete_path: str = "projected",
    initial_state=None,
    start_time: float = 0.0,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> Trajectory:
    """Run the dynamics and return the final state.

    `snapshot_times` records full configurations at those times (a snapshot
    at t reflects every event with time <= t).  `record_flips` keeps the
    full flip log; `record_events` additionally keeps the per-event outcome
    stream, which the commutation check compares across code paths.
    `pinned` vertices never ring; `forced_values` / `forced_spins` override
    initial states pointwise.  Restarts: pass `initial_state` (the arrays
    of a snapshot) plus `start_time`.
    """
    ball = _as_ball(ball, center)
    if horizon < start_time:
        raise ValueError("horizon before start time")
    snap_t = np.asarray(sorted(set(float(t) for t in snapshot_times)), dtype=np.float64)
    if snap_t.size and (snap_t[0] < start_time or snap_t[-1] > horizon):
        raise ValueError("snapshot times must lie in [start_time, horizon]")

    if isinstance(mode, Discrete) and discrete_path == "projected":
        base = run(
            manifest, ball, MEDIAN, bc, horizon,
            snapshot_times=snapshot_times, record_flips=record_flips,
            record_events=record_events, pinned=pinned,
            forced_values=forced_values, initial_state=initial_state,
            start_time=start_time, max_events=max_events,
        )
        return base.project(mode.p)

    pinned_idx = [ball.index_of(tree.key_of(a)) for a in pinned]
    nbr = _free_nbr(ball) if bc is FREE else ball.nbr
    ev_t, ev_v = _schedule(manifest, ball, horizon, start_time, pinned_idx, max_events)
    m = len(ev_t)

    if isinstance(mode, Median):
        if initial_state is not None:
            value, origin = (a.copy() for a in initial_state)
        else:
            value, origin = _median_state(manifest, ball, bc, forced_values)
        sv = np.empty((snap_t.size, ball.n_ext))
        so = np.empty((snap_t.size, ball.n_ext), dtype=np.int32)
        if record_flips or record_events:
            f_v = np.empty(m, dtype=np.int32)
            f_t = np.empty(m)
            f_ov = np.empty(m)
            f_oo = np.empty(m, dtype=np.int32)
            f_nv = np.empty(m)
            f_no = np.empty(m, dtype=np.int32)
            f_nbv = np.empty((m, 3))
            f_nbo = np.empty((m, 3), dtype=np.int32)
            e_val = np.empty(m)
            e_org = np.empty(m, dtype=np.int32)
            nf = _kernels.run_median_rec(
                ev_t, ev_v, nbr, value, origin, ball.lex, snap_t, sv, so,
                f_v, f_t, f_ov, f_oo, f_nv, f_no, f_nbv, f_nbo, e_val, e_org,
            )
            flips = MedianFlipLog(
                f_v[:nf].copy(), f_t[:nf].copy(), f_ov[:nf].copy(), f_oo[:nf].copy(),
                f_nv[:nf].copy(), f_no[:nf].copy(), f_nbv[:nf].copy(), f_nbo[:nf].copy(),
            )
            events = (ev_t, ev_v, e_val, e_org) if record_events else None
        else:
            nf = _kernels.run_median(ev_t, ev_v, nbr, value, origin, ball.lex, snap_t, sv, so)
            flips, events = None, None
        snaps = {float(t): (sv[i].copy(), so[i].copy()) for i, t in enumerate(snap_t)}
        return Trajectory(
            ball=ball, manifest=manifest, mode=mode, bc=bc, horizon=horizon,
            start_time=start_time, n_events=m, n_flips=int(nf),
            value=value, origin=origin, snapshots=snaps,
            flips=flips if record_flips else None, events=events,
        )

    # direct discrete path
    if initial_state is not None:
        spin = initial_state.copy() if isinstance(initial_state, np.ndarray) else initial_state[0].copy()
    else:
        spin = _discrete_state(manifest, ball, mode.p, bc, forced_spins)
    ss = np.empty((snap_t.size, ball.n_ext), dtype=np.int8)
    if record_flips or record_events:
        f_v = np.empty(m, dtype=np.int32)
        f_t = np.empty(m)
        f_old = np.empty(m, dtype=np.int8)
        f_new = np.empty(m, dtype=np.int8)
        e_spin = np.empty(m, dtype=np.int8)
        nf = _kernels.run_discrete_rec(ev_t, ev_v, nbr, spin, snap_t, ss,
                                       f_v, f_t, f_old, f_new, e_spin)
        flips = DiscreteFlipLog(f_v[:nf].copy(), f_t[:nf].copy(),
                                f_old[:nf].copy(), f_new[:nf].copy())
        events = (ev_t, ev_v, e_spin) if record_events else None
    else:
        nf = _kernels.run_discrete(ev_t, ev_v, nbr, spin, snap_t, ss)
        flips, events = None, None
    snaps = {float(t): (ss[i].copy(),) for i, t in enumerate(snap_t)}
    return Trajectory(
        ball=ball, manifest=manifest, mode=mode, bc=bc, horizon=horizon,
        start_time=start_time, n_events=m, n_flips=int(nf), spin=spin,
        snapshots=snaps, flips=flips if record_flips else None, events=events,
    )


@dataclass
class CommutationReport:
    equal: bool
    n_events: int
    first_discrepancy: tuple[str, float] | None

    def __bool__(self) -> bool:
        return self.equal


def check_commutation(manifest: SeedManifest, ball: tree.IndexedBall | int, p: float,
                      horizon: float, bc=FROZEN_INITIAL) -> CommutationReport:
    """Project-then-run vs run-then-project, compared event for event.

    Both paths consume the identical ring schedule; the median run's
    per-event outcome is thresholded at p and checked against the direct
    majority kernel's outcome at the same event.
    """
    ball = _as_ball(ball)
    med = run(manifest, ball, MEDIAN, bc, horizon, record_events=True)
    disc = run(manifest, ball, Discrete(p), bc, horizon, record_events=True,
               discrete_path="direct")
    ev_t, ev_v, e_val, _ = med.events
    d_t, d_v, e_spin = disc.events
    if not (np.array_equal(ev_t, d_t) and np.array_equal(ev_v, d_v)):
        raise AssertionError("the two paths saw different schedules")
    # final states cover vertices that never rang; events cover the rest
    final_ok = np.array_equal(project(med.value, p), disc.spin)
    proj = np.where(e_val <= p, 1, -1).astype(np.int8)
    diff = np.nonzero(proj != e_spin)[0]
    if diff.size == 0 and final_ok:
        return CommutationReport(True, len(ev_t), None)
    if diff.size:
        i = int(diff[0])
        where = (tree.address_of(int(ball.keys[ev_v[i]])), float(ev_t[i]))
    else:
        where = ("", 0.0)
    return CommutationReport(False, len(ev_t), where)


@dataclass
class OrderReport:
    ordered: bool
    violations: int
    n_events: int


def check_attractiveness(manifest: SeedManifest, ball: tree.IndexedBall | int,
                         spins_low: np.ndarray, spins_high: np.ndarray,
                         horizon: float) -> OrderReport:
    """Coupled discrete runs from ordered initial data stay ordered."""
    ball = _as_ball(ball)
    lo = np.asarray(spins_low, dtype=np.int8).copy()
    hi = np.asarray(spins_high, dtype=np.int8).copy()
    if lo.shape != (ball.n_ext,) or hi.shape != (ball.n_ext,):
        raise ValueError("initial spin arrays must cover the extended ball")
    if np.any(lo > hi):
        raise ValueError("initial configurations are not ordered")
    ev_t, ev_v = randomness.ring_schedule(manifest, ball, horizon)
    snap_t = np.empty(0)
    dummy = np.empty((0, ball.n_ext), dtype=np.int8)
    viol = _kernels.run_discrete_pair(ev_t, ev_v, ball.nbr, lo, hi, snap_t, dummy, dummy)
    return OrderReport(viol == 0, int(viol), len(ev_t))


@dataclass
class ObservedRun:
    """Result of a pruned forward run read at one vertex."""

    state: Spin
    n_simulated: int
    n_events: int
    max_depth: int
    within_ball: bool


def run_observed(manifest: SeedManifest, center: str, radius: int, horizon: float,
                 max_vertices: int = 2_000_000) -> ObservedRun:
    """FrozenInitial forward run at `radius`, read at `center` only.

    Equivalent to `run(...)` on the full ball: rings can only reach the
    observed vertex along chronological paths, so vertices with no such
    path (computed from clocks alone, before any dynamics) are static and
    are kept as frozen initial data.  This is what makes radius-24 forward
    checks affordable; equivalence with the full kernel is covered by
    tests on small balls.
    """
    center_key = tree.key_of(center)
    rings: dict[int, np.ndarray] = {}

    def rings_of(key: int) -> np.ndarray:
        r = rings.get(key)
        if r is None:
            r = randomness.ring_times(manifest, key, horizon)
            rings[key] = r
        return r

    # deadline[v]: latest time a ring of v can still matter for the
    # observation.  A ring of v at s is read by a neighbor ringing at any
    # later (or lex-tied) time up to that neighbor's own deadline, so
    # deadlines relax outward through last-ring times until a fixpoint.
    deadline: dict[int, float] = {center_key: horizon}
    heap = [(-horizon, center_key)]
    boundary_influence = False
    while heap:
        neg, key = heapq.heappop(heap)
        tau = deadline[key]
        if -neg != tau:
            continue  # superseded by a later relaxation
        r = rings_of(key)
        hi = bisect_right(r, tau)
        if hi == 0:
            continue  # never rings before its deadline: static, reads nothing
        last_ring = float(r[hi - 1])
        for nk in tree.neighbors_key(key):
            if tree.distance_key(center_key, nk) > radius:
                # outside the ball: static initial data, no clock; note
                # whether the unclipped dynamics would have differed
                rr = rings_of(nk)
                if len(rr) and rr[0] <= last_ring:
                    boundary_influence = True
                continue
            if deadline.get(nk, -1.0) < last_ring:
                deadline[nk] = last_ring
                heapq.heappush(heap, (-last_ring, nk))
    active = [k for k, tau in deadline.items()
              if len(rings_of(k)) and rings_of(k)[0] <= tau]
    if center_key not in active:
        active.append(center_key)
    if len(active) > max_vertices:
        raise EngineBudgetError(f"{len(active)} active vertices exceed {max_vertices}")

    local: dict[int, int] = {}
    keys: list[int] = []

    def local_of(key: int) -> int:
        i = local.get(key)
        if i is None:
            i = len(keys)
            local[key] = i
            keys.append(key)
        return i

    for k in active:
        local_of(k)
    n_active = len(keys)
    nbr = np.empty((n_active, 3), dtype=np.int32)
    for i in range(n_active):
        for j, nk in enumerate(tree.neighbors_key(keys[i])):
            nbr[i, j] = local_of(nk)
    n_ext = len(keys)
    key_arr = np.asarray(keys, dtype=np.int64)
    value = randomness.initial_uniforms(manifest, key_arr).astype(np.float64)
    origin = np.arange(n_ext, dtype=np.int32)
    lex = np.fromiter((tree.lex_int(k) for k in keys), count=n_ext, dtype=np.int64)

    t_parts, v_parts = [], []
    for i in range(n_active):
        r = rings_of(keys[i])
        r = r[: bisect_right(r, deadline[keys[i]])]
        if len(r):
            t_parts.append(r)
            v_parts.append(np.full(len(r), i, dtype=np.int32))
    if t_parts:
        ev_t = np.concatenate(t_parts)
        ev_v = np.concatenate(v_parts)
        order = _kernels.event_order(ev_t, lex[ev_v], horizon)
        ev_t, ev_v = ev_t[order], ev_v[order]
    else:
        ev_t = np.empty(0)
        ev_v = np.empty(0, dtype=np.int32)
    snap_t = np.empty(0)
    sv = np.empty((0, n_ext))
    so = np.empty((0, n_ext), dtype=np.int32)
    _kernels.run_median(ev_t, ev_v, nbr, value, origin, lex, snap_t, sv, so)
    c = local[center_key]
    depth = max((tree.distance_key(center_key, k) for k in active), default=0)
    return ObservedRun(
        state=Spin(float(value[c]), tree.address_of(int(key_arr[origin[c]]))),
        n_simulated=n_active, n_events=len(ev_t), max_depth=depth,
        within_ball=not boundary_influence,
    )

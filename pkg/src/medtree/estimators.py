"""Monte Carlo estimators for the macroscopic quantities.

One median batch carries the whole theta curve: each replica contributes
a single certified root value, and thresholding that sample at any p
reproduces the density-p spin estimate.  A separate spin-system route
(`theta_discrete`) exists so the two can be held against each other.

Certification never quietly drops replicas.  A replica the sandwich
cannot decide is carried as an explicit undetermined count, every
estimate reports its undetermined fraction, and a batch whose fraction
exceeds the configured budget refuses to report at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, exactness, randomness, tree
from .randomness import SeedManifest

# below this many replicas the normal-approximation CI contract is off
MIN_REPLICAS = 1000

DEFAULT_GRID = np.round(np.arange(0.02, 0.99, 0.02), 2)
DEFAULT_RADII = (4, 6, 8, 10, 12, 14)

# limiting root values live in [p_c, 1-p_c] and p_c >= (2-sqrt(3))/4
SUPPORT_EDGE = (2.0 - math.sqrt(3.0)) / 4.0


class UndeterminedExcess(RuntimeError):
    """Batch abandoned: too many replicas escaped certification."""

    def __init__(self, n_undetermined: int, n_seen: int, n_total: int, budget: float):
        self.n_undetermined = n_undetermined
        self.n_seen = n_seen
        self.n_total = n_total
        self.budget = budget
        super().__init__(
            f"{n_undetermined} undetermined of {n_seen} replicas seen "
            f"(batch of {n_total}, budget {budget:.2%}); the bound is already "
            f"unreachable, stopping early"
        )


@dataclass
class EstimateWithCI:
    value: float
    n: int
    halfwidth: float
    undetermined_fraction: float = 0.0
    boundary_fraction: float = 0.0

    def __post_init__(self):
        if self.n < MIN_REPLICAS:
            raise ValueError(
                f"refusing to report an estimate from {self.n} replicas "
                f"(minimum {MIN_REPLICAS})"
            )

    @property
    def interval(self) -> tuple[float, float]:
        return self.value - self.halfwidth, self.value + self.halfwidth

    def overlaps(self, other: "EstimateWithCI", sigmas: float = 1.96) -> bool:
        scale = sigmas / 1.96
        gap = abs(self.value - other.value)
        return gap <= scale * math.hypot(self.halfwidth, other.halfwidth)


def bernoulli_estimate(successes: int, n: int, *, undetermined: int = 0,
                       boundary: int = 0) -> EstimateWithCI:
    """Success frequency with a 95% normal CI; refuses n < 1000."""
    p = successes / n
    return EstimateWithCI(
        value=p, n=n, halfwidth=1.96 * math.sqrt(p * (1.0 - p) / n),
        undetermined_fraction=undetermined / n, boundary_fraction=boundary / n,
    )


def binomial_lower_bound(successes: int, n: int,
                         confidence: float = 0.95) -> float:
    """One-sided Clopper-Pearson lower bound on a success probability.

    Exact (no normal approximation), so it stays honest at frequencies
    near 1, where monotonicity comparisons between batches live.
    """
    from scipy.stats import beta

    if not 0 <= successes <= n:
        raise ValueError(f"{successes} successes out of {n}")
    if successes == 0:
        return 0.0
    return float(beta.ppf(1.0 - confidence, successes, n - successes + 1))


def _certified_root_value(man: SeedManifest, t_star: float, radii,
                          max_events: int) -> tuple[float | None, int | None]:
    # success needs the sandwich closed at t* and 2t* with the same origin;
    # a value still traveling between the two checkpoints is not fixated
    for radius in radii:
        ball = tree.indexed_ball("", radius)
        br = exactness.bracket_run(man, ball, 2.0 * t_star, (t_star,),
                                   max_events=max_events)
        _vl, ol, _vh, oh = br.snapshots[t_star]
        if ol[0] == oh[0] and br.origin_lo[0] == br.origin_hi[0] \
                and ol[0] == br.origin_lo[0]:
            return float(_vl[0]), radius
    return None, None


@dataclass
class ThetaCurve:
    """Sorted certified root values; the whole curve from one batch."""

    t_star: float
    n: int
    values: np.ndarray
    n_undetermined: int
    radii: tuple
    n_at_cap: int = 0
    master_seed: int = 0

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=np.float64))

    @property
    def n_certified(self) -> int:
        return len(self.values)

    @property
    def undetermined_fraction(self) -> float:
        return self.n_undetermined / self.n

    def cdf(self, p) -> np.ndarray | float:
        """Empirical CDF of the certified sample."""
        if self.n_certified == 0:
            raise ValueError("no certified samples; curve is degenerate")
        out = np.searchsorted(self.values, np.asarray(p, dtype=np.float64),
                              side="right") / self.n_certified
        return float(out) if np.isscalar(p) or np.ndim(p) == 0 else out

    def cdf_interval(self, p: float) -> tuple[float, float]:
        """Bounds over all replicas, undetermined counted both ways."""
        k = int(np.searchsorted(self.values, p, side="right"))
        return k / self.n, (k + self.n_undetermined) / self.n

    def estimate(self, p: float) -> EstimateWithCI:
        k = int(np.searchsorted(self.values, p, side="right"))
        nc = self.n_certified
        phat = k / nc
        return EstimateWithCI(
            value=phat, n=nc,
            halfwidth=1.96 * math.sqrt(phat * (1.0 - phat) / nc),
            undetermined_fraction=self.n_undetermined / self.n,
            boundary_fraction=self.n_at_cap / self.n,
        )

    def support_mass_outside(self) -> float:
        """Certified mass outside the limiting support band."""
        lo = float((self.values < SUPPORT_EDGE).mean())
        hi = float((self.values > 1.0 - SUPPORT_EDGE).mean())
        return lo + hi


def theta_curve(
    master_seed: int,
    n: int,
    t_star: float,
    *,
    radii=DEFAULT_RADII,
    budget: float = 0.02,
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> ThetaCurve:
    """Sample certified root values over n replicas.

    Aborts with UndeterminedExcess the moment the undetermined count
    alone exceeds budget*n; the count only grows, so the final batch
    would be refused anyway and the remaining replicas are pure cost.
    """
    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    base = SeedManifest(master_seed=master_seed)
    allowed = int(budget * n)
    values = []
    n_undet = 0
    n_cap = 0
    for i in range(n):
        man = base.replica(i)
        value, radius = _certified_root_value(man, t_star, radii, max_events)
        if value is None:
            n_undet += 1
            if n_undet > allowed:
                raise UndeterminedExcess(n_undet, i + 1, n, budget)
        else:
            values.append(value)
            if radius == radii[-1]:
                n_cap += 1
    return ThetaCurve(t_star=t_star, n=n, values=np.array(values),
                      n_undetermined=n_undet, radii=tuple(radii),
                      n_at_cap=n_cap, master_seed=master_seed)


def _certified_spin(dbr: exactness.DiscreteBracketRun, idx: int,
                    t_star: float) -> int | None:
    lo_t, hi_t = dbr.snapshots[t_star]
    if lo_t[idx] == hi_t[idx] and dbr.spin_lo[idx] == dbr.spin_hi[idx] \
            and lo_t[idx] == dbr.spin_lo[idx]:
        return int(lo_t[idx])
    return None


def theta_discrete(
    master_seed: int,
    n: int,
    p: float,
    t_star: float,
    *,
    radii=DEFAULT_RADII,
    budget: float = 0.02,
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> EstimateWithCI:
    """Density-p fixation estimate from independent spin-system runs.

    Exists to cross-check the median batch; everything here runs in the
    two-state model with its own certification, sharing no machinery
    with theta_curve past the engine.
    """
    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    base = SeedManifest(master_seed=master_seed)
    allowed = int(budget * n)
    plus = 0
    n_det = 0
    n_undet = 0
    n_cap = 0
    for i in range(n):
        man = base.replica(i)
        spin = None
        for radius in radii:
            ball = tree.indexed_ball("", radius)
            dbr = exactness.discrete_bracket_run(man, ball, p, 2.0 * t_star,
                                                 (t_star,), max_events=max_events)
            spin = _certified_spin(dbr, 0, t_star)
            if spin is not None:
                if radius == radii[-1]:
                    n_cap += 1
                break
        if spin is None:
            n_undet += 1
            if n_undet > allowed:
                raise UndeterminedExcess(n_undet, i + 1, n, budget)
        else:
            n_det += 1
            plus += int(spin == 1)
    phat = plus / n_det
    return EstimateWithCI(
        value=phat, n=n_det,
        halfwidth=1.96 * math.sqrt(phat * (1.0 - phat) / n_det),
        undetermined_fraction=n_undet / n, boundary_fraction=n_cap / n,
    )


def pc_bracket(curve: ThetaCurve, epsilon: float = 0.02,
               grid=None) -> tuple[float, float]:
    """Bracket the consensus threshold from the certified curve.

    lower: largest grid p whose CDF is still <= epsilon.  upper: smallest
    grid p with CDF >= 2*epsilon; the factor regularizes against a flat
    noisy stretch producing an inverted bracket.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid)
    cdf = curve.cdf(grid)
    below = grid[cdf <= epsilon]
    above = grid[cdf >= 2.0 * epsilon]
    if below.size == 0 or above.size == 0:
        raise ValueError(
            f"curve too degenerate to bracket at epsilon={epsilon} "
            f"(CDF range {cdf.min():.3f}..{cdf.max():.3f})"
        )
    return float(below.max()), float(above.min())


def continuity_check(curve: ThetaCurve, h: float = 0.02) -> float:
    """Largest CDF increment over a step-h grid; jumps mean atoms."""
    grid = np.arange(0.0, 1.0 + h / 2, h)
    cdf = curve.cdf(grid)
    return float(np.diff(cdf).max())


def alpha_estimate(
    master_seed: int,
    n: int,
    p: float,
    separation: int,
    *,
    t_star: float = 4.0,
    margin: int = 7,
    direction: int = 0,
    budget: float = 0.25,
    max_events: int = engine.DEFAULT_MAX_EVENTS,
) -> EstimateWithCI:
    """Mixing coefficient proxy |P(AB) - P(A)P(B)| at one separation.

    A is fixation to +1 at the root, B the same at a vertex `separation`
    steps down a fixed ray.  The run ball sits at the midpoint of the
    pair, which needs only half the separation in radius; both endpoints
    are certified out of one coupled bracket per replica.  Replicas with
    either endpoint undetermined count into the undetermined fraction.
    """
    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    if separation % 2 or separation <= 0:
        raise ValueError("separation must be positive and even (midpoint geometry)")
    mid = tree.ray_address(direction, separation // 2)
    far = tree.ray_address(direction, separation)
    ball = tree.indexed_ball(mid, separation // 2 + margin)
    i_o = ball.index_of(tree.key_of(""))
    i_x = ball.index_of(tree.key_of(far))
    base = SeedManifest(master_seed=master_seed)
    allowed = int(budget * n)
    a = []
    b = []
    n_undet = 0
    for i in range(n):
        man = base.replica(i)
        dbr = exactness.discrete_bracket_run(man, ball, p, 2.0 * t_star,
                                             (t_star,), center=mid,
                                             max_events=max_events)
        so = _certified_spin(dbr, i_o, t_star)
        sx = _certified_spin(dbr, i_x, t_star)
        if so is None or sx is None:
            n_undet += 1
            if n_undet > allowed:
                raise UndeterminedExcess(n_undet, i + 1, n, budget)
            continue
        a.append(so == 1)
        b.append(sx == 1)
    n_det = len(a)
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    pa, pb, pab = a.mean(), b.mean(), (a * b).mean()
    # CI via the influence function of the covariance-style difference
    infl = a * b - pb * a - pa * b
    halfwidth = 1.96 * float(infl.std(ddof=1)) / math.sqrt(n_det)
    return EstimateWithCI(
        value=float(abs(pab - pa * pb)), n=n_det, halfwidth=halfwidth,
        undetermined_fraction=n_undet / n,
    )


@dataclass
class ChainCdf:
    p: float
    depth: int
    grid: np.ndarray
    counts: np.ndarray
    n: int

    @property
    def cdf(self) -> np.ndarray:
        return self.counts / self.n

    def estimate(self, t: float) -> EstimateWithCI:
        i = int(np.nonzero(np.isclose(self.grid, t))[0][0])
        return bernoulli_estimate(int(self.counts[i]), self.n)


def chain_time_cdf(
    master_seed: int,
    n: int,
    p: float,
    depth: int,
    grid,
    *,
    radius: int | None = None,
) -> ChainCdf:
    """Fraction of replicas whose root has joined a depth-D chain by t.

    Membership is checked at each grid time and accumulated: a chain,
    once joined, persists, so the per-replica indicator is monotone and
    the curve is a genuine CDF.
    """
    from . import analytics

    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    grid = np.asarray(sorted(float(t) for t in grid))
    if radius is None:
        radius = depth + 4
    ball = tree.indexed_ball("", radius)
    base = SeedManifest(master_seed=master_seed)
    counts = np.zeros(len(grid), dtype=np.int64)
    for i in range(n):
        man = base.replica(i)
        traj = engine.run(man, ball, engine.Discrete(p), engine.FROZEN_INITIAL,
                          float(grid[-1]), discrete_path="direct",
                          snapshot_times=grid)
        on = False
        for gi, t in enumerate(grid):
            if not on:
                on = analytics.chain_membership(ball, traj.snapshots[float(t)][0],
                                                "", depth)
            if on:
                counts[gi] += 1
    return ChainCdf(p=p, depth=depth, grid=grid, counts=counts, n=n)


@dataclass
class NeverFlipBatch:
    q: float
    n: int
    estimates: dict[float, EstimateWithCI]
    difference_halfwidth: float

    def within_joint_ci(self) -> bool:
        (e1, e2) = [self.estimates[t] for t in sorted(self.estimates)]
        return abs(e1.value - e2.value) <= max(self.difference_halfwidth, 0.0)


def never_flip_probability(
    master_seed: int,
    n: int,
    q: float,
    horizons=(16.0, 32.0),
    *,
    radius: int = 12,
) -> NeverFlipBatch:
    """P(root starts +1 and holds it through each horizon), one batch.

    The designated neighbor stays frozen at -1 for all time.  One run to
    the largest horizon serves every horizon: only the root's first flip
    time matters.  Replicas whose root starts -1 fail without simulating.
    The paired per-replica indicators give an exact CI for the difference
    between horizons, which is how near-constancy in T gets tested.
    """
    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    horizons = tuple(sorted(float(t) for t in horizons))
    t_max = horizons[-1]
    ball = tree.indexed_ball("", radius)
    base = SeedManifest(master_seed=master_seed)
    first_flip = np.full(n, np.inf)
    started_plus = np.zeros(n, dtype=bool)
    for i in range(n):
        man = base.replica(i)
        if randomness.initial_uniform(man, tree.key_of(tree.ROOT)) > q:
            continue
        started_plus[i] = True
        traj = engine.run(man, ball, engine.Discrete(q), engine.FROZEN_INITIAL,
                          t_max, discrete_path="direct", record_flips=True,
                          pinned=("0",), forced_spins={"0": -1})
        mine = traj.flips.vertex == 0
        if mine.any():
            first_flip[i] = float(traj.flips.time[mine].min())
    success = {t: started_plus & (first_flip > t) for t in horizons}
    estimates = {t: bernoulli_estimate(int(s.sum()), n) for t, s in success.items()}
    if len(horizons) >= 2:
        d = success[horizons[0]].astype(np.float64) - success[horizons[-1]]
        diff_hw = 1.96 * float(d.std(ddof=1)) / math.sqrt(n)
    else:
        diff_hw = 0.0
    return NeverFlipBatch(q=q, n=n, estimates=estimates,
                          difference_halfwidth=diff_hw)


def reach_frequency(master_seed: int, n: int, horizon: float, k: int,
                    *, inward: bool = False) -> EstimateWithCI:
    """Empirical frequency of a chronological path reaching k vertices."""
    if n < MIN_REPLICAS:
        raise ValueError(f"batch of {n} below the {MIN_REPLICAS}-replica minimum")
    base = SeedManifest(master_seed=master_seed)
    hits = 0
    for i in range(n):
        man = base.replica(i)
        reach = exactness.chronological_reach(man, horizon, inward=inward,
                                              k_cap=k + 1)
        if reach >= k:
            hits += 1
    return bernoulli_estimate(hits, n)

"""Full verification sweep: one test per shipped claim, at its stated scale.

Each test prints a single summary line (visible under -s and in failure
reports) and then asserts the stated tolerance.  Seeds are frozen so the
whole module is a deterministic record, not a flaky sample; expect it to
take about ten minutes of wall time.

Three tests are red at these scales and are meant to stay red until the
certification method changes: the limit-CDF anchors, the continuity scan
that shares their batch, and the fixation-structure checks.  All three
need sandwich certification at horizons the bracket front cannot reach
in any tractable window.  Their failure messages carry the measured
scaling analysis; do not shrink the horizons to make them pass, that
would change what is being claimed.
"""

import numpy as np
import pytest

from medtree import analytics, cli, engine, estimators, exactness, randomness, tree

# disjoint seed blocks, one per criterion, so no two tests share a clock
# realization by accident
COMMUTATION_BASE = 1000
ORACLE_BASE = 2000
ORDER_BASE = 3000
CERTIFY_BASE = 3500
ENERGY_BASE = 4000
TRACE_BASE = 5000
FIXATION_BASE = 600000
TRIPLE_BASE = 7000
REACH_MASTERS = {(1.0, 20): 500000, (0.5, 15): 510000}
THETA_MASTER = 520000
CHAIN_MASTER = 530000
ALPHA_MASTER = 540000
TRANSPORT_MASTER = 570000
NEVER_FLIP_MASTER = 80000


def report(num, ok, detail):
    print(f"criterion {num} [{'pass' if ok else 'FAIL'}] {detail}")


CERTIFICATION_WALL = (
    "certification cannot reach t*=32 in any tractable window: the bracket "
    "front dies out near t = 1.15 R, so radius 14 (49150 vertices, the "
    "largest window that fits the run budget) stops certifying around t=16 "
    "and every replica comes back undetermined; holding a certificate to "
    "2 t* = 64 would need radius near 55, a ball of about 1e17 vertices. "
    "Measured here: batch abandoned at the 2% undetermined budget with "
    "every replica seen undetermined."
)

FIXATION_WALL = (
    "no certified-fixated vertices exist at t=64 within radius 14: the "
    "doubled-horizon run (out to t=128) certifies 0 of 49150 vertices on "
    "every seed, consistent with the bracket front dying near t = 1.15 R "
    "= 16.  Certifying at t=64 needs radius near 55 and holding to t=128 "
    "near 110, both far beyond any tractable ball.  The structural checks "
    "(every vertex agrees with a neighbor, disagreement components are "
    "simple paths, dyadic cluster-size tail decreasing) run on any "
    "nonempty region; none exists at this scale."
)


# ------------------------------------------------------------ 1: commutation

def test_criterion_01_projection_commutes():
    ball = tree.indexed_ball("", 8)
    p_values = np.linspace(0.1, 0.9, 9)
    bad = 0
    checks = 0
    for i in range(100):
        man = randomness.SeedManifest(COMMUTATION_BASE + i)
        for p in p_values:
            checks += 1
            if not engine.check_commutation(man, ball, float(p), 4.0):
                bad += 1
    report("01", bad == 0, f"{bad} discrepancies over {checks} paired runs, R=8 T=4")
    assert bad == 0


# ---------------------------------------------------------------- 2: oracle

def test_criterion_02_backward_oracle_matches_forward():
    mismatches = 0
    for i in range(50):
        man = randomness.SeedManifest(ORACLE_BASE + i)
        want = exactness.BackwardOracle(man, 2.0).state("", 2.0)
        got = engine.run_observed(man, "", 24, 2.0).state
        if got.origin != want.origin or got.value != want.value:
            mismatches += 1
    report("02", mismatches == 0, f"{mismatches} mismatches over 50 seeds, R=24 T=2")
    assert mismatches == 0


# -------------------------------------------------------------- 3: sandwich

def test_criterion_03_boundary_order_and_certificates():
    # (a) the three frozen-boundary runs stay pointwise ordered at every
    # event; they share one ring schedule, so the comparison is pathwise
    ball = tree.indexed_ball("", 12)
    order_bad = 0
    n_events = 0
    for i in range(100):
        man = randomness.SeedManifest(ORDER_BASE + i)
        lo, mid, hi = (
            engine.run(man, ball, engine.MEDIAN, bc, 32.0, record_events=True)
            for bc in (engine.FROZEN_LOW, engine.FROZEN_INITIAL, engine.FROZEN_HIGH)
        )
        lt, lv, lval, _ = lo.events
        mt, mv, mval, _ = mid.events
        ht, hv, hval, _ = hi.events
        assert np.array_equal(lt, mt) and np.array_equal(mt, ht)
        assert np.array_equal(lv, mv) and np.array_equal(mv, hv)
        n_events += len(lt)
        order_bad += int(((lval > mval) | (mval > hval)).sum())
        order_bad += int(((lo.value > mid.value) | (mid.value > hi.value)).sum())

    # (b) whenever escalation certifies the root at t <= 3, the certified
    # state must equal the exact backward evaluation, origin and value
    certified = 0
    cert_bad = 0
    for i in range(50):
        man = randomness.SeedManifest(CERTIFY_BASE + i)
        oracle = exactness.BackwardOracle(man, 3.0)
        for t in (1.0, 2.0, 3.0):
            cert = exactness.sandwich_certify(man, "", t)
            if not cert.certified:
                continue
            certified += 1
            want = oracle.state("", t)
            if cert.state.origin != want.origin or cert.state.value != want.value:
                cert_bad += 1
    ok = order_bad == 0 and cert_bad == 0 and certified > 0
    report("03", ok,
           f"{order_bad} order violations over {n_events} events; "
           f"{cert_bad} certificate mismatches over {certified} certified cases")
    assert order_bad == 0
    assert certified > 0 and cert_bad == 0


# ---------------------------------------------------------------- 4: energy

def test_criterion_04_energy_never_increases():
    ball = tree.indexed_ball("", 12)
    total = 0
    violations = 0
    seed = ENERGY_BASE
    while total < 1_000_000:
        man = randomness.SeedManifest(seed)
        seed += 1
        traj = engine.run(man, ball, engine.MEDIAN, engine.FROZEN_INITIAL, 32.0,
                          record_flips=True)
        violations += analytics.energy_audit(traj.flips)
        total += len(traj.flips)
    report("04", violations == 0, f"{violations} violations over {total} flips")
    assert violations == 0


# ------------------------------------------------------------- 5: tail bound

def test_criterion_05_chronological_tail_bound():
    details = []
    ok = True
    for (horizon, k), master in REACH_MASTERS.items():
        freq = estimators.reach_frequency(master, 10_000, horizon, k)
        bound = exactness.reach_tail_bound(horizon, k)
        ok &= freq.value <= bound
        details.append(f"T={horizon} k={k}: {freq.value:.4f} <= {bound:.4f}")
        assert freq.value <= bound, details[-1]
    report("05", ok, "; ".join(details))


# ------------------------------------------------- 6 and 7: the limit curve

@pytest.fixture(scope="module")
def limit_curve():
    # one batch serves both curve criteria; the abort, if it happens, is
    # part of the record and both tests must show it
    try:
        return estimators.theta_curve(THETA_MASTER, 10_000, 32.0,
                                      radii=(4, 6, 8, 10, 12, 14), budget=0.02)
    except estimators.UndeterminedExcess as exc:
        return exc


def test_criterion_06_limit_cdf_anchors(limit_curve):
    if isinstance(limit_curve, estimators.UndeterminedExcess):
        detail = (f"batch abandoned: {limit_curve.n_undetermined} undetermined "
                  f"of {limit_curve.n_seen} replicas seen at t*=32")
        report("06", False, detail)
        pytest.fail(f"{detail}.  {CERTIFICATION_WALL}")
    curve = limit_curve
    half = curve.estimate(0.5)
    half_ok = abs(half.value - 0.5) <= 0.02

    sym_dev = 0.0
    sym_ok = True
    for p in estimators.DEFAULT_GRID:
        a = curve.estimate(float(p))
        b = curve.estimate(float(1.0 - p))
        dev = abs(a.value + b.value - 1.0)
        joint = 3.0 / 1.96 * float(np.hypot(a.halfwidth, b.halfwidth))
        sym_dev = max(sym_dev, dev)
        sym_ok &= dev <= joint

    mass_below = float((curve.values < estimators.SUPPORT_EDGE).mean())
    mass_ok = mass_below <= 0.02 and curve.undetermined_fraction <= 0.02
    lower, upper = estimators.pc_bracket(curve)
    ok = half_ok and sym_ok and mass_ok and upper < 0.5
    report("06", ok,
           f"theta(0.5)={half.value:.4f}, max symmetry dev {sym_dev:.4f}, "
           f"mass below support edge {mass_below:.4f}, bracket ({lower}, {upper})")
    assert half_ok and sym_ok and mass_ok
    assert upper < 0.5


def test_criterion_07_limit_cdf_has_no_jumps(limit_curve):
    if isinstance(limit_curve, estimators.UndeterminedExcess):
        detail = "no certified batch to scan; same abort as criterion 6"
        report("07", False, detail)
        pytest.fail(f"{detail}.  {CERTIFICATION_WALL}")
    step = estimators.continuity_check(limit_curve, h=0.02)
    report("07", step <= 0.05, f"largest CDF increment {step:.4f} at h=0.02")
    assert step <= 0.05


# ----------------------------------------------------------------- 8: trace

def test_criterion_08_trace_equals_projection_difference():
    mismatches = 0
    for i in range(200):
        man = randomness.SeedManifest(TRACE_BASE + i)
        tr = analytics.trace(man, 16.0, radius=12)
        pair = analytics.threshold_pair(man, 16.0, radius=12)
        if tr.members != pair.difference:
            mismatches += 1
    report("08", mismatches == 0, f"{mismatches} of 200 runs differ, R=12 T=16")
    assert mismatches == 0


# -------------------------------------------------------------- 9: fixation

def test_criterion_09_fixated_region_structure():
    regions = []
    total_certified = 0
    n_vertices = 0
    for i in range(10):
        man = randomness.SeedManifest(FIXATION_BASE + i)
        region = exactness.certified_fixated(man, 14, 64.0)
        regions.append(region)
        total_certified += int(region.mask.sum())
        n_vertices += region.mask.size
    if total_certified == 0:
        detail = f"0 of {n_vertices} vertices certified-fixated at t=64, R=14"
        report("09", False, detail)
        pytest.fail(f"{detail}.  {FIXATION_WALL}")

    lonely = 0
    judged = 0
    nonpath = 0
    sizes = []
    for region in regions:
        if not region.mask.any():
            continue
        origin = region.run.origin_lo
        rate, n_judged = analytics.neighbor_agreement_rate(
            region.ball, origin, restrict=region.mask)
        if n_judged:
            judged += n_judged
            lonely += round((1.0 - rate) * n_judged)
        comp = analytics.disagreement_components(region.ball, origin,
                                                 restrict=region.mask)
        nonpath += int((~comp.simple_path_flags).sum())
        clusters = analytics.agreement_clusters(region.ball, origin,
                                                restrict=region.mask)
        sizes.extend(int(s) for s in clusters.sizes)

    sizes = np.asarray(sizes)
    n_bins = int(np.floor(np.log2(sizes.max()))) + 1
    counts = [int(((sizes >= 2 ** j) & (sizes < 2 ** (j + 1))).sum())
              for j in range(n_bins)]
    tail_ok = all(a > b for a, b in zip(counts, counts[1:]))
    ok = lonely == 0 and nonpath == 0 and tail_ok
    report("09", ok,
           f"{lonely} of {judged} without an agreeing neighbor, "
           f"{nonpath} non-path components, dyadic tail {counts}")
    assert lonely == 0
    assert nonpath == 0
    assert tail_ok, f"dyadic bin counts not strictly decreasing: {counts}"


# ------------------------------------------------------ 10: chains and ends

def test_criterion_10_chains_and_triple_points():
    cc = estimators.chain_time_cdf(CHAIN_MASTER, 1000, 0.5, 8,
                                   (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
                                   radius=12)
    cdf = cc.cdf
    chain_ok = bool(np.all(np.diff(cdf) >= 0)) and cdf[-1] >= 0.9

    radii = (10, 12, 14)
    spanning = dict.fromkeys(radii, 0)
    with_triple = dict.fromkeys(radii, 0)
    for r in radii:
        ball = tree.indexed_ball("", r)
        for i in range(60):
            man = randomness.SeedManifest(TRIPLE_BASE + i)
            traj = engine.run(man, ball, engine.Discrete(0.45),
                              engine.FROZEN_INITIAL, 64.0,
                              discrete_path="direct")
            rep = analytics.triple_points(ball, traj.spin, 1)
            spanning[r] += rep.n_spanning_clusters
            with_triple[r] += rep.n_spanning_with_triple
    frac = {r: with_triple[r] / spanning[r] for r in radii}
    # nondecreasing up to sampling noise: each step must clear the exact
    # lower confidence bound of the previous radius's fraction
    grow_ok = all(
        frac[b] >= estimators.binomial_lower_bound(with_triple[a], spanning[a])
        for a, b in zip(radii, radii[1:])
    )
    triple_ok = frac[14] >= 0.9 and grow_ok
    report("10", chain_ok and triple_ok,
           f"chain CDF(32)={cdf[-1]:.3f}; triple fraction "
           + ", ".join(f"R={r}: {frac[r]:.3f} ({with_triple[r]}/{spanning[r]})"
                       for r in radii))
    assert bool(np.all(np.diff(cdf) >= 0))
    assert cdf[-1] >= 0.9
    assert frac[14] >= 0.9
    assert grow_ok, f"triple-point fraction dropped beyond noise: {frac}"


# ---------------------------------------------------------------- 11: mixing

def test_criterion_11_correlation_decay():
    separations = (2, 4, 6, 8)
    alphas = {
        sep: estimators.alpha_estimate(ALPHA_MASTER, 20_000, 0.3, sep,
                                       t_star=4.0, margin=7, budget=0.25)
        for sep in separations
    }
    mono_ok = all(
        alphas[b].value <= alphas[a].value or alphas[b].overlaps(alphas[a])
        for a, b in zip(separations, separations[1:])
    )
    halved = alphas[8].value <= alphas[2].value / 2
    report("11", mono_ok and halved,
           "; ".join(f"alpha({s})={alphas[s].value:.5f}+-{alphas[s].halfwidth:.5f}"
                     for s in separations))
    assert mono_ok, "alpha increased beyond CI overlap between separations"
    assert halved, f"alpha(8)={alphas[8].value:.5f} > alpha(2)/2={alphas[2].value / 2:.5f}"


# ------------------------------------------------------------- 12: transport

def test_criterion_12_mass_transport():
    identity = analytics.transport_audit(analytics.IdentityRule(),
                                         TRANSPORT_MASTER, 2000)
    rank = analytics.transport_audit(analytics.NeighborRankRule(),
                                     TRANSPORT_MASTER, 2000)
    low = analytics.transport_audit(analytics.NearestLowRule(window=4),
                                    TRANSPORT_MASTER, 2000)
    identity_ok = identity.exact and identity.out_mean == 1.0 == identity.in_mean
    rank_ok = (
        abs(rank.out_mean - 1.5) <= rank.out_halfwidth
        and abs(rank.in_mean - 1.5) <= rank.in_halfwidth
    )
    low_ok = low.overlap_3sigma and low.miss_rate < 0.01
    report("12", identity_ok and rank_ok and low_ok,
           f"identity exact={identity.exact}; rank out "
           f"{rank.out_mean:.4f}+-{rank.out_halfwidth:.4f} in "
           f"{rank.in_mean:.4f}+-{rank.in_halfwidth:.4f}; nearest-low gap "
           f"{abs(low.out_mean - low.in_mean):.4f}, miss {low.miss_rate:.4f}")
    assert identity_ok
    assert rank_ok, "neighbor-rank CI does not cover 1.5"
    assert low_ok


# ------------------------------------------------------------- 13: never-flip

def test_criterion_13_never_flip_probability():
    batch = estimators.never_flip_probability(NEVER_FLIP_MASTER, 2000, 0.5,
                                              (16.0, 32.0), radius=12)
    p16 = batch.estimates[16.0]
    p32 = batch.estimates[32.0]
    pos_ok = p16.value >= 0.01 and p32.value >= 0.01
    joint_ok = batch.within_joint_ci()
    zero = estimators.never_flip_probability(NEVER_FLIP_MASTER + 1, 1000, 0.0,
                                             (16.0,), radius=6)
    zero_ok = zero.estimates[16.0].value == 0.0
    report("13", pos_ok and joint_ok and zero_ok,
           f"P(T=16)={p16.value:.4f}, P(T=32)={p32.value:.4f}, "
           f"q=0 gives {zero.estimates[16.0].value}")
    assert pos_ok
    assert joint_ok, "the two horizon estimates disagree beyond their joint CI"
    assert zero_ok


# ----------------------------------------------------------- 14: determinism

def test_criterion_14_byte_identical_reruns(tmp_path):
    jobs = [
        ("simulate", "--seed", "11", "--radius", "5", "--horizon", "2",
         "--certify", ",0"),
        ("commutation", "--seed", "3", "--replicas", "3", "--radius", "5",
         "--horizon", "2", "--p-values", "0.3,0.7"),
        ("tailcheck", "--seed", "9", "--replicas", "1000",
         "--horizon", "0.3", "--k", "8"),
    ]
    n_files = 0
    mismatched = []
    for job in jobs:
        first = tmp_path / f"{job[0]}_first"
        second = tmp_path / f"{job[0]}_second"
        for out in (first, second):
            assert cli.main([job[0], "--out", str(out), *job[1:]]) == 0
        for fa in sorted(first.glob("*.csv")):
            n_files += 1
            if fa.read_bytes() != (second / fa.name).read_bytes():
                mismatched.append(f"{job[0]}/{fa.name}")
    report("14", not mismatched,
           f"{n_files} CSV files compared across reruns, "
           f"{len(mismatched)} differ {mismatched or ''}")
    assert n_files > 0
    assert not mismatched

"""Command-line experiment runner.

Each subcommand is one experiment kind: it reads an optional key=value
config file, applies flag overrides, runs, and writes its results CSV, a
figure, and manifest.json into the output directory (--out, else
$MEDTREE_OUT, else the working directory).  Exit status 0 means the run
completed, 1 an operational problem (bad config, refused batch, I/O), 2
a violated mathematical invariant; pipelines can tell "the theory check
failed" from "the disk was full".
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import (__version__, analytics, config, engine, estimators, exactness,
               report, tree)
from .randomness import SeedManifest

_BC = {
    "initial": engine.FROZEN_INITIAL,
    "low": engine.FROZEN_LOW,
    "high": engine.FROZEN_HIGH,
    "free": engine.FREE,
}

_KIND_HELP = {
    "simulate": "one run; flip log, optional vertex certificates",
    "commutation": "projected vs direct spin runs, event for event",
    "theta": "certified fixation CDF over the whole density grid",
    "alpha": "mixing decay across endpoint separations",
    "trace": "height-carrier sets against threshold-pair differences",
    "resample": "difference sets of forced-spin run pairs",
    "chains": "chain-membership CDF in time",
    "audit": "mass-transport books for the built-in rules",
    "tailcheck": "chronological-path tail against its analytic bound",
    "neverflip": "root holds +1 against a permanently -1 neighbor",
}

_KEY_HELP = {
    "seed": "master seed (replica i uses seed+i)",
    "replicas": "batch size",
    "radius": "ball radius R",
    "horizon": "run length T; certifying kinds read it as T*",
    "p": "density for discrete-mode dynamics",
    "q": "density for neverflip",
    "depth": "chain depth D",
    "margin": "extra ball radius around alpha endpoints",
    "budget": "tolerated undetermined fraction before a batch aborts",
    "epsilon": "tail level for the critical-density bracket",
    "window": "decision radius of the nearest-low transport rule",
    "k": "chronological path length",
    "direction": "root branch (0..2) for the alpha ray",
    "mode": "simulate as 'median' or 'discrete'",
    "boundary": "extension ring: initial, low, high, or free",
    "target": "vertex address for trace/resample (root = empty string)",
    "resample_clock": "also redraw the target's clock stream",
    "certify": "comma-separated addresses to certify after simulate",
    "p_values": "density grid for commutation",
    "separations": "alpha endpoint distances (even, >= 2)",
    "times": "time grid for chains, horizon pair for neverflip",
}


def _bool_word(b) -> str:
    return "true" if b else "false"


def _ladder(radius: int) -> tuple:
    """Escalation radii for certification, capped by the configured R."""
    rungs = [r for r in estimators.DEFAULT_RADII if r <= radius]
    if not rungs or rungs[-1] != radius:
        rungs.append(radius)
    return tuple(rungs)


def _manifest(out: Path, man: SeedManifest, t0: float, cfg, **fields) -> None:
    report.write_manifest(out / "manifest.json", man,
                          wall_time=time.perf_counter() - t0,
                          kind=cfg.kind, config=asdict(cfg), **fields)


def _run_simulate(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    man = SeedManifest(cfg.seed)
    meta = report.metadata_line(man)
    mode = engine.MEDIAN if cfg.mode == "median" else engine.Discrete(cfg.p)
    traj = engine.run(man, cfg.radius, mode, _BC[cfg.boundary], cfg.horizon,
                      record_flips=True)
    report.write_csv(out / "flips.csv", report.FLIP_HEADER,
                     report.flip_rows(traj), meta)
    energy_violations = analytics.energy_audit(traj.flips) if traj.is_median else 0
    certs = []
    if cfg.certify:
        certs = [exactness.sandwich_certify(man, a, cfg.horizon, _ladder(cfg.radius))
                 for a in cfg.certify]
        report.write_csv(out / "certificates.csv", report.CERTIFICATE_HEADER,
                         report.certificate_rows(certs), meta)
    flip_times = np.sort(traj.flips.time) if len(traj.flips) else np.empty(0)

    def draw(ax):
        if flip_times.size:
            ax.step(flip_times, np.arange(1, flip_times.size + 1), where="post")
        ax.set_xlabel("time")
        ax.set_ylabel("flips so far")
        ax.set_title(f"{cfg.mode} run, R={cfg.radius}, T={cfg.horizon:g}")

    report.save_figure(out / "simulate.png", draw, meta)
    _manifest(out, man, t0, cfg, n_events=traj.n_events, n_flips=traj.n_flips,
              energy_violations=energy_violations,
              n_certified=sum(c.certified for c in certs))
    if energy_violations:
        print(f"medtree: {energy_violations} flips raised the disagreement count",
              file=sys.stderr)
        return 2
    return 0


def _run_commutation(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    rows = []
    per_p = {float(p): 0 for p in cfg.p_values}
    for i in range(cfg.replicas):
        man = base.replica(i)
        for p in cfg.p_values:
            rep = engine.check_commutation(man, cfg.radius, p, cfg.horizon)
            if rep.first_discrepancy is None:
                dv, dt = "", ""
            else:
                dv = rep.first_discrepancy[0]
                dt = report.fmt_time(rep.first_discrepancy[1])
            if not rep.equal:
                per_p[float(p)] += 1
            rows.append((str(i), report.fmt_float(p), str(rep.n_events),
                         _bool_word(rep.equal), dv, dt))
    header = ("replica", "p", "n_events", "equal",
              "discrepancy_vertex", "discrepancy_time")
    report.write_csv(out / "commutation.csv", header, rows, meta)
    violations = sum(per_p.values())

    def draw(ax):
        ps = sorted(per_p)
        ax.bar([f"{p:g}" for p in ps], [per_p[p] for p in ps])
        ax.set_xlabel("p")
        ax.set_ylabel("runs with a discrepancy")
        ax.set_title(f"{cfg.replicas} seeds, R={cfg.radius}, T={cfg.horizon:g}")

    report.save_figure(out / "commutation.png", draw, meta)
    _manifest(out, base, t0, cfg, violations=violations, n_runs=len(rows))
    print(f"violations={violations}")
    return 2 if violations else 0


def _run_theta(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    curve = estimators.theta_curve(cfg.seed, cfg.replicas, cfg.horizon,
                                   radii=_ladder(cfg.radius), budget=cfg.budget)
    grid = estimators.DEFAULT_GRID
    report.write_csv(out / "theta.csv", report.THETA_HEADER,
                     report.theta_rows(curve, grid), meta)
    try:
        pc = list(estimators.pc_bracket(curve, cfg.epsilon))
    except ValueError:
        pc = None
    est = [curve.estimate(float(p)) for p in grid]
    lo_hi = [curve.cdf_interval(float(p)) for p in grid]

    def draw(ax):
        ax.fill_between(grid, [ab[0] for ab in lo_hi], [ab[1] for ab in lo_hi],
                        alpha=0.25, label="undetermined span")
        ax.plot(grid, [e.value for e in est], label="certified CDF")
        ax.set_xlabel("p")
        ax.set_ylabel("fixation probability")
        ax.set_title(f"N={curve.n}, T*={cfg.horizon:g}")
        ax.legend()

    report.save_figure(out / "theta.png", draw, meta)
    _manifest(out, base, t0, cfg, n=curve.n, n_certified=curve.n_certified,
              undetermined_fraction=curve.undetermined_fraction,
              n_at_cap=curve.n_at_cap, radii=list(curve.radii),
              pc_bracket=pc, max_increment=estimators.continuity_check(curve),
              support_mass_outside=curve.support_mass_outside())
    return 0


def _run_alpha(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    header = ("separation", "estimate", "ci_halfwidth", "n",
              "undetermined_fraction", "boundary_fraction")
    rows, values = [], []
    for sep in cfg.separations:
        e = estimators.alpha_estimate(cfg.seed, cfg.replicas, cfg.p, sep,
                                      t_star=cfg.horizon, margin=cfg.margin,
                                      direction=cfg.direction, budget=cfg.budget)
        rows.append(report.estimate_row(str(sep), e))
        values.append(e)
    report.write_csv(out / "alpha.csv", header, rows, meta)

    def draw(ax):
        ax.errorbar(list(cfg.separations), [e.value for e in values],
                    yerr=[e.halfwidth for e in values], marker="o")
        ax.set_xlabel("separation")
        ax.set_ylabel("correlation")
        ax.set_title(f"p={cfg.p:g}, T*={cfg.horizon:g}, N={cfg.replicas}")

    report.save_figure(out / "alpha.png", draw, meta)
    _manifest(out, base, t0, cfg,
              alpha={str(s): e.value for s, e in zip(cfg.separations, values)})
    return 0


def _run_trace(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    rows, sizes = [], []
    mismatches = contacts = 0
    at_root = cfg.target == tree.ROOT
    for i in range(cfg.replicas):
        man = base.replica(i)
        ts = analytics.trace(man, cfg.horizon, cfg.radius, source=cfg.target)
        sizes.append(len(ts))
        contacts += ts.boundary_contact
        if at_root:
            pair = analytics.threshold_pair(man, cfg.horizon, cfg.radius)
            same = ts.members == pair.difference
            mismatches += not same
            rows.append((str(i), str(len(ts)), str(len(pair.difference)),
                         _bool_word(same), _bool_word(ts.boundary_contact)))
        else:
            # the threshold pair projects at the root's height; no identity
            # to check against a trace based elsewhere
            rows.append((str(i), str(len(ts)), "", "",
                         _bool_word(ts.boundary_contact)))
    header = ("replica", "trace_size", "difference_size", "identity_holds",
              "boundary_contact")
    report.write_csv(out / "trace.csv", header, rows, meta)
    report.save_figure(out / "trace.png", _size_histogram(sizes, "trace size"),
                       meta)
    _manifest(out, base, t0, cfg, mismatches=mismatches,
              boundary_contacts=contacts,
              mean_size=float(np.mean(sizes)) if sizes else 0.0)
    if mismatches:
        print(f"medtree: trace and threshold-pair differ on {mismatches} runs",
              file=sys.stderr)
        return 2
    return 0


def _run_resample(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    rows, sizes = [], []
    contacts = 0
    for i in range(cfg.replicas):
        ds = analytics.resampling_difference(base.replica(i), cfg.p, cfg.horizon,
                                             cfg.radius, target=cfg.target,
                                             resample_clock=cfg.resample_clock)
        sizes.append(len(ds))
        contacts += ds.boundary_contact
        rows.append((str(i), str(len(ds)), _bool_word(ds.boundary_contact)))
    header = ("replica", "difference_size", "boundary_contact")
    report.write_csv(out / "resample.csv", header, rows, meta)
    report.save_figure(out / "resample.png",
                       _size_histogram(sizes, "difference size"), meta)
    _manifest(out, base, t0, cfg, boundary_contacts=contacts,
              mean_size=float(np.mean(sizes)) if sizes else 0.0,
              max_size=max(sizes, default=0))
    return 0


def _size_histogram(sizes, label):
    def draw(ax):
        if sizes:
            top = max(max(sizes), 1)
            ax.hist(sizes, bins=np.arange(-0.5, top + 1.5))
        ax.set_xlabel(label)
        ax.set_ylabel("runs")

    return draw


def _run_chains(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    times = cfg.times or (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    cc = estimators.chain_time_cdf(cfg.seed, cfg.replicas, cfg.p, cfg.depth,
                                   times, radius=cfg.radius)
    rows = []
    for gi, t in enumerate(cc.grid):
        e = cc.estimate(float(t))
        rows.append((report.fmt_float(t), str(int(cc.counts[gi])),
                     report.fmt_float(cc.cdf[gi]), report.fmt_float(e.halfwidth)))
    header = ("t", "count", "cdf", "ci_halfwidth")
    report.write_csv(out / "chains.csv", header, rows, meta)

    def draw(ax):
        ax.step(cc.grid, cc.cdf, where="post", marker="o")
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("time")
        ax.set_ylabel(f"P(root in a depth-{cfg.depth} chain)")
        ax.set_title(f"p={cfg.p:g}, N={cc.n}")

    report.save_figure(out / "chains.png", draw, meta)
    _manifest(out, base, t0, cfg, counts=cc.counts.tolist(),
              grid=cc.grid.tolist())
    return 0


def _run_audit(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    rules = (analytics.IdentityRule(), analytics.NeighborRankRule(),
             analytics.NearestLowRule(window=cfg.window))
    audits = [analytics.transport_audit(r, cfg.seed, cfg.replicas) for r in rules]
    rows = [(a.rule_name, str(a.replicas), report.fmt_float(a.out_mean),
             report.fmt_float(a.out_halfwidth), report.fmt_float(a.in_mean),
             report.fmt_float(a.in_halfwidth), report.fmt_float(a.miss_rate),
             _bool_word(a.passes)) for a in audits]
    header = ("rule", "replicas", "mass_out", "out_ci_halfwidth", "mass_in",
              "in_ci_halfwidth", "miss_rate", "passes")
    report.write_csv(out / "audit.csv", header, rows, meta)

    def draw(ax):
        x = np.arange(len(audits))
        ax.bar(x - 0.18, [a.out_mean for a in audits], width=0.36,
               yerr=[a.out_halfwidth for a in audits], label="mass out")
        ax.bar(x + 0.18, [a.in_mean for a in audits], width=0.36,
               yerr=[a.in_halfwidth for a in audits], label="mass in")
        ax.set_xticks(x, [a.rule_name for a in audits])
        ax.set_ylabel("expected mass")
        ax.legend()

    report.save_figure(out / "audit.png", draw, meta)
    _manifest(out, base, t0, cfg,
              passes={a.rule_name: a.passes for a in audits})
    if not all(a.passes for a in audits):
        bad = ", ".join(a.rule_name for a in audits if not a.passes)
        print(f"medtree: transport books do not balance for: {bad}",
              file=sys.stderr)
        return 2
    return 0


def _run_tailcheck(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    freq = estimators.reach_frequency(cfg.seed, cfg.replicas, cfg.horizon, cfg.k)
    bound = exactness.reach_tail_bound(cfg.horizon, cfg.k)
    within = freq.value <= bound
    header = ("horizon", "k", "frequency", "ci_halfwidth", "bound",
              "within_bound")
    rows = [(report.fmt_float(cfg.horizon), str(cfg.k),
             report.fmt_float(freq.value), report.fmt_float(freq.halfwidth),
             report.fmt_float(bound), _bool_word(within))]
    report.write_csv(out / "tailcheck.csv", header, rows, meta)

    def draw(ax):
        ax.bar(["empirical", "bound"], [freq.value, bound])
        ax.set_yscale("log" if freq.value > 0 else "linear")
        ax.set_ylabel(f"P(chronological path of {cfg.k} vertices)")
        ax.set_title(f"T={cfg.horizon:g}, N={cfg.replicas}")

    report.save_figure(out / "tailcheck.png", draw, meta)
    _manifest(out, base, t0, cfg, frequency=freq.value, bound=bound,
              within_bound=within)
    if not within:
        print(f"medtree: frequency {freq.value} exceeds bound {bound}",
              file=sys.stderr)
        return 2
    return 0


def _run_neverflip(cfg, out: Path) -> int:
    t0 = time.perf_counter()
    base = SeedManifest(cfg.seed)
    meta = report.metadata_line(base)
    times = cfg.times or (16.0, 32.0)
    batch = estimators.never_flip_probability(cfg.seed, cfg.replicas, cfg.q,
                                              horizons=times, radius=cfg.radius)
    horizons = sorted(batch.estimates)
    rows = [(report.fmt_float(t), report.fmt_float(batch.estimates[t].value),
             report.fmt_float(batch.estimates[t].halfwidth),
             str(batch.estimates[t].n)) for t in horizons]
    header = ("horizon", "estimate", "ci_halfwidth", "n")
    report.write_csv(out / "neverflip.csv", header, rows, meta)

    def draw(ax):
        ax.errorbar(horizons, [batch.estimates[t].value for t in horizons],
                    yerr=[batch.estimates[t].halfwidth for t in horizons],
                    marker="o")
        ax.set_ylim(bottom=0.0)
        ax.set_xlabel("horizon")
        ax.set_ylabel("P(root never flips)")
        ax.set_title(f"q={cfg.q:g}, N={batch.n}")

    report.save_figure(out / "neverflip.png", draw, meta)
    stable = batch.within_joint_ci() if len(horizons) >= 2 else None
    _manifest(out, base, t0, cfg,
              estimates={report.fmt_float(t): batch.estimates[t].value
                         for t in horizons},
              difference_halfwidth=batch.difference_halfwidth,
              within_joint_ci=stable)
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "commutation": _run_commutation,
    "theta": _run_theta,
    "alpha": _run_alpha,
    "trace": _run_trace,
    "resample": _run_resample,
    "chains": _run_chains,
    "audit": _run_audit,
    "tailcheck": _run_tailcheck,
    "neverflip": _run_neverflip,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medtree",
        description="Majority dynamics and the median process on the 3-regular tree.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key=value config file")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: $MEDTREE_OUT or '.')")
    for key in config.KEYS:
        if key == "kind":
            continue
        common.add_argument("--" + key.replace("_", "-"), dest=key,
                            metavar="VALUE", help=_KEY_HELP[key])
    sub = parser.add_subparsers(dest="kind", required=True, metavar="kind")
    for kind in config.KINDS:
        sub.add_parser(kind, parents=[common], help=_KIND_HELP[kind])
    return parser


def _load_config(args) -> config.ExperimentConfig:
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = config.parse_config(text, default_kind=args.kind)
    else:
        cfg = config.ExperimentConfig(kind=args.kind)
    overrides = {key: getattr(args, key) for key in config.KEYS
                 if key != "kind" and getattr(args, key) is not None}
    return config.apply_overrides(replace(cfg, kind=args.kind), overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except config.ConfigError as err:
        for line in err.errors:
            print(f"medtree: {line}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"medtree: cannot read config: {err}", file=sys.stderr)
        return 1
    out = Path(args.out or os.environ.get("MEDTREE_OUT", "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _RUNNERS[cfg.kind](cfg, out)
    except exactness.InvariantViolation as err:
        print(f"medtree: invariant violated: {err}", file=sys.stderr)
        return 2
    except (estimators.UndeterminedExcess, engine.EngineBudgetError) as err:
        print(f"medtree: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        where = getattr(err, "filename", None) or str(out)
        print(f"medtree: i/o failure at {where}: {err.strerror or err}",
              file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"medtree: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Delimited output, manifests, and figures.

Every byte a run writes is decided here, once: event times carry nine
fractional digits, other floats use shortest-roundtrip formatting, rows
come out in deterministic order.  Reruns with the same seed must produce
identical CSVs; the JSON manifest's wall-time field is the single
sanctioned difference.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable

import numpy as np

from . import __version__, tree
from .randomness import SeedManifest


def fmt_time(t: float) -> str:
    return f"{t:.9f}"


def fmt_float(x: float) -> str:
    return f"{float(x):.17g}"


def metadata_line(manifest: SeedManifest) -> str:
    """Compact seeds-plus-version stamp, embedded in every output file."""
    return json.dumps(
        {"artifact_version": __version__,
         "seed_manifest": json.loads(manifest.to_json())},
        sort_keys=True, separators=(",", ":"),
    )


def write_csv(path, header: Iterable[str], rows: Iterable[tuple],
              meta: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if meta is not None:
            f.write(f"# {meta}\n")
        w = csv.writer(f)
        w.writerow(list(header))
        for row in rows:
            w.writerow(list(row))


FLIP_HEADER = ("vertex_address", "time", "old_origin", "new_origin",
               "old_value", "new_value")


def flip_rows(traj) -> list[tuple]:
    """Flip log rows; spin runs leave the origin columns empty."""
    ball = traj.ball
    out = []
    if traj.flips is None:
        return out
    if traj.is_median:
        f = traj.flips
        for i in range(len(f)):
            out.append((
                tree.address_of(int(ball.keys[f.vertex[i]])),
                fmt_time(f.time[i]),
                traj.origin_name(int(f.old_origin[i])),
                traj.origin_name(int(f.new_origin[i])),
                fmt_float(f.old_value[i]),
                fmt_float(f.new_value[i]),
            ))
    else:
        f = traj.flips
        for i in range(len(f)):
            out.append((
                tree.address_of(int(ball.keys[f.vertex[i]])),
                fmt_time(f.time[i]), "", "",
                str(int(f.old_spin[i])), str(int(f.new_spin[i])),
            ))
    return out


CERTIFICATE_HEADER = ("vertex", "T", "R_used", "verdict", "spin_origin",
                      "spin_value", "bracket_gap")


def certificate_rows(certs) -> list[tuple]:
    out = []
    for c in certs:
        if c.certified:
            origin, value = c.state.origin, fmt_float(c.state.value)
        else:
            origin, value = "", ""
        out.append((c.vertex, fmt_time(c.horizon),
                    "" if c.radius is None else str(c.radius),
                    c.verdict, origin, value, str(c.bracket_gap)))
    return out


THETA_HEADER = ("p", "estimate", "ci_halfwidth", "interval_low",
                "interval_high", "undetermined_fraction", "boundary_fraction")


def theta_rows(curve, grid) -> list[tuple]:
    out = []
    for p in grid:
        e = curve.estimate(float(p))
        lo, hi = curve.cdf_interval(float(p))
        out.append((f"{p:.2f}", fmt_float(e.value), fmt_float(e.halfwidth),
                    fmt_float(lo), fmt_float(hi),
                    fmt_float(e.undetermined_fraction),
                    fmt_float(e.boundary_fraction)))
    return out


ESTIMATE_HEADER = ("label", "estimate", "ci_halfwidth", "n",
                   "undetermined_fraction", "boundary_fraction")


def estimate_row(label: str, e) -> tuple:
    return (label, fmt_float(e.value), fmt_float(e.halfwidth), str(e.n),
            fmt_float(e.undetermined_fraction), fmt_float(e.boundary_fraction))


def write_manifest(path, manifest: SeedManifest, *, wall_time: float,
                   **fields) -> None:
    """JSON manifest: seeds, settings, version.  Wall time varies; the rest
    must not."""
    obj = {
        "artifact_version": __version__,
        "seed_manifest": json.loads(manifest.to_json()),
        "wall_time_seconds": round(float(wall_time), 3),
    }
    for k, v in fields.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        obj[k] = v
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def save_figure(path, draw, meta: str | None = None) -> None:
    """Render one figure to a file; `draw` receives the Axes.

    The metadata line rides along in a PNG text chunk, which keeps the
    bytes deterministic across reruns of the same seed.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    draw(ax)
    fig.tight_layout()
    png_meta = {"Description": meta} if meta is not None else None
    fig.savefig(path, dpi=120, metadata=png_meta)
    plt.close(fig)

"""Compiled event loops.

Everything here is numba nopython code over flat arrays prepared by the
engine: an event list (time, local vertex) already in deterministic order,
neighbor indices, and state arrays covering the ball plus its static
boundary extension.  Kernels never allocate beyond scratch scalars and
never use fastmath, so results are bitwise reproducible.

Spin identity is carried by `origin`: the local index of the vertex whose
initial height a cell currently holds (-1 and -2 are the low/high pinned
boundary sentinels).  Equal float64 heights with different origins are
ordered by the lexicographic address encoding `lex`, matching the backward
oracle's tie rule exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LOW_ORIGIN = -1
HIGH_ORIGIN = -2
_LEX_LOW = -0x4000000000000000
_LEX_HIGH = 0x4000000000000000


@njit(cache=True)
def event_order(times, lex, horizon):
    """Permutation ordering events by (time, lex address); O(m) bucket sort."""
    m = times.size
    out = np.empty(m, np.int64)
    if m == 0:
        return out
    nb = 1024
    while nb < m // 2 and nb < (1 << 24):
        nb <<= 1
    scale = nb / horizon if horizon > 0.0 else 0.0
    bucket = np.empty(m, np.int32)
    counts = np.zeros(nb + 1, np.int32)
    for i in range(m):
        b = np.int32(times[i] * scale)
        if b > nb - 1:
            b = nb - 1
        if b < 0:
            b = 0
        bucket[i] = b
        counts[b + 1] += 1
    for b in range(nb):
        counts[b + 1] += counts[b]
    pos = counts[:nb].copy()
    for i in range(m):
        b = bucket[i]
        out[pos[b]] = i
        pos[b] += 1
    for b in range(nb):
        lo = counts[b]
        hi = counts[b + 1]
        for i in range(lo + 1, hi):
            ev = out[i]
            t = times[ev]
            lx = lex[ev]
            j = i
            while j > lo and (
                times[out[j - 1]] > t
                or (times[out[j - 1]] == t and lex[out[j - 1]] > lx)
            ):
                out[j] = out[j - 1]
                j -= 1
            out[j] = ev
    return out


@njit(inline="always")
def _lex_of(o, lex):
    if o >= 0:
        return lex[o]
    if o == LOW_ORIGIN:
        return _LEX_LOW
    return _LEX_HIGH


@njit(inline="always")
def _less(va, oa, vb, ob, lex):
    if va < vb:
        return True
    if va > vb:
        return False
    return _lex_of(oa, lex) < _lex_of(ob, lex)


@njit(inline="always")
def _median3(va, oa, vb, ob, vc, oc, lex):
    if _less(vb, ob, va, oa, lex):
        va, oa, vb, ob = vb, ob, va, oa
    if _less(vc, oc, vb, ob, lex):
        vb, ob, vc, oc = vc, oc, vb, ob
        if _less(vb, ob, va, oa, lex):
            vb, ob = va, oa
    return vb, ob


@njit(cache=True)
def run_median(ev_t, ev_v, nbr, value, origin, lex, snap_t, snap_val, snap_org):
    si = 0
    ns = snap_t.size
    flips = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            snap_val[si, :] = value
            snap_org[si, :] = origin
            si += 1
        a = nbr[v, 0]
        b = nbr[v, 1]
        c = nbr[v, 2]
        mv, mo = _median3(value[a], origin[a], value[b], origin[b], value[c], origin[c], lex)
        if mo != origin[v]:
            value[v] = mv
            origin[v] = mo
            flips += 1
    while si < ns:
        snap_val[si, :] = value
        snap_org[si, :] = origin
        si += 1
    return flips


@njit(cache=True)
def run_median_rec(
    ev_t, ev_v, nbr, value, origin, lex, snap_t, snap_val, snap_org,
    f_v, f_t, f_old_val, f_old_org, f_new_val, f_new_org, f_nb_val, f_nb_org,
    ev_new_val, ev_new_org,
):
    """run_median plus a full flip log and per-event outcome streams."""
    si = 0
    ns = snap_t.size
    nf = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            snap_val[si, :] = value
            snap_org[si, :] = origin
            si += 1
        a = nbr[v, 0]
        b = nbr[v, 1]
        c = nbr[v, 2]
        va = value[a]
        vb = value[b]
        vc = value[c]
        oa = origin[a]
        ob = origin[b]
        oc = origin[c]
        mv, mo = _median3(va, oa, vb, ob, vc, oc, lex)
        if mo != origin[v]:
            f_v[nf] = v
            f_t[nf] = t
            f_old_val[nf] = value[v]
            f_old_org[nf] = origin[v]
            f_new_val[nf] = mv
            f_new_org[nf] = mo
            f_nb_val[nf, 0] = va
            f_nb_val[nf, 1] = vb
            f_nb_val[nf, 2] = vc
            f_nb_org[nf, 0] = oa
            f_nb_org[nf, 1] = ob
            f_nb_org[nf, 2] = oc
            nf += 1
            value[v] = mv
            origin[v] = mo
        ev_new_val[e] = mv
        ev_new_org[e] = mo
    while si < ns:
        snap_val[si, :] = value
        snap_org[si, :] = origin
        si += 1
    return nf


@njit(cache=True)
def run_median_pair(
    ev_t, ev_v, nbr, lex,
    val_lo, org_lo, val_hi, org_hi,
    snap_t, sv_lo, so_lo, sv_hi, so_hi,
):
    """Low and high runs over one schedule; counts order violations (0 expected)."""
    si = 0
    ns = snap_t.size
    viol = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            sv_lo[si, :] = val_lo
            so_lo[si, :] = org_lo
            sv_hi[si, :] = val_hi
            so_hi[si, :] = org_hi
            si += 1
        a = nbr[v, 0]
        b = nbr[v, 1]
        c = nbr[v, 2]
        mv, mo = _median3(val_lo[a], org_lo[a], val_lo[b], org_lo[b], val_lo[c], org_lo[c], lex)
        if mo != org_lo[v]:
            val_lo[v] = mv
            org_lo[v] = mo
        mv, mo = _median3(val_hi[a], org_hi[a], val_hi[b], org_hi[b], val_hi[c], org_hi[c], lex)
        if mo != org_hi[v]:
            val_hi[v] = mv
            org_hi[v] = mo
        if val_lo[v] > val_hi[v]:
            viol += 1
    while si < ns:
        sv_lo[si, :] = val_lo
        so_lo[si, :] = org_lo
        sv_hi[si, :] = val_hi
        so_hi[si, :] = org_hi
        si += 1
    return viol


@njit(cache=True)
def run_median_triple(
    ev_t, ev_v, nbr, lex,
    val_lo, org_lo, val_mid, org_mid, val_hi, org_hi,
):
    """Low <= initial-data <= high sandwich over one schedule; returns violations."""
    viol = 0
    for e in range(ev_t.size):
        v = ev_v[e]
        a = nbr[v, 0]
        b = nbr[v, 1]
        c = nbr[v, 2]
        mv, mo = _median3(val_lo[a], org_lo[a], val_lo[b], org_lo[b], val_lo[c], org_lo[c], lex)
        val_lo[v] = mv
        org_lo[v] = mo
        mv, mo = _median3(val_mid[a], org_mid[a], val_mid[b], org_mid[b], val_mid[c], org_mid[c], lex)
        val_mid[v] = mv
        org_mid[v] = mo
        mv, mo = _median3(val_hi[a], org_hi[a], val_hi[b], org_hi[b], val_hi[c], org_hi[c], lex)
        val_hi[v] = mv
        org_hi[v] = mo
        if val_lo[v] > val_mid[v] or val_mid[v] > val_hi[v]:
            viol += 1
    return viol


@njit(cache=True)
def run_discrete(ev_t, ev_v, nbr, spin, snap_t, snap_spin):
    si = 0
    ns = snap_t.size
    flips = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            snap_spin[si, :] = spin
            si += 1
        s = np.int8(1) if spin[nbr[v, 0]] + spin[nbr[v, 1]] + spin[nbr[v, 2]] > 0 else np.int8(-1)
        if s != spin[v]:
            spin[v] = s
            flips += 1
    while si < ns:
        snap_spin[si, :] = spin
        si += 1
    return flips


@njit(cache=True)
def run_discrete_rec(
    ev_t, ev_v, nbr, spin, snap_t, snap_spin,
    f_v, f_t, f_old, f_new, ev_new_spin,
):
    si = 0
    ns = snap_t.size
    nf = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            snap_spin[si, :] = spin
            si += 1
        s = np.int8(1) if spin[nbr[v, 0]] + spin[nbr[v, 1]] + spin[nbr[v, 2]] > 0 else np.int8(-1)
        if s != spin[v]:
            f_v[nf] = v
            f_t[nf] = t
            f_old[nf] = spin[v]
            f_new[nf] = s
            nf += 1
            spin[v] = s
        ev_new_spin[e] = s
    while si < ns:
        snap_spin[si, :] = spin
        si += 1
    return nf


@njit(cache=True)
def run_discrete_pair(ev_t, ev_v, nbr, spin_a, spin_b, snap_t, snap_a, snap_b):
    """Two coupled discrete runs; counts events breaking spin_a <= spin_b."""
    si = 0
    ns = snap_t.size
    viol = 0
    for e in range(ev_t.size):
        t = ev_t[e]
        v = ev_v[e]
        while si < ns and snap_t[si] < t:
            snap_a[si, :] = spin_a
            snap_b[si, :] = spin_b
            si += 1
        s = np.int8(1) if spin_a[nbr[v, 0]] + spin_a[nbr[v, 1]] + spin_a[nbr[v, 2]] > 0 else np.int8(-1)
        spin_a[v] = s
        s = np.int8(1) if spin_b[nbr[v, 0]] + spin_b[nbr[v, 1]] + spin_b[nbr[v, 2]] > 0 else np.int8(-1)
        spin_b[v] = s
        if spin_a[v] > spin_b[v]:
            viol += 1
    while si < ns:
        snap_a[si, :] = spin_a
        snap_b[si, :] = spin_b
        si += 1
    return viol


@njit(cache=True)
def run_discrete_diff(ev_t, ev_v, nbr, spin_a, spin_b, ever_diff):
    """Two coupled discrete runs; marks vertices whose spins ever differ."""
    for e in range(ev_t.size):
        v = ev_v[e]
        sa = np.int8(1) if spin_a[nbr[v, 0]] + spin_a[nbr[v, 1]] + spin_a[nbr[v, 2]] > 0 else np.int8(-1)
        sb = np.int8(1) if spin_b[nbr[v, 0]] + spin_b[nbr[v, 1]] + spin_b[nbr[v, 2]] > 0 else np.int8(-1)
        spin_a[v] = sa
        spin_b[v] = sb
        if sa != sb:
            ever_diff[v] = 1
    return 0

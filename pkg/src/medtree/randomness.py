"""Counter-based randomness, splittable by vertex and stream.

Every random quantity is a pure function of (master seed, vertex key,
stream label, counter index) through a SplitMix64-style avalanche chain.
Nothing is stateful: any ball, any replica, any process recomputes the same
numbers, which is what makes cross-checks between independently written
code paths (forward engine, backward oracle, sandwich runs) exact rather
than statistical.

Streams per vertex:

* spin, generation g   - the initial uniform height U_v(0); g > 0 gives an
  independent redraw used by resampling experiments,
* clock, generation g  - i.i.d. exponential(1) inter-ring increments; ring
  times are their running sums, so a shorter horizon's ring list is a
  prefix of a longer one by construction,
* tie                  - auxiliary uniforms for rules that need invariant
  tie-breaking (mass transport).

Ring times are always produced by the same numpy code path (`_exp_unit` on
arrays), never a scalar libm call, so the forward engine's bulk schedules
and the backward oracle's per-vertex lists agree bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import tree

GENERATOR_ID = "medtree-prf/1"

_MASK = (1 << 64) - 1
_SEED_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# Stream kinds; the wire label is kind + 4 * generation.
_KIND_SPIN = 0
_KIND_CLOCK = 1
_KIND_TIE = 2

# Column block for vectorized ring generation; any value gives identical
# streams (accumulation is sequential), this one just bounds temporaries.
_RING_BLOCK = 16


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def prf_u64(master_seed: int, vertex_key: int, label: int, counter: int) -> int:
    h = _mix(master_seed ^ _SEED_GAMMA)
    h = _mix(h ^ vertex_key)
    h = _mix(h ^ label)
    h = _mix(h ^ counter)
    return h


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX_A)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX_B)
    z ^= z >> np.uint64(31)
    return z


def prf_u64_np(master_seed: int, vertex_keys: np.ndarray, labels, counters) -> np.ndarray:
    """Vectorized prf_u64; labels/counters broadcast against vertex_keys."""
    seed = np.uint64(master_seed & _MASK)
    h = _mix_np(np.broadcast_to(seed ^ np.uint64(_SEED_GAMMA & _MASK), np.broadcast_shapes(
        np.shape(vertex_keys), np.shape(labels), np.shape(counters))).copy())
    h = _mix_np(h ^ np.asarray(vertex_keys, dtype=np.uint64))
    h = _mix_np(h ^ np.asarray(labels, dtype=np.uint64))
    h = _mix_np(h ^ np.asarray(counters, dtype=np.uint64))
    return h


def _unit_interval(h) -> np.ndarray | float:
    # 53-bit uniform in [0, 1)
    return (np.asarray(h, dtype=np.uint64) >> np.uint64(11)) * 2.0**-53


def _exp_unit(h: np.ndarray) -> np.ndarray:
    # Strictly positive exponential(1); the offset keeps the argument in
    # (0, 1) so increments are never 0 and ring times strictly increase.
    u = ((h >> np.uint64(12)) + np.float64(0.5)) * 2.0**-52
    return -np.log(u)


@dataclass
class SeedManifest:
    """Everything that determines a realization of the randomness.

    ``spin_gen``/``clock_gen`` map vertex keys to a resample generation;
    absent vertices use generation 0.  Replicas of a batch are keyed by
    ``master_seed + replica_index``.
    """

    master_seed: int
    spin_gen: dict[int, int] = field(default_factory=dict)
    clock_gen: dict[int, int] = field(default_factory=dict)
    generator: str = GENERATOR_ID

    def __post_init__(self) -> None:
        if self.generator != GENERATOR_ID:
            raise ValueError(f"unsupported generator {self.generator!r}")
        self.master_seed &= _MASK

    def replica(self, index: int) -> "SeedManifest":
        return SeedManifest(self.master_seed + index, dict(self.spin_gen), dict(self.clock_gen))

    def with_spin_resampled(self, vertex: str | int, generation: int | None = None) -> "SeedManifest":
        key = vertex if isinstance(vertex, int) else tree.key_of(vertex)
        gen = self.spin_gen.get(key, 0) + 1 if generation is None else generation
        out = dict(self.spin_gen)
        out[key] = gen
        return SeedManifest(self.master_seed, out, dict(self.clock_gen))

    def with_clock_resampled(self, vertex: str | int, generation: int | None = None) -> "SeedManifest":
        key = vertex if isinstance(vertex, int) else tree.key_of(vertex)
        gen = self.clock_gen.get(key, 0) + 1 if generation is None else generation
        out = dict(self.clock_gen)
        out[key] = gen
        return SeedManifest(self.master_seed, dict(self.spin_gen), out)

    def to_json(self) -> str:
        return json.dumps(
            {
                "generator": self.generator,
                "master_seed": self.master_seed,
                "spin_gen": {tree.address_of(k): g for k, g in sorted(self.spin_gen.items())},
                "clock_gen": {tree.address_of(k): g for k, g in sorted(self.clock_gen.items())},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SeedManifest":
        raw = json.loads(text)
        return cls(
            master_seed=raw["master_seed"],
            spin_gen={tree.key_of(a): g for a, g in raw.get("spin_gen", {}).items()},
            clock_gen={tree.key_of(a): g for a, g in raw.get("clock_gen", {}).items()},
            generator=raw.get("generator", GENERATOR_ID),
        )


def initial_uniform(manifest: SeedManifest, vertex_key: int) -> float:
    gen = manifest.spin_gen.get(vertex_key, 0)
    return float(_unit_interval(prf_u64(manifest.master_seed, vertex_key, _KIND_SPIN + 4 * gen, 0)))


def initial_uniforms(manifest: SeedManifest, vertex_keys: np.ndarray) -> np.ndarray:
    labels = np.full(len(vertex_keys), _KIND_SPIN, dtype=np.uint64)
    if manifest.spin_gen:
        gens = np.array([manifest.spin_gen.get(int(k), 0) for k in vertex_keys], dtype=np.uint64)
        labels = labels + np.uint64(4) * gens
    h = prf_u64_np(manifest.master_seed, np.asarray(vertex_keys, dtype=np.uint64), labels,
                   np.zeros(len(vertex_keys), dtype=np.uint64))
    return _unit_interval(h)


def tie_break_uniform(manifest: SeedManifest, vertex_key: int, index: int = 0) -> float:
    return float(_unit_interval(prf_u64(manifest.master_seed, vertex_key, _KIND_TIE, index)))


def ring_times(manifest: SeedManifest, vertex_key: int, horizon: float) -> np.ndarray:
    """All ring times of one vertex in (0, horizon], strictly increasing."""
    gen = manifest.clock_gen.get(vertex_key, 0)
    label = np.uint64(_KIND_CLOCK + 4 * gen)
    key = np.full(_RING_BLOCK, vertex_key, dtype=np.uint64)
    chunks = []
    base = 0.0
    counter = 0
    while base <= horizon:
        counters = np.arange(counter, counter + _RING_BLOCK, dtype=np.uint64)
        incs = _exp_unit(prf_u64_np(manifest.master_seed, key, label, counters))
        block = base + np.cumsum(incs)
        chunks.append(block)
        base = float(block[-1])
        counter += _RING_BLOCK
    times = np.concatenate(chunks)
    return times[times <= horizon]


def ring_schedule(manifest: SeedManifest, ball: tree.IndexedBall, horizon: float):
    """Ring times for every in-ball vertex, globally ordered.

    Returns (times float64[m], vertex int32[m]) sorted by time; exact ties
    across vertices (possible in float64) are ordered by lexicographic
    address.  Only in-ball vertices ring; the static extension does not.
    """
    from . import _kernels  # deferred: numba compilation on first use

    n = ball.n
    keys = ball.keys[:n].astype(np.uint64)
    labels = np.full(n, _KIND_CLOCK, dtype=np.uint64)
    if manifest.clock_gen:
        gens = np.array([manifest.clock_gen.get(int(k), 0) for k in ball.keys[:n]], dtype=np.uint64)
        labels = labels + np.uint64(4) * gens
    cur = np.zeros(n)
    active = np.arange(n, dtype=np.int64)
    t_chunks: list[np.ndarray] = []
    v_chunks: list[np.ndarray] = []
    counter = 0
    while active.size:
        counters = np.arange(counter, counter + _RING_BLOCK, dtype=np.uint64)
        h = prf_u64_np(manifest.master_seed, keys[active, None], labels[active, None],
                       counters[None, :])
        block = cur[active, None] + np.cumsum(_exp_unit(h), axis=1)
        keep = block <= horizon
        if keep.any():
            rows = np.broadcast_to(active[:, None].astype(np.int32), block.shape)
            t_chunks.append(block[keep])
            v_chunks.append(rows[keep])
        cur[active] = block[:, -1]
        active = active[block[:, -1] <= horizon]
        counter += _RING_BLOCK
    if not t_chunks:
        return np.empty(0), np.empty(0, dtype=np.int32)
    times = np.concatenate(t_chunks)
    vidx = np.concatenate(v_chunks)
    order = _kernels.event_order(times, ball.lex[vidx], float(horizon))
    return times[order], vidx[order]


def bernoulli_spins(uniforms: np.ndarray, p: float) -> np.ndarray:
    """Project uniforms to +-1 spins: +1 where u <= p."""
    return np.where(np.asarray(uniforms) <= p, 1, -1).astype(np.int8)


def manifests(master_seed: int, count: int) -> Iterable[SeedManifest]:
    base = SeedManifest(master_seed)
    for i in range(count):
        yield base.replica(i)

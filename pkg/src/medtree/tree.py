"""Vertex addressing and ball geometry for the infinite 3-regular tree.

The tree is rooted at an arbitrary origin written "".  The root has three
neighbor slots labelled 0, 1, 2; every other vertex has one parent and two
children labelled 0 and 1.  A vertex is addressed by the word of slot labels
on the path from the root, so valid addresses are "" or a first letter in
{0, 1, 2} followed by letters in {0, 1}: "2", "01", "2001", and so on.

Internally vertices are integer keys in breadth-first order: the root is 0
and level l >= 1 occupies keys [3*2^(l-1) - 2, 3*2^l - 2).  Neighbor
arithmetic is closed-form on keys, so balls never materialize address
strings unless asked.  A root-centered ball of radius R is exactly the key
range [0, 3*2^R - 2), which is also the closed-form ball size.

Two total orders appear.  Key order (breadth-first) is the storage order.
Lexicographic *address* order is the deterministic tie-breaking order used
by the engine: `lex_digits` exposes it as a tuple (exact at any depth) and
`lex_int` as an order-isomorphic int64 for depths up to LEX_DEPTH_CAP,
which is what the compiled kernels compare.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROOT = ""

# Kernels compare lex order through a base-4 integer encoding; 30 letters of
# payload fit in an int64 with room to spare.  In-ball vertices sit at depth
# <= center_depth + radius + 1, asserted below at construction time.
LEX_DEPTH_CAP = 30


class AddressError(ValueError):
    """Raised for strings that do not address a vertex."""


def _check_address(address: str) -> None:
    if address == ROOT:
        return
    if address[0] not in "012":
        raise AddressError(f"bad first letter in address {address!r}")
    for ch in address[1:]:
        if ch not in "01":
            raise AddressError(f"bad letter {ch!r} in address {address!r}")


def level_start(level: int) -> int:
    """First key of a level; level 0 is the root."""
    return 0 if level == 0 else 3 * (1 << (level - 1)) - 2


def key_level(key: int) -> int:
    b = (key + 2).bit_length()
    return b - 1 if key + 2 >= 3 << (b - 2) else b - 2


def key_of(address: str) -> int:
    _check_address(address)
    if address == ROOT:
        return 0
    level = len(address)
    offset = int(address[0], 4)
    for ch in address[1:]:
        offset = (offset << 1) | (ch == "1")
    return level_start(level) + offset


def address_of(key: int) -> str:
    if key == 0:
        return ROOT
    level = key_level(key)
    offset = key - level_start(level)
    first = offset >> (level - 1)
    bits = offset & ((1 << (level - 1)) - 1)
    return str(first) + format(bits, f"0{level - 1}b") if level > 1 else str(first)


def parent_key(key: int) -> int:
    if key == 0:
        raise ValueError("root has no parent")
    level = key_level(key)
    if level == 1:
        return 0
    return level_start(level - 1) + ((key - level_start(level)) >> 1)


def children_keys(key: int) -> tuple[int, int]:
    if key == 0:
        raise ValueError("root children are keys 1, 2, 3")
    level = key_level(key)
    base = level_start(level + 1) + 2 * (key - level_start(level))
    return base, base + 1


def neighbors_key(key: int) -> tuple[int, int, int]:
    if key == 0:
        return 1, 2, 3
    c0, c1 = children_keys(key)
    return parent_key(key), c0, c1


def neighbors(address: str) -> tuple[str, str, str]:
    """The three neighbors; for non-root vertices: parent first, then children."""
    return tuple(address_of(k) for k in neighbors_key(key_of(address)))


def distance(u: str, v: str) -> int:
    return distance_key(key_of(u), key_of(v))


def distance_key(ku: int, kv: int) -> int:
    d = 0
    lu, lv = key_level(ku), key_level(kv)
    while lu > lv:
        ku, lu, d = parent_key(ku), lu - 1, d + 1
    while lv > lu:
        kv, lv, d = parent_key(kv), lv - 1, d + 1
    while ku != kv:
        ku, kv, d = parent_key(ku), parent_key(kv), d + 2
    return d


def path_between(u: str, v: str) -> list[str]:
    """Vertices of the unique simple path, endpoints included."""
    ku, kv = key_of(u), key_of(v)
    up, down = [], []
    lu, lv = key_level(ku), key_level(kv)
    while lu > lv:
        up.append(ku)
        ku, lu = parent_key(ku), lu - 1
    while lv > lu:
        down.append(kv)
        kv, lv = parent_key(kv), lv - 1
    while ku != kv:
        up.append(ku)
        down.append(kv)
        ku, kv = parent_key(ku), parent_key(kv)
    return [address_of(k) for k in up + [ku] + down[::-1]]


def ball_size(radius: int) -> int:
    """|Ball(v, R)| in the infinite tree: 1 for R=0, else 3*2^R - 2."""
    return 1 if radius == 0 else 3 * (1 << radius) - 2


def ray_address(direction: int, length: int) -> str:
    """Address at the given distance from the root along one fixed ray."""
    if length == 0:
        return ROOT
    return str(direction) + "0" * (length - 1)


def lex_digits(key: int) -> tuple[int, ...]:
    """Address as a digit tuple whose natural tuple order is lex order.

    The first letter maps to a+1, later letters to 2b+1; a proper prefix is
    an initial segment of the tuple and all digits are positive, so prefixes
    sort first, exactly like the words themselves.
    """
    if key == 0:
        return ()
    level = key_level(key)
    offset = key - level_start(level)
    first = offset >> (level - 1)
    digits = [first + 1]
    for i in range(level - 2, -1, -1):
        digits.append(2 * ((offset >> i) & 1) + 1)
    return tuple(digits)


def lex_int(key: int) -> int:
    """Order-isomorphic int64 image of lex order, valid to LEX_DEPTH_CAP letters."""
    digits = lex_digits(key)
    if len(digits) > LEX_DEPTH_CAP:
        raise ValueError(f"address depth {len(digits)} exceeds lex encoding cap")
    out = 0
    for i, d in enumerate(digits):
        out |= d << (2 * (LEX_DEPTH_CAP - i))
    return out


def _lex_int_root_ball(radius: int, n_ext: int) -> np.ndarray:
    # Level-by-level vectorized version of lex_int for keys [0, n_ext).
    out = np.zeros(n_ext, dtype=np.int64)
    level = 1
    while level_start(level) < n_ext:
        lo = level_start(level)
        hi = min(level_start(level + 1), n_ext)
        offset = np.arange(lo, hi, dtype=np.int64) - lo
        acc = ((offset >> (level - 1)) + 1) << (2 * LEX_DEPTH_CAP)
        for i in range(level - 1):
            digit = 2 * ((offset >> (level - 2 - i)) & 1) + 1
            acc |= digit << (2 * (LEX_DEPTH_CAP - 2 - i))
        out[lo:hi] = acc
        level += 1
    return out


@dataclass(frozen=True)
class IndexedBall:
    """A ball with flat arrays the engine kernels run over.

    Local indices [0, n) are the in-ball vertices in breadth-first order
    from the center; [n, n_ext) is the static boundary extension: every
    out-of-ball neighbor of an in-ball vertex.  `nbr[i]` holds the three
    local neighbor indices of in-ball vertex i (extension vertices have no
    rows; they never update).  `dist` is graph distance from the center and
    `lex` the lex-order encoding, both over [0, n_ext).
    """

    center_key: int
    radius: int
    n: int
    n_ext: int
    keys: np.ndarray   # int64 [n_ext] absolute vertex keys
    nbr: np.ndarray    # int32 [n, 3] local indices
    dist: np.ndarray   # int16 [n_ext]
    lex: np.ndarray    # int64 [n_ext]
    _index_of: dict[int, int] = field(repr=False, default_factory=dict)

    def index_of(self, key: int) -> int:
        if not self._index_of:
            self._index_of.update({int(k): i for i, k in enumerate(self.keys)})
        return self._index_of[key]

    def addresses(self) -> list[str]:
        return [address_of(int(k)) for k in self.keys[: self.n]]

    @property
    def center(self) -> str:
        return address_of(self.center_key)

    def __len__(self) -> int:
        return self.n


def _indexed_ball_root(radius: int) -> IndexedBall:
    n = ball_size(radius)
    n_ext = ball_size(radius + 1)
    keys = np.arange(n_ext, dtype=np.int64)
    nbr = np.empty((n, 3), dtype=np.int32)
    nbr[0] = (1, 2, 3)
    for level in range(1, radius + 1):
        lo, hi = level_start(level), level_start(level + 1)
        off = np.arange(hi - lo, dtype=np.int64)
        nbr[lo:hi, 0] = 0 if level == 1 else level_start(level - 1) + (off >> 1)
        base = level_start(level + 1) + 2 * off
        nbr[lo:hi, 1] = base
        nbr[lo:hi, 2] = base + 1
    dist_full = np.zeros(n_ext, dtype=np.int16)
    for level in range(1, radius + 2):
        dist_full[level_start(level) : level_start(level + 1)] = level
    return IndexedBall(
        center_key=0, radius=radius, n=n, n_ext=n_ext, keys=keys, nbr=nbr,
        dist=dist_full, lex=_lex_int_root_ball(radius, n_ext),
    )


def _indexed_ball_bfs(center_key: int, radius: int) -> IndexedBall:
    index: dict[int, int] = {center_key: 0}
    keys = [center_key]
    dist = [0]
    frontier = [center_key]
    for d in range(1, radius + 2):
        nxt = []
        for k in frontier:
            for nk in neighbors_key(k):
                if nk not in index:
                    index[nk] = len(keys)
                    keys.append(nk)
                    dist.append(d)
                    nxt.append(nk)
        frontier = nxt
        if d == radius + 1:
            break
    n = sum(1 for d in dist if d <= radius)
    n_ext = len(keys)
    nbr = np.empty((n, 3), dtype=np.int32)
    for i in range(n):
        a, b, c = neighbors_key(keys[i])
        nbr[i] = (index[a], index[b], index[c])
    lex = np.fromiter((lex_int(k) for k in keys), count=n_ext, dtype=np.int64)
    return IndexedBall(
        center_key=center_key, radius=radius, n=n, n_ext=n_ext,
        keys=np.asarray(keys, dtype=np.int64), nbr=nbr,
        dist=np.asarray(dist, dtype=np.int16), lex=lex,
        _index_of=index,
    )


_BALL_CACHE: dict[tuple[int, int], IndexedBall] = {}
_BALL_CACHE_MAX = 24


def indexed_ball(center: str | int, radius: int) -> IndexedBall:
    """Build (or fetch from cache) the indexed ball around a center."""
    center_key = center if isinstance(center, int) else key_of(center)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if key_level(center_key) + radius + 1 > LEX_DEPTH_CAP:
        raise ValueError("ball reaches beyond the lex encoding depth cap")
    cached = _BALL_CACHE.get((center_key, radius))
    if cached is not None:
        return cached
    if center_key == 0:
        ball = _indexed_ball_root(radius)
    else:
        ball = _indexed_ball_bfs(center_key, radius)
    if len(_BALL_CACHE) >= _BALL_CACHE_MAX:
        _BALL_CACHE.pop(next(iter(_BALL_CACHE)))
    _BALL_CACHE[(center_key, radius)] = ball
    return ball

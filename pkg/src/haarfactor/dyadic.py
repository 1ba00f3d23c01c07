"""Dyadic intervals, rectangles, Haar functions, and index enumerations.

Everything downstream is expressed in the coordinates fixed here: dyadic
intervals ordered by (level, position), dyadic rectangles ordered by
(max level, x level, y level, x position, y position), and a global
pairing bijection used to interleave component indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Union


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """The interval [position * 2^-level, (position + 1) * 2^-level)."""

    level: int
    position: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        if not 0 <= self.position < (1 << self.level):
            raise ValueError(
                f"position must lie in [0, 2^{self.level}), got {self.position}"
            )

    def measure(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def left_endpoint(self) -> Fraction:
        return Fraction(self.position, 1 << self.level)

    @property
    def right_endpoint(self) -> Fraction:
        return Fraction(self.position + 1, 1 << self.level)

    @property
    def midpoint(self) -> Fraction:
        return Fraction(2 * self.position + 1, 1 << (self.level + 1))

    def left_half(self) -> "DyadicInterval":
        return DyadicInterval(self.level + 1, 2 * self.position)

    def right_half(self) -> "DyadicInterval":
        return DyadicInterval(self.level + 1, 2 * self.position + 1)

    def parent(self) -> "DyadicInterval":
        if self.level == 0:
            raise ValueError("the unit interval has no parent")
        return DyadicInterval(self.level - 1, self.position // 2)

    def contains(self, other: "DyadicInterval") -> bool:
        """Nesting test: True iff other is a subset of self."""
        if other.level < self.level:
            return False
        return (other.position >> (other.level - self.level)) == self.position

    def disjoint_from(self, other: "DyadicInterval") -> bool:
        return not (self.contains(other) or other.contains(self))

    def contains_point(self, x: Fraction) -> bool:
        return self.left_endpoint <= x < self.right_endpoint


@dataclass(frozen=True, order=True)
class DyadicRect:
    """A dyadic rectangle I x J inside the unit square."""

    x_interval: DyadicInterval
    y_interval: DyadicInterval

    def measure(self) -> float:
        return self.x_interval.measure() * self.y_interval.measure()


def haar_eval(interval: DyadicInterval, x: float) -> int:
    """Evaluate the L-infinity-normalized Haar function at a point.

    Returns +1 on the left half of the interval, -1 on the right half,
    and 0 outside.  The comparison is exact: a float argument is a dyadic
    rational and is compared as such.
    """
    if not 0.0 <= x < 1.0:
        raise ValueError(f"point must lie in [0, 1), got {x}")
    xf = Fraction(x)
    if not interval.contains_point(xf):
        return 0
    return 1 if xf < interval.midpoint else -1


def rect_haar_eval(rect: DyadicRect, x: float, y: float) -> int:
    """Evaluate the biparameter Haar function h_I(x) * h_J(y)."""
    return haar_eval(rect.x_interval, x) * haar_eval(rect.y_interval, y)


# ---------------------------------------------------------------------------
# Pairing bijection N^2 <-> N (1-based), monotone in the second argument.
# Pairs are ranked by (k + j, k):  (1,1) -> 1, (1,2) -> 2, (2,1) -> 3, ...


def pair_encode(k: int, j: int) -> int:
    if k < 1 or j < 1:
        raise ValueError(f"pair entries must be >= 1, got ({k}, {j})")
    s = k + j - 2
    return s * (s + 1) // 2 + k


def pair_decode(n: int) -> tuple[int, int]:
    if n < 1:
        raise ValueError(f"index must be >= 1, got {n}")
    # largest s with s(s+1)/2 < n
    s = int(((8 * n + 1) ** 0.5 - 1) / 2)
    while s * (s + 1) // 2 >= n:
        s -= 1
    while (s + 1) * (s + 2) // 2 < n:
        s += 1
    k = n - s * (s + 1) // 2
    j = s + 2 - k
    return k, j


# ---------------------------------------------------------------------------
# Within-space index orders.  The constant function is not part of the
# system; intervals and rectangles are the full index sets.

OneParamSupport = DyadicInterval
TwoParamSupport = DyadicRect
Support = Union[DyadicInterval, DyadicRect]


@dataclass(frozen=True)
class HaarIndex:
    """A basis index: its dyadic support plus the within-space ordinal."""

    support: Support
    ordinal: int

    @property
    def dim(self) -> int:
        return 1 if isinstance(self.support, DyadicInterval) else 2

    def measure(self) -> float:
        return self.support.measure()

    def to_json(self) -> dict:
        if self.dim == 1:
            iv = self.support
            return {"dim": 1, "level": iv.level, "pos": iv.position}
        rect = self.support
        return {
            "dim": 2,
            "x": {"level": rect.x_interval.level, "pos": rect.x_interval.position},
            "y": {"level": rect.y_interval.level, "pos": rect.y_interval.position},
        }


def index_from_json(data: dict) -> HaarIndex:
    if data["dim"] == 1:
        iv = DyadicInterval(data["level"], data["pos"])
        return HaarIndex(iv, interval_ordinal(iv))
    rect = DyadicRect(
        DyadicInterval(data["x"]["level"], data["x"]["pos"]),
        DyadicInterval(data["y"]["level"], data["y"]["pos"]),
    )
    return HaarIndex(rect, rect_ordinal(rect))


def interval_ordinal(interval: DyadicInterval) -> int:
    """1-based rank of an interval in the (level, position) order."""
    return (1 << interval.level) + interval.position


def rect_ordinal(rect: DyadicRect) -> int:
    """1-based rank of a rectangle in the (max level, lx, ly, px, py) order.

    Rectangles with both levels below some bound form a prefix, so
    truncations are nested under the biparameter filtration.
    """
    lx, px = rect.x_interval.level, rect.x_interval.position
    ly, py = rect.y_interval.level, rect.y_interval.position
    m = max(lx, ly)
    # all rectangles with max level < m
    rank = ((1 << m) - 1) ** 2
    # within max level == m the level pairs are (0,m), ..., (m-1,m), (m,0),
    # ..., (m,m); in each pair positions are ordered by (px, py)
    for a in range(lx):
        rank += (1 << a) * (1 << m)
    if lx == m:
        for b in range(ly):
            rank += (1 << m) * (1 << b)
    rank += px * (1 << ly) + py
    return rank + 1


def intervals_up_to(depth: int) -> Iterator[DyadicInterval]:
    for level in range(depth + 1):
        for position in range(1 << level):
            yield DyadicInterval(level, position)


@lru_cache(maxsize=None)
def space_index_order(dim: int, depth: int) -> tuple[HaarIndex, ...]:
    """All Haar indices of the given parameter count up to the depth, ordered.

    1-parameter: 2^(depth+1) - 1 intervals by (level, position).
    2-parameter: (2^(depth+1) - 1)^2 rectangles by (max level, lx, ly, px, py).
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if dim == 1:
        return tuple(
            HaarIndex(iv, interval_ordinal(iv)) for iv in intervals_up_to(depth)
        )
    if dim == 2:
        rects = [
            DyadicRect(ix, iy)
            for ix in intervals_up_to(depth)
            for iy in intervals_up_to(depth)
        ]
        rects.sort(
            key=lambda r: (
                max(r.x_interval.level, r.y_interval.level),
                r.x_interval.level,
                r.y_interval.level,
                r.x_interval.position,
                r.y_interval.position,
            )
        )
        return tuple(HaarIndex(r, i + 1) for i, r in enumerate(rects))
    raise ValueError(f"dim must be 1 or 2, got {dim}")


def space_dimension(dim: int, depth: int) -> int:
    n = (1 << (depth + 1)) - 1
    return n if dim == 1 else n * n

"""Finite Haar expansions and exact evaluation of the space norms.

All functions in play are dyadic step functions, so every integral is a
finite sum over cells on which the integrand is constant.  Two evaluation
paths implement the same sums: a dense path with cached cell matrices for
bounded depths, and an adaptive path that decomposes the domain at the
breakpoints actually present in an expansion (this is what makes very deep,
sparsely supported expansions affordable).  Floating point is the only
noise source.
"""

from __future__ import annotations

import enum
from bisect import bisect_left
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .dyadic import (
    DyadicInterval,
    DyadicRect,
    HaarIndex,
    index_from_json,
    interval_ordinal,
    rect_ordinal,
    space_dimension,
    space_index_order,
)

Key1 = tuple[int, int]  # (level, position)
Key2 = tuple[int, int, int, int]  # (lx, px, ly, py)


class SpaceKind(str, enum.Enum):
    LP = "Lp"
    HP = "Hp"
    VMO = "VMO"
    HPHQ = "HpHq"
    VMOHR = "VMOHr"
    LRLS = "LrLs"


_KIND_DIM = {
    SpaceKind.LP: 1,
    SpaceKind.HP: 1,
    SpaceKind.VMO: 1,
    SpaceKind.HPHQ: 2,
    SpaceKind.VMOHR: 2,
    SpaceKind.LRLS: 2,
}

_KIND_EXPONENTS = {
    SpaceKind.LP: 1,
    SpaceKind.HP: 1,
    SpaceKind.VMO: 0,
    SpaceKind.HPHQ: 2,
    SpaceKind.VMOHR: 1,
    SpaceKind.LRLS: 2,
}

# kinds whose norm depends on the coefficients only through their squares;
# exactly these have a 1-unconditional basis at finite truncation
QUADRATIC_KINDS = (SpaceKind.HP, SpaceKind.VMO, SpaceKind.HPHQ, SpaceKind.VMOHR)


@dataclass(frozen=True)
class SpaceSpec:
    """A component space: kind, truncation depth, and exponents."""

    kind: SpaceKind
    depth: int
    exponents: tuple[float, ...] = ()

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        expected = _KIND_EXPONENTS[self.kind]
        if len(self.exponents) != expected:
            raise ValueError(
                f"{self.kind.value} takes {expected} exponent(s), "
                f"got {self.exponents}"
            )
        for e in self.exponents:
            if not (1 <= e < float("inf")):
                raise ValueError(f"exponents must lie in [1, inf), got {e}")
        object.__setattr__(
            self, "exponents", tuple(float(e) for e in self.exponents)
        )

    @property
    def dim(self) -> int:
        return _KIND_DIM[self.kind]

    @property
    def n_indices(self) -> int:
        return space_dimension(self.dim, self.depth)

    def index_order(self) -> tuple[HaarIndex, ...]:
        return space_index_order(self.dim, self.depth)

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value, "depth": self.depth}
        names = _EXPONENT_NAMES[self.kind]
        for name, value in zip(names, self.exponents):
            out[name] = value
        return out


_EXPONENT_NAMES = {
    SpaceKind.LP: ("p",),
    SpaceKind.HP: ("p",),
    SpaceKind.VMO: (),
    SpaceKind.HPHQ: ("p", "q"),
    SpaceKind.VMOHR: ("r",),
    SpaceKind.LRLS: ("r", "s"),
}


def space_spec_from_json(data: Mapping) -> SpaceSpec:
    kind = SpaceKind(data["kind"])
    names = _EXPONENT_NAMES[kind]
    exponents = tuple(float(data[name]) for name in names)
    return SpaceSpec(kind, int(data["depth"]), exponents)


def lp(p: float, depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.LP, depth, (p,))


def hp(p: float, depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.HP, depth, (p,))


def vmo(depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.VMO, depth)


def hphq(p: float, q: float, depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.HPHQ, depth, (p, q))


def vmohr(r: float, depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.VMOHR, depth, (r,))


def lrls(r: float, s: float, depth: int) -> SpaceSpec:
    return SpaceSpec(SpaceKind.LRLS, depth, (r, s))


# ---------------------------------------------------------------------------
# Expansions


@dataclass
class HaarExpansion:
    """A finite Haar expansion: a coefficient map over 1d or 2d indices.

    Keys are ``(level, pos)`` for one parameter and ``(lx, px, ly, py)``
    for two.  The induced step function is constant on dyadic cells whose
    side is half the finest supported interval.
    """

    dim: int
    depth: int
    coeffs: dict

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        for key in self.coeffs:
            levels = (key[0],) if self.dim == 1 else (key[0], key[2])
            if any(l > self.depth for l in levels):
                raise ValueError(f"index {key} exceeds depth {self.depth}")

    def copy(self) -> "HaarExpansion":
        return HaarExpansion(self.dim, self.depth, dict(self.coeffs))

    def support_keys(self) -> list:
        return [k for k, a in self.coeffs.items() if a != 0.0]

    def max_level(self) -> int:
        levels = [0]
        for key in self.support_keys():
            levels.append(key[0] if self.dim == 1 else max(key[0], key[2]))
        return max(levels)

    def coefficient(self, key) -> float:
        return self.coeffs.get(key, 0.0)

    def scaled(self, factor: float) -> "HaarExpansion":
        return HaarExpansion(
            self.dim, self.depth, {k: factor * a for k, a in self.coeffs.items()}
        )

    def plus(self, other: "HaarExpansion") -> "HaarExpansion":
        if self.dim != other.dim:
            raise ValueError("parameter counts differ")
        out = dict(self.coeffs)
        for k, a in other.coeffs.items():
            out[k] = out.get(k, 0.0) + a
        return HaarExpansion(self.dim, max(self.depth, other.depth), out)

    def at_depth(self, depth: int) -> "HaarExpansion":
        """Re-encode at a (typically larger) depth; coefficients unchanged."""
        return HaarExpansion(self.dim, depth, dict(self.coeffs))

    def to_vector(self, order: tuple[HaarIndex, ...]) -> np.ndarray:
        vec = np.zeros(len(order))
        pos = _key_positions(order)
        for key, a in self.coeffs.items():
            vec[pos[key]] = a
        return vec

    @staticmethod
    def from_vector(dim: int, depth: int, vec: np.ndarray) -> "HaarExpansion":
        order = space_index_order(dim, depth)
        coeffs = {}
        for idx, a in zip(order, vec):
            if a != 0.0:
                coeffs[index_key(idx)] = float(a)
        return HaarExpansion(dim, depth, coeffs)

    def to_json(self) -> list:
        items = sorted(self.coeffs.items())
        return [[_key_to_index_json(self.dim, k), a] for k, a in items]

    @staticmethod
    def from_json(dim: int, depth: int, data: Iterable) -> "HaarExpansion":
        coeffs = {}
        for index_json, a in data:
            idx = index_from_json(index_json)
            coeffs[index_key(idx)] = float(a)
        return HaarExpansion(dim, depth, coeffs)


def index_key(idx: HaarIndex):
    if idx.dim == 1:
        iv = idx.support
        return (iv.level, iv.position)
    r = idx.support
    return (
        r.x_interval.level,
        r.x_interval.position,
        r.y_interval.level,
        r.y_interval.position,
    )


def key_measure(dim: int, key) -> float:
    if dim == 1:
        return 2.0 ** (-key[0])
    return 2.0 ** (-(key[0] + key[2]))


def key_ordinal(dim: int, key) -> int:
    if dim == 1:
        return interval_ordinal(DyadicInterval(*key))
    return rect_ordinal(
        DyadicRect(DyadicInterval(key[0], key[1]), DyadicInterval(key[2], key[3]))
    )


def _key_to_index_json(dim: int, key) -> dict:
    if dim == 1:
        return {"dim": 1, "level": key[0], "pos": key[1]}
    return {
        "dim": 2,
        "x": {"level": key[0], "pos": key[1]},
        "y": {"level": key[2], "pos": key[3]},
    }


@lru_cache(maxsize=None)
def _key_positions_cached(dim: int, depth: int) -> dict:
    order = space_index_order(dim, depth)
    return {index_key(idx): i for i, idx in enumerate(order)}


def _key_positions(order: tuple[HaarIndex, ...]) -> dict:
    if order:
        dim = order[0].dim
        depth = max(
            (index_key(idx)[0] if dim == 1 else max(index_key(idx)[0], index_key(idx)[2]))
            for idx in order
        )
        cached = _key_positions_cached(dim, depth)
        if len(cached) == len(order):
            return cached
    return {index_key(idx): i for i, idx in enumerate(order)}


def basis_expansion(dim: int, depth: int, key) -> HaarExpansion:
    return HaarExpansion(dim, depth, {key: 1.0})


def dual_coefficient(idx_or_key, f: HaarExpansion) -> float:
    """The biorthogonal functional's action: read off the coefficient."""
    key = index_key(idx_or_key) if isinstance(idx_or_key, HaarIndex) else idx_or_key
    return f.coeffs.get(key, 0.0)


# ---------------------------------------------------------------------------
# Piecewise decomposition (exact; integer endpoint arithmetic)


def _axis_breaks(keys_1d: Iterable[Key1]) -> tuple[list[int], int]:
    """Sorted integer breakpoints at scale 2^-se covering [0, 1).

    Includes every endpoint and midpoint of the given intervals plus the
    domain endpoints, so each Haar factor is constant between consecutive
    breakpoints.  Plain Python ints: deep levels exceed 64-bit range.
    """
    levels = [k[0] for k in keys_1d]
    se = (max(levels) + 1) if levels else 1
    pts = {0, 1 << se}
    for l, p in keys_1d:
        shift = se - l
        left = p << shift
        pts.add(left)
        pts.add(left + (1 << (shift - 1)))
        pts.add(left + (1 << shift))
    return sorted(pts), se


def _piece_ranges(breaks: list[int], se: int, key: Key1) -> tuple[int, int, int]:
    """Return the piece index ranges (left half, midpoint, right end)."""
    l, p = key
    shift = se - l
    a = p << shift
    m = a + (1 << (shift - 1))
    b = a + (1 << shift)
    ia = bisect_left(breaks, a)
    im = bisect_left(breaks, m)
    ib = bisect_left(breaks, b)
    return ia, im, ib


def _piece_widths(breaks: list[int], se: int) -> np.ndarray:
    scale = 2.0 ** (-se)
    return np.array(
        [float(b - a) * scale for a, b in zip(breaks[:-1], breaks[1:])]
    )


def _breaks_to_float(breaks: list[int], se: int) -> np.ndarray:
    scale = 2.0 ** (-se)
    return np.array([float(b) * scale for b in breaks])


@dataclass
class StepFunction1D:
    """A step function on [0, 1): values on pieces between breakpoints."""

    breaks: np.ndarray  # P + 1 floats, ascending, breaks[0] = 0, breaks[-1] = 1
    values: np.ndarray  # P floats

    def value_at(self, x: float) -> float:
        if not 0.0 <= x < 1.0:
            raise ValueError(f"point must lie in [0, 1), got {x}")
        i = int(np.searchsorted(self.breaks, x, side="right")) - 1
        return float(self.values[i])

    def integral_of_power(self, power: float) -> float:
        widths = np.diff(self.breaks)
        return float(np.sum(widths * np.abs(self.values) ** power))


@dataclass
class StepFunction2D:
    """A step function on the unit square, constant on grid pieces."""

    x_breaks: np.ndarray
    y_breaks: np.ndarray
    values: np.ndarray  # (Px, Py)

    def value_at(self, x: float, y: float) -> float:
        if not (0.0 <= x < 1.0 and 0.0 <= y < 1.0):
            raise ValueError(f"point must lie in the unit square, got ({x}, {y})")
        i = int(np.searchsorted(self.x_breaks, x, side="right")) - 1
        j = int(np.searchsorted(self.y_breaks, y, side="right")) - 1
        return float(self.values[i, j])


def _grids_1d(f: HaarExpansion):
    """(widths, signed values, squared values, breaks, scale) on the pieces."""
    keys = f.support_keys()
    breaks, se = _axis_breaks(keys)
    n_pieces = len(breaks) - 1
    g = np.zeros(n_pieces)
    sq = np.zeros(n_pieces)
    for key in keys:
        a = f.coeffs[key]
        ia, im, ib = _piece_ranges(breaks, se, key)
        g[ia:im] += a
        g[im:ib] -= a
        sq[ia:ib] += a * a
    widths = _piece_widths(breaks, se)
    return widths, g, sq, breaks, se


def _grids_2d(f: HaarExpansion):
    """Per-axis breaks plus signed and squared value matrices."""
    keys = f.support_keys()
    xb, xse = _axis_breaks([(k[0], k[1]) for k in keys])
    yb, yse = _axis_breaks([(k[2], k[3]) for k in keys])
    nx, ny = len(xb) - 1, len(yb) - 1
    g = np.zeros((nx, ny))
    sq = np.zeros((nx, ny))
    for key in keys:
        a = f.coeffs[key]
        xa, xm, xb_ = _piece_ranges(xb, xse, (key[0], key[1]))
        ya, ym, yb_ = _piece_ranges(yb, yse, (key[2], key[3]))
        g[xa:xm, ya:ym] += a
        g[xa:xm, ym:yb_] -= a
        g[xm:xb_, ya:ym] -= a
        g[xm:xb_, ym:yb_] += a
        sq[xa:xb_, ya:yb_] += a * a
    wx = _piece_widths(xb, xse)
    wy = _piece_widths(yb, yse)
    return wx, wy, g, sq, xb, xse, yb, yse


def square_function(f: HaarExpansion):
    """Pointwise (sum of squared terms)^(1/2) as a step function."""
    if f.dim == 1:
        widths, _, sq, breaks, se = _grids_1d(f)
        return StepFunction1D(_breaks_to_float(breaks, se), np.sqrt(sq))
    wx, wy, _, sq, xb, xse, yb, yse = _grids_2d(f)
    return StepFunction2D(_breaks_to_float(xb, xse), _breaks_to_float(yb, yse), np.sqrt(sq))


# ---------------------------------------------------------------------------
# Norms


def _mixed_norm(wx, wy, sq_grid, outer: float, inner: float) -> float:
    """Iterated integral of a squared-value grid:
    (integral_x (integral_y sq^(inner/2))^(outer/inner))^(1/outer)."""
    inner_int = sq_grid ** (inner / 2.0) @ wy
    return float((wx @ inner_int ** (outer / inner)) ** (1.0 / outer))


def _bmo_candidates(keys_x: Iterable[Key1]) -> set[Key1]:
    cands: set[Key1] = set()
    for l, p in keys_x:
        while True:
            if (l, p) in cands:
                break
            cands.add((l, p))
            if l == 0:
                break
            l, p = l - 1, p // 2
    return cands


def _bmo_norm_1d(f: HaarExpansion) -> float:
    """sup over dyadic I of ((1/|I|) * sum_{J ⊆ I} a_J^2 |J|)^(1/2).

    The Haar system is orthogonal, so the localized quadratic average is
    exactly this coefficient sum; the sup is attained at a support index
    or one of its ancestors.
    """
    totals: dict[Key1, float] = {}
    for key in f.support_keys():
        a = f.coeffs[key]
        contrib = a * a * 2.0 ** (-key[0])
        l, p = key
        while True:
            totals[(l, p)] = totals.get((l, p), 0.0) + contrib
            if l == 0:
                break
            l, p = l - 1, p // 2
    if not totals:
        return 0.0
    return max((2.0 ** l * s) for (l, _), s in totals.items()) ** 0.5


def _hr_norm_of_rows(b: np.ndarray, y_keys: list[Key1], r: float,
                     yb: np.ndarray, yse: int, wy: np.ndarray) -> np.ndarray:
    """Row-wise 1d square-function norms for coefficient matrix b.

    b has one row per x piece and one column per y index; returns the
    H-norm with exponent r of each row as a function of y.
    """
    ny = len(yb) - 1
    mask = np.zeros((len(y_keys), ny))
    for col, key in enumerate(y_keys):
        ia, _, ib = _piece_ranges(yb, yse, key)
        mask[col, ia:ib] = 1.0
    sy = (b * b) @ mask  # (pieces_x, pieces_y) squared square-function
    return ((sy ** (r / 2.0)) @ wy) ** (1.0 / r)


def _vmohr_norm(f: HaarExpansion, r: float) -> float:
    """sup over x-intervals I of the localized quadratic average of the
    inner Hardy-norm of the y-slices."""
    keys = f.support_keys()
    if not keys:
        return 0.0
    x_keys = sorted({(k[0], k[1]) for k in keys})
    y_keys = sorted({(k[2], k[3]) for k in keys})
    ycol = {k: i for i, k in enumerate(y_keys)}
    xb, xse = _axis_breaks(x_keys)
    yb, yse = _axis_breaks(y_keys)
    wy = _piece_widths(yb, yse)
    nx = len(xb) - 1
    best = 0.0
    for cl, cp in sorted(_bmo_candidates(x_keys)):
        cand = DyadicInterval(cl, cp)
        inside = [k for k in keys if cand.contains(DyadicInterval(k[0], k[1]))]
        if not inside:
            continue
        # signed x-profile of each contributing index on the x pieces
        b = np.zeros((nx, len(y_keys)))
        for key in inside:
            a = f.coeffs[key]
            ia, im, ib = _piece_ranges(xb, xse, (key[0], key[1]))
            col = ycol[(key[2], key[3])]
            b[ia:im, col] += a
            b[im:ib, col] -= a
        ca, _, cb = _piece_ranges(xb, xse, (cl, cp))
        inner = _hr_norm_of_rows(b[ca:cb], y_keys, r, yb, yse, wy)
        wx = _piece_widths(xb, xse)[ca:cb]
        avg = float(wx @ inner ** 2) * 2.0 ** cl
        best = max(best, avg)
    return best ** 0.5


def norm(spec: SpaceSpec, f: HaarExpansion) -> float:
    """Exact norm of the expansion in the given space."""
    if f.dim != spec.dim:
        raise ValueError(
            f"{spec.kind.value} expects {spec.dim} parameter(s), "
            f"expansion has {f.dim}"
        )
    if not f.support_keys():
        return 0.0
    if f.max_level() <= spec.depth:
        ev = component_evaluator(spec)
        if ev is not None:
            return float(ev.batch_norm(f.to_vector(ev.order))[0])
    if spec.kind is SpaceKind.HP:
        p = spec.exponents[0]
        widths, _, sq, _, _ = _grids_1d(f)
        return float((widths @ sq ** (p / 2.0)) ** (1.0 / p))
    if spec.kind is SpaceKind.LP:
        p = spec.exponents[0]
        widths, g, _, _, _ = _grids_1d(f)
        return float((widths @ np.abs(g) ** p) ** (1.0 / p))
    if spec.kind is SpaceKind.VMO:
        return _bmo_norm_1d(f)
    if spec.kind is SpaceKind.HPHQ:
        p, q = spec.exponents
        wx, wy, _, sq, *_ = _grids_2d(f)
        return _mixed_norm(wx, wy, sq, p, q)
    if spec.kind is SpaceKind.LRLS:
        r, s = spec.exponents
        wx, wy, g, _, *_ = _grids_2d(f)
        return _mixed_norm(wx, wy, np.abs(g) ** 2, r, s)
    if spec.kind is SpaceKind.VMOHR:
        return _vmohr_norm(f, spec.exponents[0])
    raise ValueError(f"unknown kind {spec.kind}")


# ---------------------------------------------------------------------------
# Dense batch evaluators.  For bounded depths the cell decomposition is the
# uniform grid, and norms of many coefficient vectors at once reduce to a
# few BLAS calls.  Results agree with the adaptive path up to float
# association order.

_DENSE_1D_DEPTH_CAP = 9
_DENSE_2D_DEPTH_CAP = 4


def _cell_signs_1d(depth: int) -> np.ndarray:
    """Matrix of h values on the uniform cells of side 2^-(depth+1)."""
    order = space_index_order(1, depth)
    n_cells = 1 << (depth + 1)
    signs = np.zeros((len(order), n_cells))
    for row, idx in enumerate(order):
        l, p = idx.support.level, idx.support.position
        span = 1 << (depth + 1 - l)
        start = p * span
        signs[row, start:start + span // 2] = 1.0
        signs[row, start + span // 2:start + span] = -1.0
    return signs


class ComponentEvaluator:
    """Vectorized norm evaluation for coefficient vectors in index order."""

    def __init__(self, spec: SpaceSpec):
        self.spec = spec
        self.order = spec.index_order()
        self.n = len(self.order)
        d = spec.depth
        if spec.dim == 1:
            self.signs = _cell_signs_1d(d)
            self.sq_mask = self.signs * self.signs
            self.weights = np.full(1 << (d + 1), 2.0 ** (-(d + 1)))
            if spec.kind is SpaceKind.VMO:
                # containment weights: [J subset I] * |J| / |I|
                measures = np.array([idx.measure() for idx in self.order])
                contain = np.zeros((self.n, self.n))
                for i, cand in enumerate(self.order):
                    for j, idx in enumerate(self.order):
                        if cand.support.contains(idx.support):
                            contain[i, j] = measures[j] / measures[i]
                self.vmo_weights = contain
        else:
            nx = 1 << (d + 1)
            s1 = _cell_signs_1d(d)
            pos = _key_positions_cached(1, d)
            self.x_rows = np.array(
                [pos[(k[0], k[1])] for k in map(index_key, self.order)]
            )
            self.y_rows = np.array(
                [pos[(k[2], k[3])] for k in map(index_key, self.order)]
            )
            self.signs1 = s1
            self.sq1 = s1 * s1
            self.wx = np.full(nx, 2.0 ** (-(d + 1)))
            self.wy = self.wx
            self.nx = nx
            # flattened product-cell matrices: one row per rectangle index
            self.signs2 = np.einsum(
                "ix,iy->ixy", s1[self.x_rows], s1[self.y_rows]
            ).reshape(self.n, nx * nx)
            self.sq2 = self.signs2 * self.signs2
            if spec.kind is SpaceKind.VMOHR:
                order1 = space_index_order(1, d)
                self.x_cands = [
                    np.array([cand.support.contains(m.support) for m in order1])
                    for cand in order1
                ]
                cells = np.arange(nx)
                self.x_cand_cells = [
                    (cells >> (d + 1 - cand.support.level)) == cand.support.position
                    for cand in order1
                ]
                self.x_cand_measure = np.array([cand.measure() for cand in order1])

    # -- batched norms ------------------------------------------------

    def batch_norm(self, vectors: np.ndarray) -> np.ndarray:
        """Norms of each row of a (batch, n) coefficient array."""
        a = np.atleast_2d(np.asarray(vectors, dtype=float))
        kind = self.spec.kind
        if kind is SpaceKind.HP:
            p = self.spec.exponents[0]
            sq = (a * a) @ self.sq_mask
            return ((sq ** (p / 2.0)) @ self.weights) ** (1.0 / p)
        if kind is SpaceKind.LP:
            p = self.spec.exponents[0]
            g = a @ self.signs
            return ((np.abs(g) ** p) @ self.weights) ** (1.0 / p)
        if kind is SpaceKind.VMO:
            vals = (a * a) @ self.vmo_weights.T
            return np.sqrt(vals.max(axis=1, initial=0.0))
        if kind is SpaceKind.HPHQ:
            p, q = self.spec.exponents
            return self._mixed(a, p, q, squared=True)
        if kind is SpaceKind.LRLS:
            r, s = self.spec.exponents
            return self._mixed(a, r, s, squared=False)
        if kind is SpaceKind.VMOHR:
            return np.array([self._vmohr_single(row) for row in a])
        raise ValueError(f"unknown kind {kind}")

    def _mixed(self, a: np.ndarray, outer: float, inner: float,
               squared: bool) -> np.ndarray:
        nx = self.nx
        if squared:
            grid = ((a * a) @ self.sq2).reshape(a.shape[0], nx, nx)
        else:
            grid = (a @ self.signs2).reshape(a.shape[0], nx, nx)
            grid = grid * grid
        inner_int = (grid ** (inner / 2.0)) @ self.wy
        return ((inner_int ** (outer / inner)) @ self.wx) ** (1.0 / outer)

    def _vmohr_single(self, a: np.ndarray) -> float:
        r = self.spec.exponents[0]
        d = self.spec.depth
        order1 = space_index_order(1, d)
        n1 = len(order1)
        # coefficient matrix over (x index, y index)
        R = np.zeros((n1, n1))
        R[self.x_rows, self.y_rows] = a
        best = 0.0
        for ci in range(n1):
            keep = self.x_cands[ci]
            if not keep.any():
                continue
            Rk = np.where(keep[:, None], R, 0.0)
            B = self.signs1.T @ Rk  # (x cells, y index) signed slices
            sy = (B * B) @ self.sq1  # (x cells, y cells)
            inner = ((sy ** (r / 2.0)) @ self.wy) ** (2.0 / r)
            cells = self.x_cand_cells[ci]
            avg = float(self.wx[cells] @ inner[cells]) / self.x_cand_measure[ci]
            best = max(best, avg)
        return best ** 0.5


@lru_cache(maxsize=None)
def component_evaluator(spec: SpaceSpec) -> ComponentEvaluator | None:
    """Cached dense evaluator, or None when the depth exceeds the caps."""
    cap = _DENSE_1D_DEPTH_CAP if spec.dim == 1 else _DENSE_2D_DEPTH_CAP
    if spec.depth > cap:
        return None
    return ComponentEvaluator(spec)


@lru_cache(maxsize=None)
def _basis_norms_cached(spec: SpaceSpec) -> np.ndarray:
    order = spec.index_order()
    return np.array(
        [norm(spec, basis_expansion(spec.dim, spec.depth, index_key(idx)))
         for idx in order]
    )


def basis_norms(spec: SpaceSpec) -> np.ndarray:
    """Norms of the basis functions, in index order (read-only)."""
    out = _basis_norms_cached(spec)
    out.setflags(write=False)
    return out


def dual_basis_bounds(spec: SpaceSpec) -> np.ndarray:
    """Upper bounds for the dual-functional norms: 1 / basis norm.

    Valid for every catalog kind: coefficient read-off is dominated by
    the norm of the corresponding basis function (suppression bound for
    the quadratic kinds, Hoelder for the Lebesgue kinds).
    """
    return 1.0 / basis_norms(spec)

"""Finite truncations of the sup-normed sum of component spaces.

A truncation is an ordered list of component specs.  Global coordinates
interleave the components through the pairing bijection: the pair
(component k, within-space ordinal j) sits at the global rank of
``pair_encode(k, j)`` among all pairs that survive the truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dyadic import pair_encode
from .funcspace import (
    ComponentEvaluator,
    HaarExpansion,
    SpaceSpec,
    component_evaluator,
    dual_basis_bounds,
    index_key,
    space_spec_from_json,
)


@dataclass(frozen=True)
class ZTrunc:
    """An ordered, finite list of component spaces under the sup norm."""

    components: tuple[SpaceSpec, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("a truncation needs at least one component")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(spec.n_indices for spec in self.components)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def to_json(self) -> dict:
        return {"components": [spec.to_json() for spec in self.components]}

    @staticmethod
    def from_json(data: Mapping) -> "ZTrunc":
        return ZTrunc(
            tuple(space_spec_from_json(c) for c in data["components"])
        )


def ztrunc(*specs: SpaceSpec) -> ZTrunc:
    return ZTrunc(tuple(specs))


@lru_cache(maxsize=None)
def global_coords(trunc: ZTrunc) -> tuple[tuple[int, int], ...]:
    """All (component, ordinal) pairs in global enumeration order.

    Pairs whose ordinal exceeds the component dimension are skipped;
    relative order of the rest follows the pairing bijection.
    """
    pairs = [
        (pair_encode(k, j), k, j)
        for k, dim in enumerate(trunc.dims, start=1)
        for j in range(1, dim + 1)
    ]
    pairs.sort()
    return tuple((k, j) for _, k, j in pairs)


@lru_cache(maxsize=None)
def coord_positions(trunc: ZTrunc) -> dict:
    return {kj: i for i, kj in enumerate(global_coords(trunc))}


@lru_cache(maxsize=None)
def component_slices(trunc: ZTrunc) -> tuple[np.ndarray, ...]:
    """Per component: global positions of its ordinals 1..dim, in order."""
    pos = coord_positions(trunc)
    out = []
    for k, dim in enumerate(trunc.dims, start=1):
        arr = np.array([pos[(k, j)] for j in range(1, dim + 1)], dtype=np.intp)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def evaluators(trunc: ZTrunc) -> list[ComponentEvaluator]:
    evs = []
    for spec in trunc.components:
        ev = component_evaluator(spec)
        if ev is None:
            raise ValueError(
                f"component {spec.kind.value} depth {spec.depth} exceeds the "
                "dense evaluation caps; sum-space operations need bounded depth"
            )
        evs.append(ev)
    return evs


# ---------------------------------------------------------------------------
# Vectors and functionals


@dataclass
class ZVector:
    """An element of the truncated sum: one expansion per component."""

    trunc: ZTrunc
    parts: list[HaarExpansion]

    def __post_init__(self):
        if len(self.parts) != self.trunc.n_components:
            raise ValueError("part count must match component count")
        for spec, part in zip(self.trunc.components, self.parts):
            if part.dim != spec.dim:
                raise ValueError("part parameter count mismatch")
            if part.max_level() > spec.depth:
                raise ValueError("part support exceeds component depth")

    def support(self) -> set[int]:
        return {
            k
            for k, part in enumerate(self.parts, start=1)
            if part.support_keys()
        }

    def to_flat(self) -> np.ndarray:
        flat = np.zeros(self.trunc.total_dim)
        slices = component_slices(self.trunc)
        for k, (spec, part) in enumerate(zip(self.trunc.components, self.parts)):
            flat[slices[k]] = part.to_vector(spec.index_order())
        return flat

    @staticmethod
    def from_flat(trunc: ZTrunc, flat: np.ndarray) -> "ZVector":
        slices = component_slices(trunc)
        parts = []
        for k, spec in enumerate(trunc.components):
            parts.append(
                HaarExpansion.from_vector(spec.dim, spec.depth, flat[slices[k]])
            )
        return ZVector(trunc, parts)

    @staticmethod
    def zero(trunc: ZTrunc) -> "ZVector":
        return ZVector(
            trunc,
            [HaarExpansion(spec.dim, spec.depth, {}) for spec in trunc.components],
        )


def z_basis_vector(trunc: ZTrunc, k: int, j: int) -> ZVector:
    """The basis element at (component k, ordinal j), both 1-based."""
    v = ZVector.zero(trunc)
    spec = trunc.components[k - 1]
    key = index_key(spec.index_order()[j - 1])
    v.parts[k - 1] = HaarExpansion(spec.dim, spec.depth, {key: 1.0})
    return v


@dataclass
class ZFunctional:
    """A finitely supported functional: dual coefficients per component.

    The coefficient at (k, j) is the weight on the coordinate functional
    of the basis element (k, j); the action on a vector is the bilinear
    coefficient pairing.
    """

    trunc: ZTrunc
    parts: list[dict]

    def __post_init__(self):
        if len(self.parts) != self.trunc.n_components:
            raise ValueError("part count must match component count")

    def to_flat(self) -> np.ndarray:
        flat = np.zeros(self.trunc.total_dim)
        slices = component_slices(self.trunc)
        pos = {}
        for k, spec in enumerate(self.trunc.components):
            keypos = {index_key(idx): i for i, idx in enumerate(spec.index_order())}
            for key, c in self.parts[k].items():
                flat[slices[k][keypos[key]]] = c
        return flat

    @staticmethod
    def from_flat(trunc: ZTrunc, flat: np.ndarray) -> "ZFunctional":
        slices = component_slices(trunc)
        parts = []
        for k, spec in enumerate(trunc.components):
            part = {}
            comp = flat[slices[k]]
            for i, idx in enumerate(spec.index_order()):
                if comp[i] != 0.0:
                    part[index_key(idx)] = float(comp[i])
            parts.append(part)
        return ZFunctional(trunc, parts)

    @staticmethod
    def zero(trunc: ZTrunc) -> "ZFunctional":
        return ZFunctional(trunc, [{} for _ in trunc.components])


def z_basis_functional(trunc: ZTrunc, k: int, j: int) -> ZFunctional:
    zf = ZFunctional.zero(trunc)
    spec = trunc.components[k - 1]
    zf.parts[k - 1][index_key(spec.index_order()[j - 1])] = 1.0
    return zf


# ---------------------------------------------------------------------------
# Operations


def z_norm(trunc: ZTrunc, v: ZVector) -> float:
    """Sup over components of the component norm."""
    if v.trunc != trunc:
        raise ValueError("vector belongs to a different truncation")
    evs = evaluators(trunc)
    best = 0.0
    for spec, part, ev in zip(trunc.components, v.parts, evs):
        best = max(best, float(ev.batch_norm(part.to_vector(ev.order))[0]))
    return best


def z_norm_flat(trunc: ZTrunc, flat: np.ndarray) -> float:
    return float(batch_z_norms(trunc, flat[None, :])[0])


def batch_z_norms(trunc: ZTrunc, flats: np.ndarray) -> np.ndarray:
    """Sup-norms of each row of a (batch, total_dim) array."""
    flats = np.atleast_2d(flats)
    slices = component_slices(trunc)
    evs = evaluators(trunc)
    out = np.zeros(flats.shape[0])
    for k, ev in enumerate(evs):
        np.maximum(out, ev.batch_norm(flats[:, slices[k]]), out=out)
    return out


def project(trunc: ZTrunc, keep: Iterable[int], v: ZVector) -> ZVector:
    """Zero every component outside ``keep`` (1-based indices)."""
    keep = set(keep)
    parts = []
    for k, (spec, part) in enumerate(zip(trunc.components, v.parts), start=1):
        if k in keep:
            parts.append(part.copy())
        else:
            parts.append(HaarExpansion(spec.dim, spec.depth, {}))
    return ZVector(trunc, parts)


def pair(zf: ZFunctional, v: ZVector) -> float:
    """Bilinear action: sum over components of the coefficient pairing."""
    if zf.trunc != v.trunc:
        raise ValueError("functional and vector live on different truncations")
    total = 0.0
    for part_f, part_v in zip(zf.parts, v.parts):
        for key, c in part_f.items():
            a = part_v.coeffs.get(key, 0.0)
            if a:
                total += c * a
    return total


@lru_cache(maxsize=None)
def _dual_bounds_flat(trunc: ZTrunc) -> np.ndarray:
    """Upper bounds of the dual basis functionals, in global order."""
    slices = component_slices(trunc)
    out = np.zeros(trunc.total_dim)
    for k, spec in enumerate(trunc.components):
        out[slices[k]] = dual_basis_bounds(spec)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _ordinals_flat(trunc: ZTrunc) -> np.ndarray:
    """Within-component ordinal of each global coordinate."""
    out = np.array([j for _, j in global_coords(trunc)], dtype=np.intp)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _components_flat(trunc: ZTrunc) -> np.ndarray:
    out = np.array([k for k, _ in global_coords(trunc)], dtype=np.intp)
    out.setflags(write=False)
    return out


def dual_norm_upper_flat(trunc: ZTrunc, flat: np.ndarray) -> float:
    """Upper bound for the dual norm of a flat dual-coefficient vector:
    the weighted coefficient 1-norm over all components."""
    return float(np.abs(flat) @ _dual_bounds_flat(trunc))


def restricted_dual_norm_flat(
    trunc: ZTrunc, flat: np.ndarray, tail_starts: Sequence[int]
) -> float:
    """Vectorized form of restricted_dual_norm for flat coefficients."""
    starts = np.asarray(tail_starts, dtype=np.intp)
    keep = _ordinals_flat(trunc) >= starts[_components_flat(trunc) - 1]
    return float(np.abs(flat[keep]) @ _dual_bounds_flat(trunc)[keep])


def restricted_dual_norm(
    trunc: ZTrunc,
    zf: ZFunctional,
    tail_starts: Sequence[int],
) -> float:
    """Norm of the functional restricted to the sum of tail subspaces.

    The tail subspace of component k is the span of its basis elements
    with ordinal >= tail_starts[k-1].  The dual of a finite sup-normed
    sum is the 1-normed sum of the component duals, and each component
    dual norm is bounded above by the weighted coefficient 1-norm (the
    weight of a coordinate is the reciprocal basis norm).  The returned
    value is that upper bound; it vanishes exactly when the functional
    has no support on the tails.
    """
    if len(tail_starts) != trunc.n_components:
        raise ValueError("one tail start per component required")
    total = 0.0
    for k, (spec, part) in enumerate(zip(trunc.components, zf.parts)):
        bounds = dual_basis_bounds(spec)
        order = spec.index_order()
        keypos = {index_key(idx): i for i, idx in enumerate(order)}
        m = tail_starts[k]
        for key, c in part.items():
            if c and keypos[key] + 1 >= m:
                total += abs(c) * bounds[keypos[key]]
    return total


def restricted_dual_certified(
    trunc: ZTrunc,
    zf: ZFunctional,
    tail_starts: Sequence[int],
) -> float:
    """Certified lower bound for the restricted dual norm.

    Witnessed by the sup-normed vector whose component parts are the
    best single normalized basis elements inside each tail.
    """
    total = 0.0
    for k, (spec, part) in enumerate(zip(trunc.components, zf.parts)):
        bounds = dual_basis_bounds(spec)
        order = spec.index_order()
        keypos = {index_key(idx): i for i, idx in enumerate(order)}
        m = tail_starts[k]
        best = 0.0
        for key, c in part.items():
            if c and keypos[key] + 1 >= m:
                best = max(best, abs(c) * bounds[keypos[key]])
        total += best
    return total

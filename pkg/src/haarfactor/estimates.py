"""Block sequences, prefix norm inequalities, curvature profiling, and
tail-functional localization.

A block sequence here is a list of expansions with pairwise disjoint index
sets appearing consecutively in the fixed index order; the inequalities
compare prefix-sum norms against power means of the block norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .funcspace import (
    HaarExpansion,
    SpaceKind,
    SpaceSpec,
    component_evaluator,
    index_key,
    norm,
)
from .sumspace import ZFunctional, ZTrunc, restricted_dual_norm


@dataclass
class BlockSequence:
    """Consecutive, disjoint-spectrum expansions in one host space."""

    host: SpaceSpec
    blocks: list[HaarExpansion]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a block sequence needs at least one block")
        positions = {
            index_key(idx): i for i, idx in enumerate(self.host.index_order())
        }
        last_max = -1
        for b, block in enumerate(self.blocks):
            keys = block.support_keys()
            if not keys:
                raise ValueError(f"block {b} is empty")
            ords = sorted(positions[k] for k in keys)
            if ords[0] <= last_max:
                raise ValueError(
                    f"block {b} is not past its predecessor in the index order"
                )
            last_max = ords[-1]

    def __len__(self) -> int:
        return len(self.blocks)

    def coefficient_matrix(self) -> np.ndarray:
        order = self.host.index_order()
        return np.stack([b.to_vector(order) for b in self.blocks])


@dataclass
class EstimateReport:
    direction: str
    exponent: float
    constant: float
    prefix_norms: np.ndarray
    bounds: np.ndarray
    margins: np.ndarray

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min())

    @property
    def violating_prefix(self) -> Optional[int]:
        """1-based prefix length of the worst violation, if any."""
        if self.worst_margin >= 0:
            return None
        return int(np.argmin(self.margins)) + 1

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [
            (n + 1, float(v), float(b), float(m))
            for n, (v, b, m) in enumerate(
                zip(self.prefix_norms, self.bounds, self.margins)
            )
        ]


def _power_mean_tail(block_norms: np.ndarray, r: float) -> np.ndarray:
    """Prefix values of (sum of block norms^r)^(1/r); max for r = inf."""
    if math.isinf(r):
        return np.maximum.accumulate(block_norms)
    return np.cumsum(block_norms ** r) ** (1.0 / r)


def check_block_estimate(
    seq: BlockSequence, direction: str, exponent: float, constant: float
) -> EstimateReport:
    """Compare every prefix-sum norm against the power mean of block norms.

    direction "upper": prefix norm must not exceed constant * mean;
    direction "lower": prefix norm must not fall below constant * mean.
    Margins are signed so that negative means violated.
    """
    if direction not in ("upper", "lower"):
        raise ValueError(f"direction must be 'upper' or 'lower', got {direction}")
    if not (exponent >= 1):
        raise ValueError(f"exponent must be >= 1 or inf, got {exponent}")
    if constant <= 0:
        raise ValueError(f"constant must be positive, got {constant}")
    ev = component_evaluator(seq.host)
    coeffs = seq.coefficient_matrix()
    if ev is not None:
        block_norms = ev.batch_norm(coeffs)
        prefix_norms = ev.batch_norm(np.cumsum(coeffs, axis=0))
    else:
        block_norms = np.array([norm(seq.host, b) for b in seq.blocks])
        prefix_norms = np.array(
            [
                norm(
                    seq.host,
                    HaarExpansion.from_vector(
                        seq.host.dim, seq.host.depth, coeffs[: n + 1].sum(axis=0)
                    ),
                )
                for n in range(len(seq))
            ]
        )
    means = constant * _power_mean_tail(block_norms, exponent)
    if direction == "upper":
        margins = means - prefix_norms
    else:
        margins = prefix_norms - means
    return EstimateReport(
        direction, exponent, constant, prefix_norms, means, margins
    )


# ---------------------------------------------------------------------------
# Random block sequences


def random_blocks(
    spec: SpaceSpec,
    count: int,
    profile: str = "gaussian",
    seed: int = 0,
    block_size: Optional[int] = None,
    normalize: bool = True,
) -> BlockSequence:
    """Consecutive disjoint-spectrum blocks with profiled coefficients.

    Profiles: "flat" (all ones), "gaussian", "spike" (one dominant entry).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    order = spec.index_order()
    if block_size is None:
        block_size = max(1, len(order) // count)
    if count * block_size > len(order):
        raise ValueError(
            f"{count} blocks of {block_size} indices exceed the "
            f"{len(order)} indices available at depth {spec.depth}"
        )
    rng = np.random.default_rng(seed)
    blocks = []
    for b in range(count):
        chunk = order[b * block_size:(b + 1) * block_size]
        if profile == "flat":
            values = np.ones(len(chunk))
        elif profile == "gaussian":
            values = rng.standard_normal(len(chunk))
            if not np.any(values):
                values[0] = 1.0
        elif profile == "spike":
            values = 0.1 * rng.standard_normal(len(chunk))
            values[rng.integers(0, len(chunk))] = 5.0
        else:
            raise ValueError(f"unknown profile {profile!r}")
        coeffs = {index_key(idx): float(v) for idx, v in zip(chunk, values)}
        f = HaarExpansion(spec.dim, spec.depth, coeffs)
        if normalize:
            nf = norm(spec, f)
            f = f.scaled(1.0 / nf)
        blocks.append(f)
    return BlockSequence(spec, blocks)


# ---------------------------------------------------------------------------
# Curvature profiling


def _structured_sequences(spec: SpaceSpec, n_max: int) -> list[np.ndarray]:
    """Deterministic block families that stress the averaging envelope.

    Same-level singletons realize the disjoint-support extreme; full-level
    sign patterns realize the flat square-function extreme (only about
    depth-many of those exist, so that family is capped).
    """
    order = spec.index_order()
    positions = {index_key(idx): i for i, idx in enumerate(order)}
    out = []
    d = spec.depth
    if spec.dim == 1:
        if (1 << d) >= n_max:
            level = next(l for l in range(d + 1) if (1 << l) >= n_max)
            rows = np.zeros((n_max, len(order)))
            for j in range(n_max):
                rows[j, positions[(level, j)]] = 1.0
            out.append(rows)
        n_lev = min(n_max, d + 1)
        rows = np.zeros((n_lev, len(order)))
        for l in range(n_lev):
            for p in range(1 << l):
                rows[l, positions[(l, p)]] = 1.0
        out.append(rows)
    else:
        if (1 << (2 * d)) >= n_max:
            pairs = [
                (lx, ly) for lx in range(d + 1) for ly in range(d + 1)
                if (1 << (lx + ly)) >= n_max
            ]
            lx, ly = min(pairs, key=lambda t: (t[0] + t[1], t))
            rows = np.zeros((n_max, len(order)))
            for j in range(n_max):
                px, py = divmod(j, 1 << ly)
                rows[j, positions[(lx, px, ly, py)]] = 1.0
            out.append(rows)
        level_pairs = sorted(
            ((lx, ly) for lx in range(d + 1) for ly in range(d + 1)),
            key=lambda t: (max(t), t[0], t[1]),
        )
        n_lev = min(n_max, len(level_pairs))
        rows = np.zeros((n_lev, len(order)))
        for b, (lx, ly) in enumerate(level_pairs[:n_lev]):
            for px in range(1 << lx):
                for py in range(1 << ly):
                    rows[b, positions[(lx, px, ly, py)]] = 1.0
        out.append(rows)
    return out


def upper_estimate_exponent(spec: SpaceSpec) -> Optional[float]:
    """The exponent s for which blocks satisfy an upper s-estimate with
    constant 1: min(2, exponents) for the quadratic square-function kinds."""
    if spec.kind is SpaceKind.HP:
        return min(2.0, spec.exponents[0])
    if spec.kind is SpaceKind.HPHQ:
        return min(2.0, *spec.exponents)
    if spec.kind is SpaceKind.VMO:
        return 2.0
    return None


@dataclass
class ComponentDecay:
    component: int
    spec: SpaceSpec
    values: np.ndarray  # envelope of averaged prefix norms, index n-1
    alpha: float  # fitted decay exponent
    upper_s: Optional[float]

    def bound_margins(self) -> Optional[np.ndarray]:
        if self.upper_s is None:
            return None
        n = np.arange(1, len(self.values) + 1, dtype=float)
        return n ** (1.0 / self.upper_s - 1.0) - self.values


@dataclass
class CurvatureProfile:
    n_max: int
    per_component: list[ComponentDecay]
    values: np.ndarray  # sup over components
    alpha: float

    def rows(self) -> list[tuple[int, float]]:
        return [(n + 1, float(v)) for n, v in enumerate(self.values)]


def _fit_decay(values: np.ndarray) -> float:
    n = np.arange(1, len(values) + 1, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(np.log(n[keep]), np.log(values[keep]), 1)[0]
    return float(-slope)


def curvature_profile(
    trunc: ZTrunc, n_max: int, samples: int = 8, seed: int = 0
) -> CurvatureProfile:
    """Averaged prefix norms of sampled normalized block sequences.

    For each n the tabulated value is the largest observed norm of the
    n-term average; it is a sampled lower envelope of the true sup over
    all block sequences.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    per_component = []
    for k, spec in enumerate(trunc.components, start=1):
        if spec.n_indices < n_max:
            raise ValueError(
                f"component {k} cannot host {n_max} disjoint blocks"
            )
        ev = component_evaluator(spec)
        families = _structured_sequences(spec, n_max)
        for s in range(samples):
            try:
                seq = random_blocks(
                    spec, n_max, profile="gaussian", seed=seed + 1000 * k + s
                )
                families.append(seq.coefficient_matrix())
            except ValueError:
                break
        env = np.zeros(n_max)
        for rows in families:
            if ev is not None:
                norms = ev.batch_norm(rows)
                rows = rows / norms[:, None]
                prefix = ev.batch_norm(np.cumsum(rows, axis=0))
            else:
                norms = np.array(
                    [norm(spec, HaarExpansion.from_vector(spec.dim, spec.depth, r))
                     for r in rows]
                )
                rows = rows / norms[:, None]
                prefix = np.array(
                    [norm(spec, HaarExpansion.from_vector(
                        spec.dim, spec.depth, rows[: n + 1].sum(axis=0)))
                     for n in range(rows.shape[0])]
                )
            m = len(prefix)
            env[:m] = np.maximum(env[:m], prefix / np.arange(1, m + 1))
        per_component.append(
            ComponentDecay(k, spec, env, _fit_decay(env), upper_estimate_exponent(spec))
        )
    values = np.max([c.values for c in per_component], axis=0)
    return CurvatureProfile(n_max, per_component, values, _fit_decay(values))


# ---------------------------------------------------------------------------
# Tail localization of functionals


def tail_profile(
    trunc: ZTrunc, zf: ZFunctional, eta: float
) -> list[int]:
    """Smallest per-component tail starts with restricted dual norm <= eta.

    Greedy monotone search: while the bound exceeds eta, advance the tail
    of the component contributing most.  Full exhaustion sends the bound
    to zero, so the search terminates.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    K = trunc.n_components
    tails = [1] * K
    while restricted_dual_norm(trunc, zf, tails) > eta:
        contributions = []
        for k in range(K):
            single = [
                trunc.dims[i] + 1 if i != k else tails[i] for i in range(K)
            ]
            contributions.append(restricted_dual_norm(trunc, zf, single))
        k = int(np.argmax(contributions))
        tails[k] += 1
    return tails

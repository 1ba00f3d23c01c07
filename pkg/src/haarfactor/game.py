"""The reproduction game: adversary strategy, faithful-copy builder, sign
selection, transcripts, and the end-to-end factorization pipeline.

Two branches are supported.  In the "restricted-sum" branch the adversary
constrains each turn through annihilators of everything played so far and
the pipeline finally passes to a subfamily of components chosen greedily.
In the "future-tails" branch the adversary instead advances a nested chain
of per-component tail subspaces and the copy is forced ever deeper.

Level allocation is a shared protocol convention: when the ambient depth
allows one fresh level per reproduced node, tails can be advanced past
every past spectrum exactly; otherwise nodes of equal tree depth share a
level and the tail-chain margins are reported rather than forced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .blocks import (
    Block,
    BlockSystem,
    ConditionLedger,
    FactorizationCertificate,
    assemble_factorization,
    build_D,
    verify_conditions,
)
from .dyadic import rect_ordinal, DyadicInterval, DyadicRect
from .funcspace import SpaceSpec, index_key
from .operators import (
    OperatorZ,
    diagonal_delta,
    diagonal_factorization,
    operator_norm_bounds,
    select_gamma,
)
from .sumspace import (
    ZTrunc,
    batch_z_norms,
    component_slices,
    dual_norm_upper_flat,
    global_coords,
    restricted_dual_norm_flat,
    z_norm_flat,
)

BRANCH_RESTRICTED_SUM = "restricted-sum"
BRANCH_FUTURE_TAILS = "future-tails"

TRANSCRIPT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class GameConfig:
    big: ZTrunc
    small: ZTrunc
    eta: float
    branch: str = BRANCH_FUTURE_TAILS
    seed: int = 0
    norm_slack: float = 2.0
    c_target: float = 1.0
    strict_tolerances: bool = False

    def __post_init__(self):
        if not (0 < self.eta <= 1):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.branch not in (BRANCH_RESTRICTED_SUM, BRANCH_FUTURE_TAILS):
            raise ValueError(f"unknown branch {self.branch!r}")
        if self.big.n_components != self.small.n_components:
            raise ValueError("component counts must match")
        for k, (b, s) in enumerate(
            zip(self.big.components, self.small.components), start=1
        ):
            if b.kind != s.kind or b.exponents != s.exponents:
                raise ValueError(f"component {k}: kinds must match")
            if b.depth < s.depth + 1:
                raise ValueError(
                    f"component {k}: ambient depth {b.depth} leaves no room "
                    f"beyond the reproduced depth {s.depth}"
                )

    def to_json(self) -> dict:
        return {
            "big": self.big.to_json(),
            "small": self.small.to_json(),
            "eta": self.eta,
            "branch": self.branch,
            "seed": self.seed,
            "norm_slack": self.norm_slack,
            "c_target": self.c_target,
            "strict_tolerances": self.strict_tolerances,
        }

    @staticmethod
    def from_json(data) -> "GameConfig":
        return GameConfig(
            big=ZTrunc.from_json(data["big"]),
            small=ZTrunc.from_json(data["small"]),
            eta=float(data["eta"]),
            branch=data["branch"],
            seed=int(data["seed"]),
            norm_slack=float(data.get("norm_slack", 2.0)),
            c_target=float(data.get("c_target", 1.0)),
            strict_tolerances=bool(data.get("strict_tolerances", False)),
        )


class GameAbort(RuntimeError):
    """Raised when a strategy cannot move within the ambient capacity."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Level allocation (shared protocol convention)


def _node_levels_1d(ordinal: int) -> int:
    return ordinal.bit_length() - 1


@dataclass(frozen=True)
class HostAllocation:
    """Per reproduced node of one host: the family level (pair)."""

    mode: str  # "fresh" or "shared"
    levels: tuple  # 1d: levels[j-1] = level; 2d: levels[j-1] = (lx, ly)
    dim: int

    def level_of(self, j: int):
        return self.levels[j - 1]

    def first_ordinal(self, j: int) -> int:
        """Smallest within-host ordinal of an index at node j's level."""
        if self.dim == 1:
            return 1 << self.levels[j - 1]
        lx, ly = self.levels[j - 1]
        return rect_ordinal(
            DyadicRect(DyadicInterval(lx, 0), DyadicInterval(ly, 0))
        )


def allocate_host_levels(big_spec: SpaceSpec, small_spec: SpaceSpec) -> HostAllocation:
    """Choose family levels for every reproduced node of one host.

    Fresh mode (one level / level pair per node, strictly increasing in
    the enumeration order) is preferred whenever ambient depth allows it;
    otherwise nodes of equal tree depth share the default level.
    """
    db, ds = big_spec.depth, small_spec.depth
    order = small_spec.index_order()
    if big_spec.dim == 1:
        n_nodes = len(order)
        if n_nodes <= db:
            base = db - n_nodes + 1
            return HostAllocation(
                "fresh", tuple(base + j for j in range(n_nodes)), 1
            )
        base = db - ds
        return HostAllocation(
            "shared",
            tuple(base + _node_levels_1d(idx.ordinal) for idx in order),
            1,
        )
    # two parameters: try strictly increasing level pairs
    pairs = sorted(
        ((a, b) for a in range(1, db + 1) for b in range(1, db + 1)),
        key=lambda t: (max(t), t[0], t[1]),
    )
    fresh: list[tuple[int, int]] = []
    pos = 0
    ok = True
    for idx in order:
        kx = index_key(idx)
        need_x = kx[0] + 1  # region resolution grows along the tree
        need_y = kx[2] + 1
        while pos < len(pairs) and not (
            pairs[pos][0] >= need_x and pairs[pos][1] >= need_y
        ):
            pos += 1
        if pos >= len(pairs):
            ok = False
            break
        fresh.append(pairs[pos])
        pos += 1
    if ok:
        return HostAllocation("fresh", tuple(fresh), 2)
    bx = by = db - ds
    shared = tuple(
        (bx + index_key(idx)[0], by + index_key(idx)[2]) for idx in order
    )
    return HostAllocation("shared", shared, 2)


def allocate_levels(config: GameConfig) -> list[HostAllocation]:
    return [
        allocate_host_levels(b, s)
        for b, s in zip(config.big.components, config.small.components)
    ]


# ---------------------------------------------------------------------------
# Regions: disjoint unions of dyadic intervals, one per tree node and axis


def region_subdivide(region: Sequence[tuple[int, int]], level: int) -> list:
    """All level-`level` dyadic intervals inside the region, in position order."""
    out = []
    for l, p in region:
        if l > level:
            raise ValueError("region is finer than the requested level")
        span = 1 << (level - l)
        out.extend((level, p * span + t) for t in range(span))
    out.sort(key=lambda k: k[1])
    return out


def region_measure(region: Sequence[tuple[int, int]]) -> float:
    return float(sum(2.0 ** (-l) for l, _ in region))


def signed_split(
    family: Sequence[tuple[int, int]], signs: Sequence[float]
) -> tuple[list, list]:
    """Positive and negative parts of a signed family of intervals."""
    plus, minus = [], []
    for (l, p), s in zip(family, signs):
        left, right = (l + 1, 2 * p), (l + 1, 2 * p + 1)
        if s > 0:
            plus.append(left)
            minus.append(right)
        else:
            plus.append(right)
            minus.append(left)
    return plus, minus


def halves_split(family: Sequence[tuple[int, int]]) -> tuple[list, list]:
    """Left and right halves, ignoring signs (used on the product axes)."""
    left = [(l + 1, 2 * p) for l, p in family]
    right = [(l + 1, 2 * p + 1) for l, p in family]
    return left, right


# ---------------------------------------------------------------------------
# Sign classes and monochromatic selection


def sign_classes(T: OperatorZ) -> np.ndarray:
    """Class of every ambient coordinate: +1 where the diagonal entry is
    positive, -1 where negative (pregame declaration, public to both)."""
    return np.sign(np.diag(T.matrix))


def majority_subfamily(
    family: Sequence[tuple[int, int]], classes: Sequence[float]
) -> tuple[list, int]:
    """Largest single-class subfamily of a 1d family (ties prefer +1)."""
    plus = [f for f, c in zip(family, classes) if c > 0]
    minus = [f for f, c in zip(family, classes) if c < 0]
    if len(plus) >= len(minus):
        return plus, 1
    return minus, 2


def monochromatic_product(
    x_family: Sequence[tuple[int, int]],
    y_family: Sequence[tuple[int, int]],
    class_matrix: np.ndarray,
) -> tuple[list, list, int]:
    """Largest single-class product subfamily of a product family.

    Exhausts subsets of the smaller axis (capped), maximizing the number
    of surviving cells; ties prefer class +1 and earlier subsets.
    """
    nx, ny = len(x_family), len(y_family)
    transpose = nx < ny
    C = class_matrix.T if transpose else class_matrix
    cols = C.shape[1]
    best = (0, 1, None, None)  # (-size is implicit via >), class, rows, colmask
    cap = min(cols, 12)
    for mask in range(1, 1 << cap):
        sel = [c for c in range(cap) if mask >> c & 1]
        for cls in (1.0, -1.0):
            rows = np.all(C[:, sel] == cls, axis=1)
            size = int(rows.sum()) * len(sel)
            if size > best[0]:
                best = (size, 1 if cls > 0 else 2, rows, sel)
    size, cls, rows, sel = best
    if size == 0:
        raise GameAbort("copy", "no single-class product subfamily exists")
    if transpose:
        keep_y = [y_family[i] for i in range(ny) if rows[i]]
        keep_x = [x_family[c] for c in sel]
    else:
        keep_x = [x_family[i] for i in range(nx) if rows[i]]
        keep_y = [y_family[c] for c in sel]
    return keep_x, keep_y, cls


# ---------------------------------------------------------------------------
# Sign selection


def sign_selection(
    T: OperatorZ,
    host: int,
    ordinals: Sequence[int],
    lams: np.ndarray,
    mus: np.ndarray,
    delta: float,
    eta: float,
    exhaustive_limit: int = 20,
) -> np.ndarray:
    """Choose signs making the compressed value beat (1 - eta) * delta.

    The mean of the value over independent uniform signs equals the
    weighted diagonal sum, which exceeds (1 - eta) * delta when the
    entries share a sign class and the weights pair to more than 1 - eta.
    Exhaustive search maximizes the absolute value for small index sets;
    beyond the limit a conditional-expectation walk fixes one sign at a
    time without letting the conditional mean drop.
    """
    cols = component_slices(T.domain)[host - 1][np.array(ordinals) - 1]
    sub = T.matrix[np.ix_(cols, cols)]
    d = np.diag(sub)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("diagonal entries over the block must share a sign")
    M = np.outer(mus, lams) * sub  # value(eps) = eps^T M eps
    mean = float(np.sum(mus * lams * d))
    if not abs(mean) > delta * (1.0 - eta):
        raise ValueError(
            f"weighted diagonal sum {mean} does not clear "
            f"(1 - eta) * delta = {delta * (1 - eta)}"
        )
    m = len(ordinals)
    if m <= exhaustive_limit:
        best_val, best_signs = -1.0, None
        total = 1 << m
        chunk = 1 << min(m, 16)
        for start in range(0, total, chunk):
            count = min(chunk, total - start)
            patt = ((np.arange(start, start + count)[:, None] >>
                     np.arange(m)[None, :]) & 1) * 2.0 - 1.0
            vals = np.abs(np.einsum("si,ij,sj->s", patt, M, patt))
            b = int(np.argmax(vals))
            if vals[b] > best_val:
                best_val = float(vals[b])
                best_signs = patt[b]
        return best_signs
    # conditional-expectation walk: over uniform free signs the mean of the
    # value is trace(M) plus the quadratic form of the already fixed signs,
    # so fixing each sign to keep the cross term aligned never drops it
    target = 1.0 if mean > 0 else -1.0
    signs = np.zeros(m)
    sym = M + M.T
    for i in range(m):
        fixed = np.nonzero(signs)[0]
        cross = float(signs[fixed] @ sym[fixed, i]) if fixed.size else 0.0
        signs[i] = 1.0 if target * cross >= 0 else -1.0
    return signs


def sign_pattern_mean(
    T: OperatorZ, host: int, ordinals: Sequence[int],
    lams: np.ndarray, mus: np.ndarray,
) -> float:
    """The exact mean of the compressed value over uniform signs."""
    cols = component_slices(T.domain)[host - 1][np.array(ordinals) - 1]
    sub = T.matrix[np.ix_(cols, cols)]
    return float(np.sum(mus * lams * np.diag(sub)))


# ---------------------------------------------------------------------------
# Moves and transcripts


@dataclass
class PlayerIMove:
    turn: int
    host: int
    node: int
    eta_n: float
    l_n: int
    annihilate_rows: np.ndarray  # constraint vectors, flat, one per row
    annihilate_norms: np.ndarray
    functional_rows: Optional[np.ndarray]  # restricted-sum: functionals to escape
    functional_norm_bounds: Optional[np.ndarray]
    tail_starts: Optional[tuple[int, ...]]  # future-tails: chain at this turn
    tail_margins: Optional[list]


@dataclass
class PlayerIIMove:
    i_class: int
    ordinals: tuple[int, ...]
    lams: np.ndarray
    mus: np.ndarray
    family_keys: list
    level: object  # int or (lx, ly)


@dataclass
class TurnRecord:
    turn: int
    host: int
    node: int
    i_class: int
    eta_n: float
    l_n: int
    level: object
    ordinals: tuple[int, ...]
    lams: list[float]
    mus: list[float]
    signs: list[float]
    tail_starts: Optional[list[int]]
    compressed_value: float

    def to_json(self) -> dict:
        return {
            "turn": self.turn,
            "host": self.host,
            "node": self.node,
            "i_class": self.i_class,
            "eta_n": self.eta_n,
            "l_n": self.l_n,
            "level": list(self.level) if isinstance(self.level, tuple) else self.level,
            "ordinals": list(self.ordinals),
            "lams": self.lams,
            "mus": self.mus,
            "signs": self.signs,
            "tail_starts": self.tail_starts,
            "compressed_value": self.compressed_value,
        }


@dataclass
class Transcript:
    schema_version: int
    config: GameConfig
    turns: list[TurnRecord]
    postgame: dict

    def to_json(self) -> dict:
        from .reports import jsonable

        return jsonable(
            {
                "schema_version": self.schema_version,
                "config": self.config.to_json(),
                "turns": [t.to_json() for t in self.turns],
                "postgame": self.postgame,
            }
        )

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    @staticmethod
    def from_json(data) -> "Transcript":
        turns = [
            TurnRecord(
                turn=t["turn"],
                host=t["host"],
                node=t["node"],
                i_class=t["i_class"],
                eta_n=t["eta_n"],
                l_n=t["l_n"],
                level=tuple(t["level"]) if isinstance(t["level"], list) else t["level"],
                ordinals=tuple(t["ordinals"]),
                lams=t["lams"],
                mus=t["mus"],
                signs=t["signs"],
                tail_starts=t["tail_starts"],
                compressed_value=t["compressed_value"],
            )
            for t in data["turns"]
        ]
        return Transcript(
            schema_version=data["schema_version"],
            config=GameConfig.from_json(data["config"]),
            turns=turns,
            postgame=data["postgame"],
        )


def block_system_from_transcript(transcript: Transcript) -> BlockSystem:
    cfg = transcript.config
    blocks = []
    for t in transcript.turns:
        blocks.append(
            Block(
                t.host,
                t.ordinals,
                np.array(t.lams),
                np.array(t.mus),
                np.array(t.signs),
            )
        )
    return BlockSystem(cfg.big, cfg.small, blocks)


# ---------------------------------------------------------------------------
# Game state shared by the engine and the strategies


@dataclass
class GameState:
    config: GameConfig
    allocations: list[HostAllocation]
    blocks: list[Block] = field(default_factory=list)
    vec_rows: list[np.ndarray] = field(default_factory=list)
    fun_rows: list[np.ndarray] = field(default_factory=list)
    records: list[TurnRecord] = field(default_factory=list)
    chains: list[tuple[int, ...]] = field(default_factory=list)
    host_max_ordinal: dict = field(default_factory=dict)

    def coords(self):
        return global_coords(self.config.small)

    def host_turns(self, host: int) -> list[int]:
        """Turn numbers (1-based) handled by a host, in order."""
        return [
            n for n, (k, _) in enumerate(self.coords(), start=1) if k == host
        ]

    def next_host_node(self, host: int, turn: int) -> Optional[int]:
        """Node ordinal of the next turn >= turn hosted by a component."""
        for n, (k, j) in enumerate(self.coords(), start=1):
            if n >= turn and k == host:
                return j
        return None


# ---------------------------------------------------------------------------
# Player I: the adversary


class AdversaryStrategy:
    """Constrains each turn by annihilators of the play so far, advances
    the tail chain in the future-tails branch, and picks worst-case signs."""

    def __init__(self, T: OperatorZ, config: GameConfig,
                 allocations: Optional[list[HostAllocation]] = None):
        if T.domain != config.big or T.codomain != config.big:
            raise ValueError("operator must act on the ambient truncation")
        self.T = T
        self.config = config
        self.allocations = allocations or allocate_levels(config)
        self.delta = diagonal_delta(T)
        if self.delta <= 0:
            raise ValueError("the operator needs a large diagonal")
        self.classes = sign_classes(T)
        bounds = operator_norm_bounds(T, trials=2, seed=config.seed)
        self.norm_proxy = bounds.certified_lower * config.norm_slack
        self.chain = tuple(1 for _ in config.big.components)

    def declared_classes(self) -> np.ndarray:
        """The pregame partition, public to both players."""
        return self.classes

    def eta_n(self, n: int) -> float:
        cfg = self.config
        bound = cfg.eta / (
            2.0 ** (n + 2) * n * (1.0 + self.norm_proxy)
            * np.sqrt(cfg.c_target + cfg.eta)
        )
        return 0.5 * bound

    def _retired_ordinal(self, state: GameState, host: int, node: int) -> int:
        alloc = self.allocations[host - 1]
        dim = self.config.big.dims[host - 1]
        return min(alloc.first_ordinal(node) - 1, dim)

    def _chain_caps(self, state: GameState, turn: int) -> list[int]:
        caps = []
        for k in range(1, self.config.big.n_components + 1):
            node = state.next_host_node(k, turn)
            if node is None:
                caps.append(self.config.big.dims[k - 1] + 1)
            else:
                caps.append(self.allocations[k - 1].first_ordinal(node))
        return caps

    def move(self, state: GameState, turn: int, host: int, node: int) -> PlayerIMove:
        eta_n = self.eta_n(turn)
        l_n = self._retired_ordinal(state, host, node)
        tail_starts = None
        tail_margins = None
        if self.config.branch == BRANCH_FUTURE_TAILS:
            caps = self._chain_caps(state, turn)
            new_chain = []
            for k in range(1, self.config.big.n_components + 1):
                cleared = state.host_max_ordinal.get(k, 0) + 1
                new_chain.append(
                    max(self.chain[k - 1], min(caps[k - 1], cleared))
                )
            self.chain = tuple(new_chain)
            tail_starts = self.chain
            tail_margins = []
            for j, fun_row in enumerate(state.fun_rows):
                value = restricted_dual_norm_flat(
                    self.config.big, self.T.matrix.T @ fun_row, tail_starts
                )
                tail_margins.append({"past_turn": j + 1, "value": value,
                                     "bound": eta_n})
                if self.config.strict_tolerances and value > eta_n:
                    raise GameAbort(
                        "tail-chain",
                        f"turn {turn}: restricted adjoint norm {value} "
                        f"exceeds {eta_n} at full capacity",
                    )
        return PlayerIMove(
            turn=turn,
            host=host,
            node=node,
            eta_n=eta_n,
            l_n=l_n,
            annihilate_rows=None,
            annihilate_norms=None,
            functional_rows=None,
            functional_norm_bounds=None,
            tail_starts=tail_starts,
            tail_margins=tail_margins,
        )

    def choose_signs(self, state: GameState, turn: int, host: int,
                     node: int, m2: PlayerIIMove) -> np.ndarray:
        return sign_selection(
            self.T,
            host,
            m2.ordinals,
            m2.lams,
            m2.mus,
            self.delta,
            self.config.eta,
        )


# ---------------------------------------------------------------------------
# Player II: the faithful-copy builder


class FaithfulCopyStrategy:
    """Builds a measure-split copy of the reproduced system.

    Each node owns a support region (a disjoint union of dyadic
    intervals per axis); its family is the subdivision of the region at
    the allocated level, thinned to a single pregame sign class.  Child
    regions follow the realized signs on one-parameter hosts and the
    left/right convention per axis on two-parameter hosts.
    """

    def __init__(self, config: GameConfig,
                 allocations: Optional[list[HostAllocation]] = None,
                 classes: Optional[np.ndarray] = None):
        self.config = config
        self.allocations = allocations or allocate_levels(config)
        self.classes = classes
        self.regions_1d: dict = {}
        self.x_regions: dict = {}
        self.y_regions: dict = {}
        self.x_first: dict = {}
        self.y_first: dict = {}
        self.pending: dict = {}

    def _class_of(self, host: int, ordinals: Sequence[int]) -> np.ndarray:
        if self.classes is None:
            return np.ones(len(ordinals))
        sl = component_slices(self.config.big)[host - 1]
        return self.classes[sl[np.array(ordinals) - 1]]

    def move(self, state: GameState, turn: int, host: int, node: int,
             m1: PlayerIMove) -> PlayerIIMove:
        spec = self.config.big.components[host - 1]
        alloc = self.allocations[host - 1]
        level = alloc.level_of(node)
        if spec.dim == 1:
            return self._move_1d(host, node, m1, level, spec)
        return self._move_2d(host, node, m1, level, spec)

    def _require_clearance(self, m1: PlayerIMove, host: int, first: int):
        needed = m1.l_n + 1
        if m1.tail_starts is not None:
            needed = max(needed, m1.tail_starts[host - 1])
        if first < needed and self.config.strict_tolerances:
            raise GameAbort(
                "copy",
                f"turn {m1.turn}: family start {first} cannot clear the "
                f"required ordinal {needed}",
            )

    def _move_1d(self, host, node, m1, level, spec) -> PlayerIIMove:
        region = self.regions_1d.get((host, node), [(0, 0)])
        if level > spec.depth:
            raise GameAbort(
                "copy", f"turn {m1.turn}: level {level} exceeds depth {spec.depth}"
            )
        family = region_subdivide(region, level)
        ordinals = [(1 << l) + p for l, p in family]
        self._require_clearance(m1, host, min(ordinals))
        keep, i_class = majority_subfamily(family, self._class_of(host, ordinals))
        if not keep:
            raise GameAbort("copy", f"turn {m1.turn}: family has no usable class")
        total = region_measure(keep)
        mus = np.array([2.0 ** (-l) / total for l, _ in keep])
        self.pending[(host, node)] = keep
        return PlayerIIMove(
            i_class=i_class,
            ordinals=tuple((1 << l) + p for l, p in keep),
            lams=np.ones(len(keep)),
            mus=mus,
            family_keys=list(keep),
            level=level,
        )

    def _move_2d(self, host, node, m1, level, spec) -> PlayerIIMove:
        lx, ly = level
        if max(lx, ly) > spec.depth:
            raise GameAbort(
                "copy",
                f"turn {m1.turn}: level pair {level} exceeds depth {spec.depth}",
            )
        order = spec.index_order()
        key = index_key(order[node - 1])
        jx = (1 << key[0]) + key[1]
        jy = (1 << key[2]) + key[3]
        x_region = self.x_regions.get((host, jx), [(0, 0)])
        y_region = self.y_regions.get((host, jy), [(0, 0)])
        x_family = region_subdivide(x_region, lx)
        y_family = region_subdivide(y_region, ly)
        rect_keys = [
            (xl, xp, yl, yp) for xl, xp in x_family for yl, yp in y_family
        ]
        ordinals = [
            rect_ordinal(
                DyadicRect(DyadicInterval(xl, xp), DyadicInterval(yl, yp))
            )
            for (xl, xp, yl, yp) in rect_keys
        ]
        self._require_clearance(m1, host, min(ordinals))
        classes = self._class_of(host, ordinals).reshape(
            len(x_family), len(y_family)
        )
        keep_x, keep_y, i_class = monochromatic_product(
            x_family, y_family, classes
        )
        keep = [(xl, xp, yl, yp) for xl, xp in keep_x for yl, yp in keep_y]
        total = sum(2.0 ** (-(xl + yl)) for xl, _, yl, _ in keep)
        mus = np.array([2.0 ** (-(xl + yl)) / total for xl, _, yl, _ in keep])
        if (host, jx) not in self.x_first:
            self.x_first[(host, jx)] = x_family
            left, right = halves_split(x_family)
            self.x_regions[(host, 2 * jx)] = left
            self.x_regions[(host, 2 * jx + 1)] = right
        if (host, jy) not in self.y_first:
            self.y_first[(host, jy)] = y_family
            left, right = halves_split(y_family)
            self.y_regions[(host, 2 * jy)] = left
            self.y_regions[(host, 2 * jy + 1)] = right
        return PlayerIIMove(
            i_class=i_class,
            ordinals=tuple(
                rect_ordinal(
                    DyadicRect(DyadicInterval(xl, xp), DyadicInterval(yl, yp))
                )
                for (xl, xp, yl, yp) in keep
            ),
            lams=np.ones(len(keep)),
            mus=mus,
            family_keys=keep,
            level=level,
        )

    def observe_signs(self, turn: int, host: int, node: int,
                      m2: PlayerIIMove, signs: np.ndarray):
        spec = self.config.big.components[host - 1]
        if spec.dim != 1:
            return
        family = self.pending.pop((host, node))
        plus, minus = signed_split(family, signs)
        small_dim = self.config.small.dims[host - 1]
        if 2 * node <= small_dim:
            self.regions_1d[(host, 2 * node)] = plus
        if 2 * node + 1 <= small_dim:
            self.regions_1d[(host, 2 * node + 1)] = minus


# ---------------------------------------------------------------------------
# Engine


def run_game(
    T: OperatorZ,
    config: GameConfig,
    adversary: Optional[AdversaryStrategy] = None,
    copier: Optional[FaithfulCopyStrategy] = None,
) -> tuple[Transcript, BlockSystem]:
    """Play all turns in enumeration order and verify the outcome.

    Returns the replayable transcript and the produced block system.  A
    strategy abort propagates as GameAbort carrying the stage name.
    """
    allocations = allocate_levels(config)
    if adversary is None:
        adversary = AdversaryStrategy(T, config, allocations)
    if copier is None:
        copier = FaithfulCopyStrategy(
            config, allocations, adversary.declared_classes()
        )
    state = GameState(config, allocations)
    slices = component_slices(config.big)
    for turn, (host, node) in enumerate(state.coords(), start=1):
        m1 = adversary.move(state, turn, host, node)
        m2 = copier.move(state, turn, host, node, m1)
        signs = adversary.choose_signs(state, turn, host, node, m2)
        copier.observe_signs(turn, host, node, m2, signs)
        block = Block(host, m2.ordinals, m2.lams, m2.mus, signs)
        cols = slices[host - 1][np.array(block.ordinals) - 1]
        x_flat = np.zeros(config.big.total_dim)
        x_flat[cols] = block.signs * block.lams
        f_flat = np.zeros(config.big.total_dim)
        f_flat[cols] = block.signs * block.mus
        value = float(f_flat @ T.matrix @ x_flat)
        if abs(value) <= (1.0 - config.eta) * adversary.delta:
            raise GameAbort(
                "signs",
                f"turn {turn}: compressed value {value} fails the "
                f"(1 - eta) * delta threshold",
            )
        state.blocks.append(block)
        state.vec_rows.append(x_flat)
        state.fun_rows.append(f_flat)
        state.chains.append(m1.tail_starts)
        prev = state.host_max_ordinal.get(host, 0)
        state.host_max_ordinal[host] = max(prev, max(block.ordinals))
        state.records.append(
            TurnRecord(
                turn=turn,
                host=host,
                node=node,
                i_class=m2.i_class,
                eta_n=m1.eta_n,
                l_n=m1.l_n,
                level=m2.level,
                ordinals=block.ordinals,
                lams=[float(x) for x in block.lams],
                mus=[float(x) for x in block.mus],
                signs=[float(x) for x in block.signs],
                tail_starts=list(m1.tail_starts) if m1.tail_starts else None,
                compressed_value=value,
            )
        )
    bs = BlockSystem(config.big, config.small, state.blocks)
    postgame = postgame_verification(T, config, state, bs)
    transcript = Transcript(
        TRANSCRIPT_SCHEMA_VERSION, config, state.records, postgame
    )
    if config.strict_tolerances:
        for entry in postgame["annihilator_distances"]:
            if entry["value"] >= entry["bound"]:
                raise GameAbort(
                    "postgame",
                    f"turn {entry['turn']}: distance {entry['value']} "
                    f"exceeds {entry['bound']}",
                )
    return transcript, bs


def _constraint_rows(
    T: OperatorZ, state: GameState, turn: int, host: int, l_n: int,
    dual: bool,
) -> np.ndarray:
    """The annihilator family of a turn: past blocks, their images, and
    the retired basis prefix with its images (dual variant for the
    escape subspaces of the restricted-sum branch)."""
    big = state.config.big
    rows = []
    for m in range(turn - 1):
        if dual:
            rows.append(state.fun_rows[m])
            rows.append(T.matrix.T @ state.fun_rows[m])
        else:
            rows.append(state.vec_rows[m])
            rows.append(T.matrix @ state.vec_rows[m])
    sl = component_slices(big)[host - 1]
    for i in range(min(l_n, len(sl))):
        e = np.zeros(big.total_dim)
        e[sl[i]] = 1.0
        if dual:
            rows.append(e)
            rows.append(T.matrix.T @ e)
        else:
            rows.append(e)
            rows.append(T.matrix @ e)
    if not rows:
        return np.zeros((0, big.total_dim))
    return np.stack(rows)


def postgame_verification(
    T: OperatorZ, config: GameConfig, state: GameState, bs: BlockSystem
) -> dict:
    """Exact pairing checks of everything the finished game promised."""
    from .blocks import equivalence_constant

    big = config.big
    slices = component_slices(big)
    classes = sign_classes(T)
    results: dict = {
        "pairing_weights": [],
        "class_consistency": [],
        "annihilator_distances": [],
        "escape_distances": [],
        "past_interaction_bounds": [],
        "compressed_floor": [],
        "equivalence": {},
    }
    delta = diagonal_delta(T)
    for n, (rec, block) in enumerate(zip(state.records, bs.blocks), start=1):
        w = block.pairing_weight()
        results["pairing_weights"].append(
            {"turn": n, "value": w, "ok": bool(1 - config.eta < w < 1 + config.eta)}
        )
        cls = classes[slices[block.host - 1][np.array(block.ordinals) - 1]]
        expected = 1.0 if rec.i_class == 1 else -1.0
        results["class_consistency"].append(
            {"turn": n, "ok": bool(np.all(cls == expected))}
        )
        results["compressed_floor"].append(
            {
                "turn": n,
                "value": abs(rec.compressed_value),
                "bound": (1 - config.eta) * delta,
                "ok": bool(abs(rec.compressed_value) > (1 - config.eta) * delta),
            }
        )
        rows = _constraint_rows(T, state, n, block.host, rec.l_n, dual=False)
        if rows.shape[0]:
            norms = batch_z_norms(big, rows)
            values = np.abs(rows @ state.fun_rows[n - 1])
            keep = norms > 0
            dist = float(np.max(values[keep] / norms[keep])) if keep.any() else 0.0
        else:
            dist = 0.0
        results["annihilator_distances"].append(
            {"turn": n, "value": dist, "bound": rec.eta_n}
        )
        for m in range(n - 1):
            lhs = abs(float(state.fun_rows[n - 1] @ T.matrix @ state.vec_rows[m]))
            tx_norm = z_norm_flat(big, T.matrix @ state.vec_rows[m])
            results["past_interaction_bounds"].append(
                {
                    "turn": n,
                    "past": m + 1,
                    "pairing": lhs,
                    "bound": tx_norm * dist,
                    "ok": bool(lhs <= tx_norm * dist + 1e-12),
                }
            )
        if config.branch == BRANCH_RESTRICTED_SUM:
            rows = _constraint_rows(T, state, n, block.host, rec.l_n, dual=True)
            if rows.shape[0]:
                uppers = np.array(
                    [dual_norm_upper_flat(big, r) for r in rows]
                )
                values = np.abs(rows @ state.vec_rows[n - 1])
                keep = uppers > 0
                dist = (
                    float(np.max(values[keep] / uppers[keep])) if keep.any() else 0.0
                )
            else:
                dist = 0.0
            results["escape_distances"].append(
                {"turn": n, "value": dist, "bound": rec.eta_n}
            )
        else:
            m_n = rec.tail_starts[block.host - 1]
            head = state.vec_rows[n - 1].copy()
            head[slices[block.host - 1][m_n - 1:]] = 0.0
            results["escape_distances"].append(
                {"turn": n, "value": z_norm_flat(big, head), "bound": rec.eta_n}
            )
    for host in sorted(set(bs.hosts())):
        est = equivalence_constant(bs, host, samples=64, seed=config.seed + host)
        results["equivalence"][str(host)] = {
            "certified_lower": est.certified_lower,
            "heuristic": est.heuristic,
            "window": (config.c_target + config.eta) ** 2,
        }
    return results


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class PipelineResult:
    certificate: FactorizationCertificate
    transcript: Optional[Transcript]
    gamma_report: Optional[object] = None


def restrict_block_system(bs: BlockSystem, gamma: Sequence[int]) -> BlockSystem:
    """Keep only the blocks of the chosen small components; hosts keep
    pointing into the full ambient truncation."""
    gamma = list(gamma)
    new_small = ZTrunc(tuple(bs.small.components[g - 1] for g in gamma))
    from .sumspace import coord_positions

    old_pos = coord_positions(bs.small)
    blocks = []
    for k_new, j in global_coords(new_small):
        g = gamma[k_new - 1]
        blocks.append(bs.blocks[old_pos[(g, j)]])
    return BlockSystem(bs.big, new_small, blocks, host_map=tuple(gamma))


def default_omegas(n_components: int) -> list[list[int]]:
    """Congruence classes of component indices (two classes when possible)."""
    if n_components == 1:
        return [[1]]
    evens = [k for k in range(1, n_components + 1) if k % 2 == 0]
    odds = [k for k in range(1, n_components + 1) if k % 2 == 1]
    return [odds, evens]


def factorize(
    T: OperatorZ,
    config: GameConfig,
    omegas: Optional[Sequence[Sequence[int]]] = None,
    gamma_budget: Optional[int] = None,
    rho: float = 0.1,
) -> PipelineResult:
    """Run the full pipeline: game, hypothesis ledger, diagonal
    factorization, optional component selection, and assembly."""
    failed_base = dict(
        delta=0.0,
        eta=config.eta,
        basis_constant=1.0,
        c_lower=1.0,
        ledger=ConditionLedger([], {}),
        residual_max=None,
        norm_product_lower=None,
        target_bound=None,
        target_bound_valid=False,
        branch=config.branch,
        K_value=0.0,
        q_condition=None,
    )
    try:
        transcript, bs = run_game(T, config)
    except GameAbort as e:
        cert = FactorizationCertificate(
            status="failed", stage=e.stage, diagnostics={"error": str(e)},
            **failed_base,
        )
        return PipelineResult(cert, None)

    schedule = [rec.eta_n for rec in transcript.turns]
    tail_chain = None
    if config.branch == BRANCH_FUTURE_TAILS:
        tail_chain = [tuple(rec.tail_starts) for rec in transcript.turns]
    try:
        ledger = verify_conditions(
            T, bs, config.eta, schedule, tail_chain=tail_chain, seed=config.seed
        )
    except ValueError as e:
        cert = FactorizationCertificate(
            status="failed", stage="conditions", diagnostics={"error": str(e)},
            **failed_base,
        )
        return PipelineResult(cert, transcript)

    delta = diagonal_delta(T)
    delta_prime = (1.0 - config.eta) * delta
    gamma_report = None
    bs_final = bs
    if config.branch == BRANCH_RESTRICTED_SUM:
        from .blocks import build_A, build_B, compressed_matrix

        interaction = compressed_matrix(T, bs)
        S = OperatorZ(
            bs.small, bs.small, interaction - np.diag(np.diag(interaction))
        )
        if omegas is None:
            omegas = default_omegas(config.small.n_components)
        if gamma_budget is None:
            gamma_budget = config.small.n_components
        try:
            gamma_report = select_gamma(
                S, omegas, rho, gamma_budget, seed=config.seed
            )
        except ValueError as e:
            cert = FactorizationCertificate(
                status="failed", stage="gamma", diagnostics={"error": str(e)},
                **failed_base,
            )
            return PipelineResult(cert, transcript)
        bs_final = restrict_block_system(bs, gamma_report.gamma)

    D = build_D(T, bs_final)
    try:
        A_hat, B_hat = diagonal_factorization(D, delta_prime)
    except (ValueError, AssertionError) as e:
        cert = FactorizationCertificate(
            status="failed", stage="diagonal", diagnostics={"error": str(e)},
            **failed_base,
        )
        return PipelineResult(cert, transcript, gamma_report)

    cert = assemble_factorization(
        T,
        bs_final,
        (A_hat, B_hat),
        config.eta,
        ledger=ledger,
        branch=config.branch,
        norm_seed=config.seed,
    )
    cert.diagnostics["transcript_digest"] = transcript.digest()
    cert.diagnostics["allocation_modes"] = [
        a.mode for a in allocate_levels(config)
    ]
    if gamma_report is not None:
        cert.diagnostics["gamma"] = gamma_report.gamma
        cert.diagnostics["gamma_bound"] = gamma_report.achieved_bound
        cert.diagnostics["omegas"] = [list(o) for o in omegas]
        cert.diagnostics["omega_hits"] = [
            sorted(set(o) & set(gamma_report.gamma)) for o in omegas
        ]
    return PipelineResult(cert, transcript, gamma_report)

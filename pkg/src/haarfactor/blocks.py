"""Block systems, the operators they induce, hypothesis verification, and
assembly of factorization certificates.

A block system attaches to every coordinate of a small truncation a signed,
weighted block inside the matching component of an ambient truncation.  The
induced operators A (basis to block), B (block functional readout) and the
diagonal D of compressed values satisfy B T A = D + interaction matrix; the
certificate records the verified inequalities and the residual of the final
factorization of the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .funcspace import index_key
from .operators import (
    NormBounds,
    OperatorZ,
    operator_norm_bounds,
)
from .sumspace import (
    ZFunctional,
    ZTrunc,
    ZVector,
    batch_z_norms,
    component_slices,
    global_coords,
    restricted_dual_norm_flat,
    z_norm_flat,
)


@dataclass
class Block:
    """One reproduced index: host component, ordinals, weights, signs."""

    host: int
    ordinals: tuple[int, ...]
    lams: np.ndarray
    mus: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        self.lams = np.asarray(self.lams, dtype=float)
        self.mus = np.asarray(self.mus, dtype=float)
        self.signs = np.asarray(self.signs, dtype=float)
        n = len(self.ordinals)
        if not (len(self.lams) == len(self.mus) == len(self.signs) == n):
            raise ValueError("ordinals, weights and signs must align")
        if n == 0:
            raise ValueError("a block needs at least one index")
        if len(set(self.ordinals)) != n:
            raise ValueError("duplicate ordinals within a block")
        if np.any(self.lams < 0) or np.any(self.mus < 0):
            raise ValueError("weights must be non-negative")
        if not np.all(np.abs(self.signs) == 1.0):
            raise ValueError("signs must be +1 or -1")

    def pairing_weight(self) -> float:
        """The biorthogonality value contributed by this block alone."""
        return float(np.sum(self.lams * self.mus))


@dataclass
class BlockSystem:
    """Blocks for every coordinate of the small truncation, in order.

    host_map sends each small component to the ambient component hosting
    its blocks; it defaults to the identity and becomes a proper injection
    when the small truncation is a selected subfamily of the ambient one.
    """

    big: ZTrunc
    small: ZTrunc
    blocks: list[Block]
    host_map: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.host_map is None:
            if self.big.n_components != self.small.n_components:
                raise ValueError(
                    "component counts differ; pass an explicit host map"
                )
            self.host_map = tuple(range(1, self.small.n_components + 1))
        if len(self.host_map) != self.small.n_components:
            raise ValueError("one host per small component required")
        if len(self.blocks) != self.small.total_dim:
            raise ValueError("one block per reproduced coordinate required")
        coords = global_coords(self.small)
        used: dict[int, set[int]] = {}
        for n, ((k, _), block) in enumerate(zip(coords, self.blocks)):
            host = self.host_map[k - 1]
            if block.host != host:
                raise ValueError(
                    f"block {n} hosts component {block.host}, coordinate "
                    f"expects {host}"
                )
            dim = self.big.dims[host - 1]
            if any(o < 1 or o > dim for o in block.ordinals):
                raise ValueError(f"block {n} ordinals exceed the host dimension")
            seen = used.setdefault(host, set())
            if seen & set(block.ordinals):
                raise ValueError(f"block {n} reuses host ordinals")
            seen |= set(block.ordinals)
        self._vectors = None
        self._functionals = None

    def small_component_of_host(self, host: int) -> int:
        return self.host_map.index(host) + 1

    # -- derived flat systems -------------------------------------------

    def vector_rows(self) -> np.ndarray:
        """Row n is the flat coordinate vector of the n-th block vector."""
        if self._vectors is None:
            slices = component_slices(self.big)
            rows = np.zeros((self.small.total_dim, self.big.total_dim))
            for n, block in enumerate(self.blocks):
                cols = slices[block.host - 1][np.array(block.ordinals) - 1]
                rows[n, cols] = block.signs * block.lams
            self._vectors = rows
        return self._vectors

    def functional_rows(self) -> np.ndarray:
        """Row n is the flat dual-coefficient vector of the n-th functional."""
        if self._functionals is None:
            slices = component_slices(self.big)
            rows = np.zeros((self.small.total_dim, self.big.total_dim))
            for n, block in enumerate(self.blocks):
                cols = slices[block.host - 1][np.array(block.ordinals) - 1]
                rows[n, cols] = block.signs * block.mus
            self._functionals = rows
        return self._functionals

    def vector(self, n: int) -> ZVector:
        return ZVector.from_flat(self.big, self.vector_rows()[n])

    def functional(self, n: int) -> ZFunctional:
        return ZFunctional.from_flat(self.big, self.functional_rows()[n])

    def hosts(self) -> list[int]:
        return [b.host for b in self.blocks]


def identity_block_system(trunc: ZTrunc) -> BlockSystem:
    """Each coordinate reproduced by itself with unit weights."""
    blocks = []
    for k, j in global_coords(trunc):
        blocks.append(
            Block(k, (j,), np.array([1.0]), np.array([1.0]), np.array([1.0]))
        )
    return BlockSystem(trunc, trunc, blocks)


# ---------------------------------------------------------------------------
# Induced operators


def build_A(small: ZTrunc, big: ZTrunc, bs: BlockSystem) -> OperatorZ:
    """Columns are the block vectors: basis element n maps to x_n."""
    if bs.small != small or bs.big != big:
        raise ValueError("block system does not match the truncations")
    return OperatorZ(small, big, bs.vector_rows().T.copy())


def build_B(big: ZTrunc, small: ZTrunc, bs: BlockSystem) -> OperatorZ:
    """Rows are the block functionals: coefficient readout."""
    if bs.small != small or bs.big != big:
        raise ValueError("block system does not match the truncations")
    return OperatorZ(big, small, bs.functional_rows().copy())


def compressed_matrix(T: OperatorZ, bs: BlockSystem) -> np.ndarray:
    """The matrix of pairings [x*_m(T x_n)] over the small coordinates."""
    return bs.functional_rows() @ T.matrix @ bs.vector_rows().T


def build_D(T: OperatorZ, bs: BlockSystem) -> OperatorZ:
    """Diagonal of compressed values x*_n(T x_n) on the small truncation."""
    if T.domain != bs.big or T.codomain != bs.big:
        raise ValueError("operator must act on the ambient truncation")
    entries = np.diag(compressed_matrix(T, bs)).copy()
    return OperatorZ(bs.small, bs.small, np.diag(entries))


def interaction_matrix(T: OperatorZ, bs: BlockSystem) -> np.ndarray:
    """Off-diagonal part of the compressed matrix: B T A minus D."""
    m = compressed_matrix(T, bs)
    return m - np.diag(np.diag(m))


# ---------------------------------------------------------------------------
# Impartial equivalence constants


@dataclass
class EquivalenceEstimate:
    certified_lower: float
    heuristic: float
    witness: Optional[np.ndarray] = None


def equivalence_constant(
    bs: BlockSystem,
    host: int,
    samples: int = 64,
    seed: int = 0,
) -> EquivalenceEstimate:
    """Sampled impartial equivalence constant between a host's blocks and
    the reproduced basis.

    For coefficient vectors a, the two norms compared are the ambient norm
    of sum a_j x_j and the small-component norm of sum a_j e_j; the
    certified lower bound for the constant is the square of the worst
    witnessed ratio in either direction.
    """
    idx = [n for n, b in enumerate(bs.blocks) if b.host == host]
    if not idx:
        raise ValueError(f"no blocks hosted on component {host}")
    rows = bs.vector_rows()[idx]
    small_spec = bs.small.components[bs.small_component_of_host(host) - 1]
    from .funcspace import component_evaluator

    ev = component_evaluator(small_spec)
    rng = np.random.default_rng(seed)
    m = len(idx)
    cand = [np.eye(m)]
    if samples > 0:
        cand.append(rng.standard_normal((samples, m)))
        spikes = 0.05 * rng.standard_normal((min(samples, m), m))
        spikes[np.arange(min(samples, m)), np.arange(min(samples, m))] = 1.0
        cand.append(spikes)
    coeffs = np.vstack(cand)
    big_norms = batch_z_norms(bs.big, coeffs @ rows)
    small_norms = ev.batch_norm(coeffs)
    keep = small_norms > 0
    ratios = big_norms[keep] / small_norms[keep]
    worst = np.maximum(ratios, 1.0 / ratios)
    j = int(np.argmax(worst))
    c_lower = float(worst[j] ** 2)
    witness = coeffs[keep][j]
    # local refinement around the worst witness
    best = worst[j]
    step = 0.25
    for _ in range(12):
        props = witness[None, :] + step * rng.standard_normal((8, m))
        bn = batch_z_norms(bs.big, props @ rows)
        sn = ev.batch_norm(props)
        ok = sn > 0
        if ok.any():
            r = bn[ok] / sn[ok]
            w = np.maximum(r, 1.0 / r)
            b = int(np.argmax(w))
            if w[b] > best:
                best = w[b]
                witness = props[ok][b]
        step *= 0.8
    return EquivalenceEstimate(c_lower, float(best ** 2), witness)


# ---------------------------------------------------------------------------
# Hypothesis ledger


@dataclass
class LedgerEntry:
    condition: str
    index: Optional[int]
    value: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.value

    @property
    def passed(self) -> bool:
        return self.value < self.bound

    def to_json(self) -> dict:
        return {
            "cond": self.condition,
            "m": self.index,
            "sum": float(self.value),
            "bound": float(self.bound),
            "margin": float(self.margin),
            "passed": bool(self.passed),
        }


@dataclass
class ConditionLedger:
    entries: list[LedgerEntry]
    equivalence: dict[int, EquivalenceEstimate]

    def failed(self) -> list[LedgerEntry]:
        return [e for e in self.entries if not e.passed]

    def all_passed(self) -> bool:
        return not self.failed()

    def to_json(self) -> list:
        return [e.to_json() for e in self.entries]


def verify_conditions(
    T: OperatorZ,
    bs: BlockSystem,
    eta: float,
    schedule: Sequence[float],
    tail_chain: Optional[Sequence[Sequence[int]]] = None,
    equivalence_samples: int = 64,
    seed: int = 0,
) -> ConditionLedger:
    """Measure every hypothesis of the factorization argument.

    schedule[n] is the turn tolerance for coordinate n (0-based).  The
    schedule itself must satisfy sum over m of the tails beyond m being
    below eta; a violation is an error, not a ledger entry.  tail_chain,
    when given, holds for each n the per-component tail starts of the
    chain step n+1 used by the alternative future-interaction condition.
    """
    N = bs.small.total_dim
    schedule = list(schedule)
    if len(schedule) != N:
        raise ValueError("one schedule entry per reproduced coordinate required")
    tail_mass = sum((n) * schedule[n] for n in range(N))
    if not tail_mass < eta:
        raise ValueError(
            f"schedule violation: accumulated tail mass {tail_mass} "
            f"is not below eta {eta}"
        )

    entries: list[LedgerEntry] = []
    compressed = compressed_matrix(T, bs)
    gram = bs.functional_rows() @ bs.vector_rows().T

    for n in range(N):
        entries.append(
            LedgerEntry("iii", n, abs(float(gram[n, n]) - 1.0), eta)
        )
    for m in range(N):
        past = float(np.sum(np.abs(compressed[m, :m])))
        entries.append(LedgerEntry("iv", m, past, schedule[m]))
    for m in range(N):
        future = float(np.sum(np.abs(compressed[m, m + 1:])))
        entries.append(LedgerEntry("v", m, future, schedule[m]))

    if tail_chain is not None:
        if len(tail_chain) != N:
            raise ValueError("one tail-chain step per coordinate required")
        slices = component_slices(bs.big)
        for n in range(N):
            chain_next = tail_chain[min(n + 1, N - 1)]
            entries.append(
                LedgerEntry(
                    "vi-functional",
                    n,
                    restricted_dual_norm_flat(
                        bs.big, T.matrix.T @ bs.functional_rows()[n], chain_next
                    ),
                    schedule[n],
                )
            )
            host = bs.blocks[n].host
            m_n = tail_chain[n][host - 1]
            head = bs.vector_rows()[n].copy()
            keep = slices[host - 1][m_n - 1:]
            head[keep] = 0.0
            entries.append(
                LedgerEntry(
                    "vi-distance", n, z_norm_flat(bs.big, head), schedule[n]
                )
            )

    equivalence = {}
    for host in sorted(set(bs.hosts())):
        equivalence[host] = equivalence_constant(
            bs, host, samples=equivalence_samples, seed=seed + host
        )
    return ConditionLedger(entries, equivalence)


# ---------------------------------------------------------------------------
# Certificate assembly


@dataclass
class FactorizationCertificate:
    status: str  # "ok" or "failed"
    stage: str
    delta: float
    eta: float
    basis_constant: float
    c_lower: float
    ledger: ConditionLedger
    residual_max: Optional[float]
    norm_product_lower: Optional[float]
    target_bound: Optional[float]
    target_bound_valid: bool
    branch: str
    K_value: float
    q_condition: Optional[float]
    A: Optional[OperatorZ] = None
    B: Optional[OperatorZ] = None
    D: Optional[OperatorZ] = None
    Q: Optional[np.ndarray] = None
    A_final: Optional[OperatorZ] = None
    B_final: Optional[OperatorZ] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        from .reports import jsonable

        return jsonable(
            {
                "status": self.status,
                "stage": self.stage,
                "branch": self.branch,
                "delta": self.delta,
                "eta": self.eta,
                "lambda": self.basis_constant,
                "C_lower": self.c_lower,
                "K": self.K_value,
                "ledger": self.ledger.to_json() if self.ledger else [],
                "equivalence": {
                    str(k): {
                        "certified_lower": v.certified_lower,
                        "heuristic": v.heuristic,
                    }
                    for k, v in (
                        self.ledger.equivalence if self.ledger else {}
                    ).items()
                },
                "residual_max": self.residual_max,
                "norm_product_lower": self.norm_product_lower,
                "paper_bound": self.target_bound,
                "paper_bound_valid": self.target_bound_valid,
                "q_condition": self.q_condition,
                "diagnostics": self.diagnostics,
            }
        )


RESIDUAL_TOLERANCE = 1e-8
Q_CONDITION_CAP = 1e12


def assemble_factorization(
    T: OperatorZ,
    bs: BlockSystem,
    diag_factors: tuple[OperatorZ, OperatorZ],
    eta: float,
    K: Optional[float] = None,
    basis_constant: float = 1.0,
    ledger: Optional[ConditionLedger] = None,
    branch: str = "future-tails",
    norm_seed: int = 0,
) -> FactorizationCertificate:
    """Assemble the final factorization and its verification record.

    diag_factors = (A_hat, B_hat) with I = B_hat D A_hat.  The composite
    Q = B_hat B T A A_hat is inverted directly; the certificate carries
    the max-entry residual of the identity reconstruction, the measured
    norm products, and the target norm bound evaluated with the sampled
    equivalence constant (flagged invalid when its smallness condition
    fails; the residual check is the ground truth).
    """
    A_hat, B_hat = diag_factors
    A = build_A(bs.small, bs.big, bs)
    B = build_B(bs.big, bs.small, bs)
    D = build_D(T, bs)

    diag_residual = np.max(
        np.abs(B_hat.matrix @ D.matrix @ A_hat.matrix - np.eye(bs.small.total_dim))
    )
    if diag_residual > 1e-10:
        raise ValueError(
            f"diagonal factorization residual {diag_residual} exceeds 1e-10"
        )

    if ledger is None:
        ledger = ConditionLedger([], {})
    c_hosts = [e.certified_lower for e in ledger.equivalence.values()]
    c_lower = max(c_hosts) if c_hosts else 1.0

    if K is None:
        K = float(
            operator_norm_bounds(A_hat, trials=1, iterations=0).certified_lower
            * operator_norm_bounds(B_hat, trials=1, iterations=0).certified_lower
        )

    delta = float(np.min(np.abs(np.diag(D.matrix))))
    Q = B_hat.matrix @ B.matrix @ T.matrix @ A.matrix @ A_hat.matrix
    q_cond = float(np.linalg.cond(Q))

    lam = basis_constant
    t_norm = operator_norm_bounds(T, trials=2, seed=norm_seed).heuristic_value
    if branch == "restricted-sum":
        denom = 1.0 - 5.0 * lam * K * eta
    else:
        denom = 1.0 - 2.0 * lam * np.sqrt(c_lower) * (3.0 + t_norm) * K * eta
    target_valid = denom > 0
    target = float(lam * K * c_lower ** 2 / denom) if target_valid else None

    base = dict(
        delta=delta,
        eta=eta,
        basis_constant=lam,
        c_lower=c_lower,
        ledger=ledger,
        branch=branch,
        K_value=K,
        q_condition=q_cond,
        A=A,
        B=B,
        D=D,
        Q=Q,
        target_bound=target,
        target_bound_valid=bool(target_valid),
    )
    if not np.isfinite(q_cond) or q_cond > Q_CONDITION_CAP:
        return FactorizationCertificate(
            status="failed",
            stage="invert",
            residual_max=None,
            norm_product_lower=None,
            diagnostics={"q_condition": q_cond},
            **base,
        )

    B_final_matrix = np.linalg.solve(Q, B_hat.matrix @ B.matrix)
    A_final = OperatorZ(bs.small, bs.big, A.matrix @ A_hat.matrix)
    B_final = OperatorZ(bs.big, bs.small, B_final_matrix)
    residual = float(
        np.max(
            np.abs(
                B_final.matrix @ T.matrix @ A_final.matrix
                - np.eye(bs.small.total_dim)
            )
        )
    )
    norm_product = float(
        operator_norm_bounds(A_final, trials=2, seed=norm_seed).certified_lower
        * operator_norm_bounds(B_final, trials=2, seed=norm_seed).certified_lower
    )
    status = "ok" if residual <= RESIDUAL_TOLERANCE else "failed"
    return FactorizationCertificate(
        status=status,
        stage="assembled" if status == "ok" else "residual",
        residual_max=residual,
        norm_product_lower=norm_product,
        A_final=A_final,
        B_final=B_final,
        **base,
    )

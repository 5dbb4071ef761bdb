"""Confirmation with proof.

Imported producer headers are grouped into contiguous segments, gated on
smart-contract-level validation, and mined into consumer blocks under
the crosschain subtree of the dual Merkle root. Segment length planning
balances three rules:

    R1 (hard):  n * header_size < max_block_size
    R2 (soft):  p_fake_avg ** n < delta
    R3 (hard):  n * avg_block_time < beta

R1 and R3 are physical/timing limits; R2 is a risk target flagged as
unmet when the hard caps bite first. Confirmed producer data is never
silently replaced: a contradicting branch surfaces as a Conflict and is
accepted only when strictly longer, through a resolution segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .chain import (
    Block,
    BlockHeader,
    ChainView,
    CrossChainSegment,
    CrossTxBundle,
    Hash256,
    ZERO_HASH,
    encode_segment,
    hash_header,
    meets_difficulty,
    seal_block,
    tx_id,
)
from .merkle import Subtree, verify_merkle_proof
from .sync import HeaderImportStore
from .validator import ValidationOutcome, Verdict


class ConfirmationError(Exception):
    pass


class Infeasible(ConfirmationError):
    def __init__(self, rule: str, message: str):
        super().__init__(message)
        self.rule = rule


class SegmentRejected(ConfirmationError):
    pass


class NotOnCanonicalBranch(ConfirmationError):
    pass


@dataclass(frozen=True)
class SegmentConfig:
    p_fake_avg: float
    delta: float
    beta_ms: int
    avg_block_time_ms: int
    header_size: int = 91
    max_block_size: int = 1 << 20
    confirm_depth: int = 6

    def __post_init__(self):
        if not 0 <= self.p_fake_avg < 1:
            raise ConfirmationError(f"p_fake_avg {self.p_fake_avg} outside [0, 1)")
        if not 0 < self.delta < 1:
            raise ConfirmationError(f"delta {self.delta} outside (0, 1)")
        if self.beta_ms <= 0 or self.avg_block_time_ms <= 0:
            raise ConfirmationError("beta and avg block time must be positive")
        if self.header_size <= 0 or self.max_block_size <= 0:
            raise ConfirmationError("sizes must be positive")


@dataclass(frozen=True)
class SegmentPlan:
    n: int
    r2_met: bool
    r2_min_n: int
    r1_max_n: int
    r3_max_n: int


def _max_n_below(limit: int, unit: int) -> int:
    """Largest n with n * unit < limit."""
    n = (limit - 1) // unit
    return n


def plan_segment_length(cfg: SegmentConfig) -> SegmentPlan:
    """Smallest n satisfying R2, capped by the hard rules R1 and R3."""
    r1_max = _max_n_below(cfg.max_block_size, cfg.header_size)
    r3_max = _max_n_below(cfg.beta_ms, cfg.avg_block_time_ms)
    if r1_max < 1:
        raise Infeasible(
            "R1", f"one header ({cfg.header_size} B) does not fit a block "
            f"({cfg.max_block_size} B)"
        )
    if r3_max < 1:
        raise Infeasible(
            "R3", f"one block time ({cfg.avg_block_time_ms} ms) already exceeds "
            f"beta ({cfg.beta_ms} ms)"
        )
    hard_max = min(r1_max, r3_max)
    r2_min = 1
    power = cfg.p_fake_avg
    while power >= cfg.delta:
        r2_min += 1
        power *= cfg.p_fake_avg
    if r2_min <= hard_max:
        return SegmentPlan(n=r2_min, r2_met=True, r2_min_n=r2_min,
                           r1_max_n=r1_max, r3_max_n=r3_max)
    return SegmentPlan(n=hard_max, r2_met=False, r2_min_n=r2_min,
                       r1_max_n=r1_max, r3_max_n=r3_max)


@dataclass
class ConfirmedSegment:
    consumer_block: Hash256
    segment: CrossChainSegment


class ConfirmationState:
    """Which producer headers the consumer chain has confirmed so far.

    Heights are gap-free and strictly increasing across segments; before
    anything is confirmed the tip is (-1, all-zero hash) so the first
    segment must start at producer genesis.
    """

    def __init__(self) -> None:
        self.confirmed_height: int = -1
        self.confirmed_hash: Hash256 = ZERO_HASH
        self.segments: list[ConfirmedSegment] = []
        self._hash_by_height: dict[int, Hash256] = {}

    def hash_at(self, height: int) -> Hash256 | None:
        return self._hash_by_height.get(height)

    def record_segment(self, segment: CrossChainSegment, consumer_block: Hash256) -> None:
        if segment.headers[0].parent != self.confirmed_hash:
            raise ConfirmationError(
                "segment does not extend the confirmed producer tip"
            )
        self.segments.append(ConfirmedSegment(consumer_block, segment))
        for header in segment.headers:
            self._hash_by_height[header.height] = hash_header(header)
        self.confirmed_height = segment.last_height
        self.confirmed_hash = hash_header(segment.headers[-1])

    def rollback_above(self, height: int) -> None:
        """Drop confirmed headers above `height` (conflict resolution)."""
        for h in [h for h in self._hash_by_height if h > height]:
            del self._hash_by_height[h]
        self.segments = [
            s for s in self.segments if s.segment.last_height <= height
        ]
        self.confirmed_height = height
        self.confirmed_hash = (
            self._hash_by_height[height] if height >= 0 else ZERO_HASH
        )


def pending_bundles(
    store: HeaderImportStore, state: ConfirmationState
) -> list[CrossTxBundle]:
    """Accepted cross txs in blocks above the confirmed tip."""
    return [
        b
        for b in store.bundles
        if store.by_hash[b.block_hash].height > state.confirmed_height
    ]


def assemble_segment(
    store: HeaderImportStore,
    state: ConfirmationState,
    n: int,
    force_on_crosschain_data: bool = False,
) -> CrossChainSegment | None:
    """Next segment of n headers past the confirmed tip, or None.

    With the force flag a shorter segment is cut as soon as pending
    cross-chain data exists; otherwise the producer must be n ahead.
    """
    first = state.confirmed_height + 1
    available = store.last_height - state.confirmed_height
    if available <= 0:
        return None
    pending = pending_bundles(store, state)
    if available < n and not (force_on_crosschain_data and pending):
        return None
    take = min(n, available)
    headers = tuple(store.headers[first : first + take])
    last_height = headers[-1].height
    cross = tuple(
        b for b in pending if store.by_hash[b.block_hash].height <= last_height
    )
    return CrossChainSegment(headers=headers, cross_txs=cross)


def mine_confirmation(
    consumer: ChainView,
    segment: CrossChainSegment,
    cfg: SegmentConfig,
    *,
    outcomes: Sequence[ValidationOutcome],
    state: ConfirmationState | None = None,
    internal_txs: Sequence = (),
    difficulty_bits: int = 0,
    timestamp: int | None = None,
) -> Block:
    """Seal a consumer block carrying a fully validated segment.

    Every check failure raises SegmentRejected: miners never confirm
    unvalidated producer data.
    """
    if not segment.headers:
        raise SegmentRejected("empty segment")
    if len(segment.headers) * cfg.header_size >= cfg.max_block_size:
        raise SegmentRejected(
            f"{len(segment.headers)} headers violate the single-block bound"
        )
    if state is not None and segment.headers[0].parent != state.confirmed_hash:
        raise SegmentRejected("segment does not extend the confirmed producer tip")
    prev = None
    for header in segment.headers:
        if prev is not None:
            if header.height != prev.height + 1 or header.parent != hash_header(prev):
                raise SegmentRejected(f"broken hash link at height {header.height}")
        if not meets_difficulty(hash_header(header), header.difficulty_bits):
            raise SegmentRejected(f"header {header.height} fails its difficulty")
        prev = header
    by_hash = {hash_header(h): h for h in segment.headers}
    for bundle in segment.cross_txs:
        header = by_hash.get(bundle.block_hash)
        if header is None:
            raise SegmentRejected("bundle references a block outside the segment")
        if bundle.proof.subtree is not Subtree.INTERNAL or not verify_merkle_proof(
            tx_id(bundle.tx), bundle.proof, header.merkle_root
        ):
            raise SegmentRejected("bundle inclusion proof failed")
    verdicts = {o.tx_id: o.verdict for o in outcomes}
    for bundle in segment.cross_txs:
        if bundle.tx.claimed_result is None:
            continue
        verdict = verdicts.get(tx_id(bundle.tx))
        if verdict is None:
            raise SegmentRejected("segment contains an unvalidated claimed result")
        if verdict is not Verdict.MATCH:
            raise SegmentRejected(f"validation verdict {verdict.value}")
    return seal_block(
        consumer.header(consumer.canonical_head),
        tuple(internal_txs),
        segment,
        difficulty_bits,
        timestamp=timestamp,
        max_block_size=cfg.max_block_size,
    )


def confirmation_depth(consumer: ChainView, block_hash: Hash256) -> int:
    """Number of canonical successors of a canonical-branch block."""
    if not consumer.on_canonical_branch(block_hash):
        raise NotOnCanonicalBranch(f"block {block_hash.hex()[:16]} not canonical")
    return consumer.tip_height() - consumer.height_of(block_hash)


def is_confirmed(consumer: ChainView, block_hash: Hash256, confirm_depth: int) -> bool:
    return confirmation_depth(consumer, block_hash) >= confirm_depth


@dataclass(frozen=True)
class ConflictReport:
    conflict: bool
    fork_height: int | None = None
    confirmed_hash: Hash256 | None = None
    incoming_hash: Hash256 | None = None


def detect_producer_conflict(
    state: ConfirmationState, incoming: Sequence[BlockHeader]
) -> ConflictReport:
    """Compare a candidate producer branch against confirmed headers.

    Conflict means some confirmed height is contradicted; extensions and
    branches entirely above the confirmed tip report NoConflict.
    """
    for header in incoming:
        if header.height > state.confirmed_height:
            continue
        confirmed = state.hash_at(header.height)
        candidate = hash_header(header)
        if confirmed is not None and confirmed != candidate:
            return ConflictReport(
                conflict=True,
                fork_height=header.height,
                confirmed_hash=confirmed,
                incoming_hash=candidate,
            )
    return ConflictReport(conflict=False)


def resolve_producer_conflict(
    state: ConfirmationState, incoming: Sequence[BlockHeader]
) -> CrossChainSegment:
    """Build the resolution segment for a strictly longer rival branch.

    Confirmed data yields only to a branch that exceeds the confirmed
    length past the fork; equal-length rivals keep the confirmed branch.
    The returned segment still has to pass the mining gate, after which
    `apply_resolution` commits it.
    """
    report = detect_producer_conflict(state, incoming)
    if not report.conflict:
        raise ConfirmationError("no conflict to resolve")
    fork = report.fork_height
    tip = incoming[-1].height
    if tip <= state.confirmed_height:
        raise ConfirmationError(
            f"incoming branch tip {tip} does not exceed confirmed "
            f"height {state.confirmed_height}; holding confirmed branch"
        )
    headers = tuple(h for h in incoming if h.height >= fork)
    if headers[0].height != fork:
        raise ConfirmationError("incoming branch does not cover the fork height")
    expected_parent = state.hash_at(fork - 1) if fork > 0 else ZERO_HASH
    if headers[0].parent != expected_parent:
        raise ConfirmationError("incoming branch does not link below the fork")
    return CrossChainSegment(headers=headers, cross_txs=())


def apply_resolution(
    state: ConfirmationState, segment: CrossChainSegment, consumer_block: Hash256
) -> None:
    state.rollback_above(segment.first_height - 1)
    state.record_segment(segment, consumer_block)


# --- reporting -----------------------------------------------------------------


def segment_log_entries(state: ConfirmationState, consumer: ChainView) -> list[dict]:
    entries = []
    for confirmed in state.segments:
        depth = (
            confirmation_depth(consumer, confirmed.consumer_block)
            if consumer.on_canonical_branch(confirmed.consumer_block)
            else -1
        )
        entries.append(
            {
                "first_height": confirmed.segment.first_height,
                "last_height": confirmed.segment.last_height,
                "cross_tx_count": len(confirmed.segment.cross_txs),
                "consumer_block": confirmed.consumer_block.hex(),
                "depth": depth,
            }
        )
    return entries


def write_confirmation_log(
    state: ConfirmationState, consumer: ChainView, path
) -> None:
    lines = [json.dumps(e, sort_keys=True) for e in segment_log_entries(state, consumer)]
    Path(path).write_text("".join(line + "\n" for line in lines))

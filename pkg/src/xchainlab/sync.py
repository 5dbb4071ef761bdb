"""Producer-to-consumer data propagation.

Headers are exported from the producer's canonical branch and imported
gap-free from genesis; cross-chain transactions travel as bundles whose
Merkle proofs tie them to an already-imported header. Imports are
transactional: a failed batch leaves the store untouched.

Sync messages serialize as message_type(1) || count(4) || items and can
be dumped to / loaded from files for fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .chain import (
    CONTRACT_TX_KINDS,
    HEADER_SIZE,
    BadProofOfWork,
    Block,
    BlockHeader,
    ChainView,
    CrossTxBundle,
    Hash256,
    Transaction,
    ZERO_HASH,
    compute_block_merkle,
    decode_bundle,
    decode_header,
    encode_bundle,
    encode_header,
    hash_header,
    leading_zero_bits,
    meets_difficulty,
    tx_id,
)
from .encoding import DecodeError, Reader, Writer
from .merkle import Subtree, verify_merkle_proof

MSG_HEADERS = 1
MSG_BUNDLES = 2


class SyncError(Exception):
    pass


class RangeOutOfBounds(SyncError):
    pass


class GapDetected(SyncError):
    def __init__(self, missing_height: int):
        super().__init__(f"missing header at height {missing_height}")
        self.missing_height = missing_height


class BadLink(SyncError):
    pass


class UnknownBlock(SyncError):
    pass


class BadProof(SyncError):
    pass


@dataclass(frozen=True)
class ImportReport:
    accepted: int
    last_height: int


class HeaderImportStore:
    """Consumer-side copy of the producer's header chain and cross txs.

    Headers are kept gap-free and hash-linked from producer genesis;
    accepted bundles are kept in producer block order then intra-block
    order.
    """

    def __init__(self) -> None:
        self.headers: list[BlockHeader] = []
        self.by_hash: dict[Hash256, BlockHeader] = {}
        self.bundles: list[CrossTxBundle] = []
        self._bundle_keys: set[tuple[Hash256, int]] = set()

    @property
    def last_height(self) -> int:
        return len(self.headers) - 1

    @property
    def last_hash(self) -> Hash256:
        if not self.headers:
            return ZERO_HASH
        return hash_header(self.headers[-1])

    def header_at(self, height: int) -> BlockHeader:
        return self.headers[height]

    def data_bytes(self) -> int:
        """Stored producer bytes: header plus bundle encodings."""
        total = sum(len(encode_header(h)) for h in self.headers)
        total += sum(len(encode_bundle(b)) for b in self.bundles)
        return total


def export_headers(chain: ChainView, from_height: int, to_height: int) -> list[BlockHeader]:
    """Canonical-branch headers, ascending, inclusive of both ends."""
    tip = chain.tip_height()
    if from_height < 0 or to_height > tip or from_height > to_height:
        raise RangeOutOfBounds(
            f"range [{from_height}, {to_height}] outside canonical chain (tip {tip})"
        )
    hashes = chain.canonical_hashes()
    return [chain.header(h) for h in hashes[from_height : to_height + 1]]


def import_headers(store: HeaderImportStore, headers: Sequence[BlockHeader]) -> ImportReport:
    """Append a linked batch; reject (store unchanged) on any defect."""
    if not headers:
        return ImportReport(accepted=0, last_height=store.last_height)
    prev_hash = store.last_hash
    prev_height = store.last_height
    for header in headers:
        if header.height != prev_height + 1:
            raise GapDetected(missing_height=prev_height + 1)
        if header.parent != prev_hash:
            raise BadLink(
                f"header {header.height} parent {header.parent.hex()[:16]} does not "
                f"link to {prev_hash.hex()[:16]}"
            )
        digest = hash_header(header)
        if not meets_difficulty(digest, header.difficulty_bits):
            raise BadProofOfWork(
                f"header {header.height} has {leading_zero_bits(digest)} leading "
                f"zero bits, needs {header.difficulty_bits}"
            )
        prev_hash = digest
        prev_height = header.height
    for header in headers:
        store.headers.append(header)
        store.by_hash[hash_header(header)] = header
    return ImportReport(accepted=len(headers), last_height=store.last_height)


def default_selector(tx: Transaction) -> bool:
    return tx.kind in CONTRACT_TX_KINDS


def export_cross_txs(
    block: Block, selector: Callable[[Transaction], bool] = default_selector
) -> list[CrossTxBundle]:
    """Bundle the selected transactions of one canonical-branch block.

    Bundles come out in intra-block order; the canonical wire format
    preserves that order, so imports see it too.
    """
    _, internal_proofs, _ = compute_block_merkle(
        block.internal_txs, block.crosschain_payload
    )
    block_hash = hash_header(block.header)
    return [
        CrossTxBundle(tx=tx, block_hash=block_hash, proof=internal_proofs[i])
        for i, tx in enumerate(block.internal_txs)
        if selector(tx)
    ]


def import_cross_txs(
    store: HeaderImportStore, bundles: Sequence[CrossTxBundle]
) -> list[Transaction]:
    """Accept bundles whose proofs verify against imported headers.

    The whole batch is validated before anything is stored. Accepted
    transactions come back in producer block order (stable within a
    block, so intra-block transport order is preserved); bundles
    already present are ignored.
    """
    checked: list[tuple[int, CrossTxBundle]] = []
    for bundle in bundles:
        header = store.by_hash.get(bundle.block_hash)
        if header is None:
            raise UnknownBlock(f"block {bundle.block_hash.hex()[:16]} not imported")
        if bundle.proof.subtree is not Subtree.INTERNAL:
            raise BadProof("cross-chain bundles must prove into the internal subtree")
        if not verify_merkle_proof(tx_id(bundle.tx), bundle.proof, header.merkle_root):
            raise BadProof(
                f"inclusion proof failed for tx in block {bundle.block_hash.hex()[:16]}"
            )
        checked.append((header.height, bundle))
    accepted: list[Transaction] = []
    for height, bundle in sorted(checked, key=lambda item: item[0]):
        key = (bundle.block_hash, tx_id(bundle.tx))
        if key in store._bundle_keys:
            continue
        store._bundle_keys.add(key)
        store.bundles.append(bundle)
        accepted.append(bundle.tx)
    store.bundles.sort(key=lambda b: store.by_hash[b.block_hash].height)
    return accepted


# --- wire format ------------------------------------------------------------


def encode_sync_message(kind: int, items: Sequence) -> bytes:
    w = Writer()
    w.u8(kind)
    w.u32(len(items))
    if kind == MSG_HEADERS:
        for header in items:
            w.raw(encode_header(header))
    elif kind == MSG_BUNDLES:
        for bundle in items:
            w.blob(encode_bundle(bundle))
    else:
        raise SyncError(f"unknown sync message type {kind}")
    return w.getvalue()


def decode_sync_message(data: bytes) -> tuple[int, list]:
    r = Reader(data)
    kind = r.u8()
    count = r.u32()
    if kind == MSG_HEADERS:
        items = [decode_header(r.raw(HEADER_SIZE)) for _ in range(count)]
    elif kind == MSG_BUNDLES:
        items = [decode_bundle(r.blob()) for _ in range(count)]
    else:
        raise DecodeError(f"unknown sync message type {kind}")
    r.expect_end()
    return kind, items


def dump_sync_message(path: str | Path, kind: int, items: Sequence) -> None:
    Path(path).write_bytes(encode_sync_message(kind, items))


def load_sync_message(path: str | Path) -> tuple[int, list]:
    return decode_sync_message(Path(path).read_bytes())

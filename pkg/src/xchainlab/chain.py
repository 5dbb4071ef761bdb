"""Block and transaction model shared by the producer and consumer chains.

Canonical header layout (bit-exact, big-endian):

    chain_id(1) || height(8) || parent(32) || merkle_root(32) ||
    difficulty_bits(2) || timestamp(8) || nonce(8)

Transactions encode as kind(1) followed by length-prefixed fields in
declared order (sender, payload, nonce, claimed result). Two hashes are
derived from a transaction:

  * tx_id      — SHA-256 of the full encoding (identity, Merkle leaf);
  * core_tx_id — SHA-256 of the encoding with the claimed result
                 stripped, i.e. the id of the transaction as submitted
                 before the producer attaches its recorded outcome.

The invocation seed and contract addressing use the core id so the
producer can execute before knowing the result and a tampered claim
still maps to the same contract instance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Iterable, Sequence

from . import merkle
from .encoding import DecodeError, Reader, Writer
from .vm import ContractCode

Hash256 = bytes
HASH_LEN = 32
ZERO_HASH = b"\x00" * HASH_LEN
HEADER_SIZE = 91
DEFAULT_MAX_BLOCK_SIZE = 1 << 20


class ChainError(Exception):
    pass


class OversizedBlock(ChainError):
    pass


class UnknownParent(ChainError):
    pass


class BadProofOfWork(ChainError):
    pass


class MerkleMismatch(ChainError):
    pass


class ChainId(IntEnum):
    PRODUCER = 0
    CONSUMER = 1


class TxKind(IntEnum):
    TRANSFER = 0
    DEPLOY = 1
    INVOKE = 2
    TERMINATE = 3
    EMBEDDED_DEPLOY_INVOKE = 4


CONTRACT_TX_KINDS = frozenset(
    {TxKind.DEPLOY, TxKind.INVOKE, TxKind.TERMINATE, TxKind.EMBEDDED_DEPLOY_INVOKE}
)
CLAIM_KINDS = frozenset({TxKind.INVOKE, TxKind.EMBEDDED_DEPLOY_INVOKE})


@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent: Hash256
    merkle_root: Hash256
    difficulty_bits: int
    nonce: int
    timestamp: int
    chain_id: ChainId


@dataclass(frozen=True)
class TransferPayload:
    recipient: str
    amount: int


@dataclass(frozen=True)
class DeployPayload:
    code: ContractCode
    init_params: tuple[int, ...]


@dataclass(frozen=True)
class InvokePayload:
    contract_id: Hash256
    method: str
    params: tuple[int, ...]


@dataclass(frozen=True)
class TerminatePayload:
    contract_id: Hash256


@dataclass(frozen=True)
class EmbeddedPayload:
    code: ContractCode
    init_params: tuple[int, ...]
    method: str
    params: tuple[int, ...]


_PAYLOAD_TYPES = {
    TxKind.TRANSFER: TransferPayload,
    TxKind.DEPLOY: DeployPayload,
    TxKind.INVOKE: InvokePayload,
    TxKind.TERMINATE: TerminatePayload,
    TxKind.EMBEDDED_DEPLOY_INVOKE: EmbeddedPayload,
}


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: str
    payload: object
    nonce: int
    claimed_result: bytes | None = None

    def __post_init__(self):
        expected = _PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise ChainError(
                f"{self.kind.name} transaction needs {expected.__name__} payload"
            )
        if self.claimed_result is not None and self.kind not in CLAIM_KINDS:
            raise ChainError(f"claimed result not allowed on {self.kind.name}")

    def with_claim(self, claimed_result: bytes | None) -> "Transaction":
        return replace(self, claimed_result=claimed_result)


@dataclass(frozen=True)
class CrossTxBundle:
    """A producer transaction plus the proof tying it to its block."""

    tx: Transaction
    block_hash: Hash256
    proof: merkle.MerkleProof


@dataclass(frozen=True)
class CrossChainSegment:
    """Contiguous producer headers plus the proven cross-chain transactions."""

    headers: tuple[BlockHeader, ...]
    cross_txs: tuple[CrossTxBundle, ...]

    @property
    def first_height(self) -> int:
        return self.headers[0].height

    @property
    def last_height(self) -> int:
        return self.headers[-1].height


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    internal_txs: tuple[Transaction, ...]
    crosschain_payload: CrossChainSegment | None = None


# --- canonical encodings --------------------------------------------------


def encode_header(header: BlockHeader) -> bytes:
    if len(header.parent) != HASH_LEN or len(header.merkle_root) != HASH_LEN:
        raise ChainError("header hash fields must be 32 bytes")
    w = Writer()
    w.u8(int(header.chain_id))
    w.u64(header.height)
    w.raw(header.parent)
    w.raw(header.merkle_root)
    w.u16(header.difficulty_bits)
    w.u64(header.timestamp)
    w.u64(header.nonce)
    return w.getvalue()


def decode_header(data: bytes) -> BlockHeader:
    r = Reader(data)
    header = read_header(r)
    r.expect_end()
    return header


def read_header(r: Reader) -> BlockHeader:
    chain_id = ChainId(r.u8())
    height = r.u64()
    parent = r.raw(HASH_LEN)
    root = r.raw(HASH_LEN)
    bits = r.u16()
    timestamp = r.u64()
    nonce = r.u64()
    return BlockHeader(height, parent, root, bits, nonce, timestamp, chain_id)


def hash_header(header: BlockHeader) -> Hash256:
    return hashlib.sha256(encode_header(header)).digest()


def leading_zero_bits(digest: bytes) -> int:
    return len(digest) * 8 - int.from_bytes(digest, "big").bit_length()


def meets_difficulty(digest: bytes, difficulty_bits: int) -> bool:
    return leading_zero_bits(digest) >= difficulty_bits


def _write_params(w: Writer, params: Sequence[int]) -> None:
    w.u32(len(params))
    for p in params:
        w.u64(p)


def _read_params(r: Reader) -> tuple[int, ...]:
    return tuple(r.u64() for _ in range(r.u32()))


def _write_instructions(w: Writer, instructions: Sequence[tuple]) -> None:
    w.u32(len(instructions))
    for op in instructions:
        tag = op[0]
        w.text(tag)
        if tag == "push":
            w.u64(op[1])
        elif tag in ("param", "ret"):
            w.u32(op[1])
        elif tag in ("load", "store", "acc"):
            w.text(op[1])
        elif tag == "loop":
            w.u32(op[1])
            _write_instructions(w, op[2])


def _read_instructions(r: Reader) -> tuple[tuple, ...]:
    out = []
    for _ in range(r.u32()):
        tag = r.text()
        if tag == "push":
            out.append((tag, r.u64()))
        elif tag in ("param", "ret"):
            out.append((tag, r.u32()))
        elif tag in ("load", "store", "acc"):
            out.append((tag, r.text()))
        elif tag == "loop":
            bound = r.u32()
            out.append((tag, bound, _read_instructions(r)))
        else:
            out.append((tag,))
    return tuple(out)


def encode_code(code: ContractCode) -> bytes:
    w = Writer()
    w.u8(1 if code.disposable else 0)
    w.u32(len(code.init_cells))
    for cell in code.init_cells:
        w.text(cell)
    w.u32(len(code.methods))
    for name in sorted(code.methods):
        w.text(name)
        _write_instructions(w, code.methods[name])
    return w.getvalue()


def read_code(r: Reader) -> ContractCode:
    disposable = bool(r.u8())
    cells = tuple(r.text() for _ in range(r.u32()))
    methods = {}
    for _ in range(r.u32()):
        name = r.text()
        methods[name] = _read_instructions(r)
    return ContractCode(methods=methods, init_cells=cells, disposable=disposable)


def encode_transaction(tx: Transaction, include_claim: bool = True) -> bytes:
    w = Writer()
    w.u8(int(tx.kind))
    w.text(tx.sender)
    p = tx.payload
    if tx.kind is TxKind.TRANSFER:
        w.text(p.recipient)
        w.u64(p.amount)
    elif tx.kind is TxKind.DEPLOY:
        w.blob(encode_code(p.code))
        _write_params(w, p.init_params)
    elif tx.kind is TxKind.INVOKE:
        w.raw(p.contract_id)
        w.text(p.method)
        _write_params(w, p.params)
    elif tx.kind is TxKind.TERMINATE:
        w.raw(p.contract_id)
    else:
        w.blob(encode_code(p.code))
        _write_params(w, p.init_params)
        w.text(p.method)
        _write_params(w, p.params)
    w.u64(tx.nonce)
    claim = tx.claimed_result if include_claim else None
    w.blob(claim or b"")
    return w.getvalue()


def read_transaction(r: Reader) -> Transaction:
    kind = TxKind(r.u8())
    sender = r.text()
    if kind is TxKind.TRANSFER:
        payload = TransferPayload(r.text(), r.u64())
    elif kind is TxKind.DEPLOY:
        payload = DeployPayload(read_code(Reader(r.blob())), _read_params(r))
    elif kind is TxKind.INVOKE:
        payload = InvokePayload(r.raw(HASH_LEN), r.text(), _read_params(r))
    elif kind is TxKind.TERMINATE:
        payload = TerminatePayload(r.raw(HASH_LEN))
    else:
        payload = EmbeddedPayload(
            read_code(Reader(r.blob())), _read_params(r), r.text(), _read_params(r)
        )
    nonce = r.u64()
    claim = r.blob()
    return Transaction(kind, sender, payload, nonce, claim if claim else None)


def decode_transaction(data: bytes) -> Transaction:
    r = Reader(data)
    tx = read_transaction(r)
    r.expect_end()
    return tx


def tx_id(tx: Transaction) -> Hash256:
    return hashlib.sha256(encode_transaction(tx)).digest()


def core_tx_id(tx: Transaction) -> Hash256:
    """Identity of the transaction as submitted, before any recorded claim."""
    return hashlib.sha256(encode_transaction(tx, include_claim=False)).digest()


def invocation_seed(tx: Transaction) -> int:
    """Low 64 bits of the submitted transaction's id."""
    return int.from_bytes(core_tx_id(tx)[-8:], "big")


def contract_id_for(deploy_tx: Transaction) -> Hash256:
    if deploy_tx.kind not in (TxKind.DEPLOY, TxKind.EMBEDDED_DEPLOY_INVOKE):
        raise ChainError(f"{deploy_tx.kind.name} does not deploy a contract")
    return hashlib.sha256(core_tx_id(deploy_tx)).digest()


def encode_proof(proof: merkle.MerkleProof) -> bytes:
    w = Writer()
    w.u8(proof.subtree.value)
    w.raw(proof.other_subroot)
    w.u16(len(proof.steps))
    for step in proof.steps:
        w.u8(1 if step.sibling_on_left else 0)
        w.raw(step.sibling)
    return w.getvalue()


def _read_flag(r: Reader) -> bool:
    value = r.u8()
    if value > 1:
        raise DecodeError(f"flag byte must be 0 or 1, got {value}")
    return bool(value)


def read_proof(r: Reader) -> merkle.MerkleProof:
    try:
        subtree = merkle.Subtree(r.u8())
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc
    other = r.raw(HASH_LEN)
    steps = tuple(
        merkle.ProofStep(sibling_on_left=_read_flag(r), sibling=r.raw(HASH_LEN))
        for _ in range(r.u16())
    )
    return merkle.MerkleProof(subtree, steps, other)


def encode_bundle(bundle: CrossTxBundle) -> bytes:
    w = Writer()
    w.blob(encode_transaction(bundle.tx))
    w.raw(bundle.block_hash)
    w.raw(encode_proof(bundle.proof))
    return w.getvalue()


def read_bundle(r: Reader) -> CrossTxBundle:
    tx = decode_transaction(r.blob())
    block_hash = r.raw(HASH_LEN)
    proof = read_proof(r)
    return CrossTxBundle(tx, block_hash, proof)


def decode_bundle(data: bytes) -> CrossTxBundle:
    r = Reader(data)
    bundle = read_bundle(r)
    r.expect_end()
    return bundle


def encode_segment(segment: CrossChainSegment) -> bytes:
    w = Writer()
    w.u16(len(segment.headers))
    for header in segment.headers:
        w.raw(encode_header(header))
    w.u16(len(segment.cross_txs))
    for bundle in segment.cross_txs:
        w.raw(encode_bundle(bundle))
    return w.getvalue()


def read_segment(r: Reader) -> CrossChainSegment:
    headers = tuple(read_header(r) for _ in range(r.u16()))
    bundles = tuple(read_bundle(r) for _ in range(r.u16()))
    return CrossChainSegment(headers, bundles)


def decode_segment(data: bytes) -> CrossChainSegment:
    r = Reader(data)
    segment = read_segment(r)
    r.expect_end()
    return segment


def segment_leaves(segment: CrossChainSegment) -> list[bytes]:
    """Leaf byte strings committed under the crosschain subtree."""
    return [encode_header(h) for h in segment.headers] + [
        encode_bundle(b) for b in segment.cross_txs
    ]


def encode_block(block: Block) -> bytes:
    w = Writer()
    w.raw(encode_header(block.header))
    w.u32(len(block.internal_txs))
    for tx in block.internal_txs:
        w.blob(encode_transaction(tx))
    if block.crosschain_payload is None:
        w.u8(0)
    else:
        w.u8(1)
        w.raw(encode_segment(block.crosschain_payload))
    return w.getvalue()


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    header = read_header(r)
    txs = tuple(decode_transaction(r.blob()) for _ in range(r.u32()))
    payload = read_segment(r) if _read_flag(r) else None
    r.expect_end()
    return Block(header, txs, payload)


def block_size(block: Block) -> int:
    return len(encode_block(block))


# --- sealing ---------------------------------------------------------------


def compute_block_merkle(
    txs: Sequence[Transaction], payload: CrossChainSegment | None
) -> tuple[merkle.DualMerkle, list[merkle.MerkleProof], list[merkle.MerkleProof]]:
    internal = [tx_id(tx) for tx in txs]
    crosschain = segment_leaves(payload) if payload is not None else []
    return merkle.build_dual_merkle(internal, crosschain)


def make_genesis(chain_id: ChainId, timestamp: int = 0) -> Block:
    tree, _, _ = compute_block_merkle((), None)
    header = BlockHeader(
        height=0,
        parent=ZERO_HASH,
        merkle_root=tree.root,
        difficulty_bits=0,
        nonce=0,
        timestamp=timestamp,
        chain_id=chain_id,
    )
    return Block(header, (), None)


def seal_block(
    parent: BlockHeader,
    txs: Sequence[Transaction],
    payload: CrossChainSegment | None = None,
    difficulty_bits: int = 0,
    *,
    timestamp: int | None = None,
    max_block_size: int = DEFAULT_MAX_BLOCK_SIZE,
) -> Block:
    """Seal a child block; the nonce search starts at 0 and increments.

    Payload semantics (segment continuity, validation outcomes) are the
    confirmation gate's responsibility, not the sealer's.
    """
    tree, _, _ = compute_block_merkle(txs, payload)
    header = BlockHeader(
        height=parent.height + 1,
        parent=hash_header(parent),
        merkle_root=tree.root,
        difficulty_bits=difficulty_bits,
        nonce=0,
        timestamp=parent.timestamp if timestamp is None else timestamp,
        chain_id=parent.chain_id,
    )
    block = Block(header, tuple(txs), payload)
    size = block_size(block)
    if size > max_block_size:
        raise OversizedBlock(f"encoded size {size} exceeds {max_block_size}")
    nonce = 0
    while True:
        candidate = replace(header, nonce=nonce)
        if meets_difficulty(hash_header(candidate), difficulty_bits):
            return Block(candidate, tuple(txs), payload)
        nonce += 1


# --- fork choice -----------------------------------------------------------


@dataclass(frozen=True)
class Extended:
    head: Hash256


@dataclass(frozen=True)
class SideChain:
    tip: Hash256


@dataclass(frozen=True)
class Rebranch:
    old_head: Hash256
    new_head: Hash256
    rolled_back: tuple[Hash256, ...]


ChainEvent = Extended | SideChain | Rebranch


class ChainView:
    """One node's view of a chain: all known blocks plus fork choice.

    The canonical head is the tip of maximal height; equal-height ties
    keep the first-arrived tip, so fork choice is a pure function of the
    block arrival sequence.
    """

    def __init__(self, genesis: Block):
        if genesis.header.height != 0 or genesis.header.parent != ZERO_HASH:
            raise ChainError("genesis must have height 0 and all-zero parent")
        ghash = hash_header(genesis.header)
        self.blocks: dict[Hash256, Block] = {ghash: genesis}
        self.arrival: dict[Hash256, int] = {ghash: 0}
        self.heads: set[Hash256] = {ghash}
        self.canonical_head: Hash256 = ghash
        self.genesis_hash: Hash256 = ghash
        self._next_arrival = 1

    def header(self, block_hash: Hash256) -> BlockHeader:
        return self.blocks[block_hash].header

    def height_of(self, block_hash: Hash256) -> int:
        return self.blocks[block_hash].header.height

    def tip_height(self) -> int:
        return self.height_of(self.canonical_head)

    def choose_head(self) -> Hash256:
        return min(
            self.heads, key=lambda h: (-self.height_of(h), self.arrival[h])
        )

    def _ancestors(self, block_hash: Hash256) -> set[Hash256]:
        out = set()
        current = block_hash
        while True:
            out.add(current)
            if current == self.genesis_hash:
                return out
            current = self.blocks[current].header.parent

    def apply_block(self, block: Block) -> ChainEvent:
        header = block.header
        block_hash = hash_header(header)
        if block_hash in self.blocks:
            raise ChainError(f"duplicate block {block_hash.hex()[:16]}")
        parent = self.blocks.get(header.parent)
        if parent is None:
            raise UnknownParent(f"parent {header.parent.hex()[:16]} not known")
        if header.height != parent.header.height + 1:
            raise ChainError(
                f"height {header.height} does not follow parent "
                f"height {parent.header.height}"
            )
        if not meets_difficulty(block_hash, header.difficulty_bits):
            raise BadProofOfWork(
                f"hash has {leading_zero_bits(block_hash)} leading zero bits, "
                f"needs {header.difficulty_bits}"
            )
        tree, _, _ = compute_block_merkle(block.internal_txs, block.crosschain_payload)
        if tree.root != header.merkle_root:
            raise MerkleMismatch("header merkle root does not match body")

        self.blocks[block_hash] = block
        self.arrival[block_hash] = self._next_arrival
        self._next_arrival += 1
        self.heads.discard(header.parent)
        self.heads.add(block_hash)

        old_head = self.canonical_head
        new_head = self.choose_head()
        if new_head == old_head:
            return SideChain(block_hash)
        self.canonical_head = new_head
        if header.parent == old_head:
            return Extended(new_head)
        new_branch = self._ancestors(new_head)
        rolled_back = []
        current = old_head
        while current not in new_branch:
            rolled_back.append(current)
            current = self.blocks[current].header.parent
        rolled_back.reverse()
        return Rebranch(old_head, new_head, tuple(rolled_back))

    def canonical_hashes(self) -> list[Hash256]:
        out = []
        current = self.canonical_head
        while True:
            out.append(current)
            if current == self.genesis_hash:
                break
            current = self.blocks[current].header.parent
        out.reverse()
        return out

    def canonical_blocks(self) -> list[Block]:
        return [self.blocks[h] for h in self.canonical_hashes()]

    def on_canonical_branch(self, block_hash: Hash256) -> bool:
        if block_hash not in self.blocks:
            return False
        height = self.height_of(block_hash)
        hashes = self.canonical_hashes()
        return height < len(hashes) and hashes[height] == block_hash

"""Shared fixture builders for the test suite."""

from __future__ import annotations

from xchainlab.chain import (
    Block,
    BlockHeader,
    ChainId,
    ChainView,
    Transaction,
    TransferPayload,
    TxKind,
    make_genesis,
    seal_block,
)
from xchainlab.confirmation import SegmentConfig
from xchainlab.harness import ProducerSim
from xchainlab.scenario import (
    ChainSettings,
    ConsumerSettings,
    ContractSpec,
    Scenario,
    ScheduleEvent,
    TamperSpec,
)


def simple_chain(blocks: int, chain_id=ChainId.PRODUCER, difficulty_bits: int = 0,
                 block_time: int = 10_000) -> ChainView:
    """Genesis plus `blocks` empty sealed blocks."""
    view = ChainView(make_genesis(chain_id))
    for i in range(blocks):
        parent = view.header(view.canonical_head)
        block = seal_block(parent, (), None, difficulty_bits,
                           timestamp=(i + 1) * block_time)
        view.apply_block(block)
    return view


def transfer(sender: str, recipient: str, amount: int, nonce: int) -> Transaction:
    return Transaction(TxKind.TRANSFER, sender, TransferPayload(recipient, amount), nonce)


def default_segment_cfg(**overrides) -> SegmentConfig:
    base = dict(
        p_fake_avg=0.3, delta=0.01, beta_ms=300_000, avg_block_time_ms=10_000,
        confirm_depth=2,
    )
    base.update(overrides)
    return SegmentConfig(**base)


def counter_scenario(seed: int = 42, tamper: TamperSpec | None = None,
                     difficulty_bits: int = 0) -> Scenario:
    """Classic accumulator workload: deploy, two invokes, terminate."""
    return Scenario(
        seed=seed,
        producer=ChainSettings(difficulty_bits=difficulty_bits),
        consumer=ConsumerSettings(difficulty_bits=difficulty_bits, confirm_depth=2),
        segment=default_segment_cfg(),
        contracts=(ContractSpec(name="counter", template="accumulator"),),
        schedule=(
            ScheduleEvent(1000, "deploy", "counter"),
            ScheduleEvent(12000, "invoke", "counter", "add", (5,)),
            ScheduleEvent(22000, "invoke", "counter", "add", (7,)),
            ScheduleEvent(31000, "terminate", "counter"),
        ),
        tamper=tamper,
    )


def producer_with_contracts(seed: int = 7, difficulty_bits: int = 0) -> ProducerSim:
    """A small mined producer chain carrying deploy/invoke/terminate txs."""
    scenario = counter_scenario(seed=seed, difficulty_bits=difficulty_bits)
    producer = ProducerSim(scenario.producer, scenario.seed)
    producer.run_schedule(scenario.contracts, scenario.schedule, scenario.tamper)
    return producer

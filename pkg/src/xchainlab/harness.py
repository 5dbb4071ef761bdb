"""Deterministic end-to-end driver.

Runs a scenario through the full pipeline: the producer mines blocks and
executes contract transactions (recording claimed results, optionally
tampering with one), headers and cross-chain bundles sync to the
consumer, the consumer re-executes everything in an isolated
environment, and validated segments are mined into consumer blocks and
buried to the configured confirmation depth. Everything is a pure
function of (scenario, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import vm
from .chain import (
    Block,
    ChainId,
    ChainView,
    DeployPayload,
    EmbeddedPayload,
    InvokePayload,
    TerminatePayload,
    Transaction,
    TxKind,
    hash_header,
    invocation_seed,
    make_genesis,
    seal_block,
    tx_id,
)
from .confirmation import (
    ConfirmationState,
    SegmentRejected,
    assemble_segment,
    confirmation_depth,
    mine_confirmation,
    plan_segment_length,
    segment_log_entries,
)
from .rng import mix
from .scenario import ConfigError, ContractSpec, Scenario, ScheduleEvent, TamperSpec
from .sync import HeaderImportStore, export_cross_txs, export_headers, import_cross_txs, import_headers
from .validator import (
    CollectiveReport,
    IsolatedEnv,
    StorageNode,
    ValidationOutcome,
    Verdict,
    collective_validate,
    replay_invocations,
    resource_savings,
)

EXIT_CLEAN = 0
EXIT_VALIDATION_FAILURE = 2
EXIT_CONFIG_ERROR = 3


def build_contract_code(spec: ContractSpec) -> vm.ContractCode:
    if spec.template == "random_sum":
        return vm.random_sum_contract(lo=spec.lo, span=spec.span, disposable=spec.disposable)
    if spec.template == "accumulator":
        return vm.accumulator_contract(disposable=spec.disposable)
    if spec.template == "constant":
        return vm.constant_contract(spec.value, disposable=spec.disposable)
    if spec.template == "seeded_draw":
        return vm.seeded_draw_contract(disposable=spec.disposable)
    raise ConfigError(f"unknown contract template {spec.template!r}")


def flip_bit(data: bytes, bit: int) -> bytes:
    """Flip one bit (big-endian numbering) of a byte string."""
    if not data:
        raise ValueError("cannot flip a bit of an empty result")
    bit %= len(data) * 8
    out = bytearray(data)
    out[bit // 8] ^= 0x80 >> (bit % 8)
    return bytes(out)


@dataclass
class ContractAccount:
    """Producer-side bookkeeping for one scheduled contract."""

    spec: ContractSpec
    code: vm.ContractCode
    instance: vm.ContractInstance | None = None
    contract_id: bytes | None = None
    deployed: bool = False
    related_txs: list[Transaction] = field(default_factory=list)


class ProducerSim:
    """Mines the producer chain, executing contract txs as they are sealed.

    Claimed results are recorded on invocation transactions before the
    block is sealed; the optional tamper spec flips one bit of the
    claim-carrying transaction at the given index, modelling a producer
    that seals a wrong result into its own chain.
    """

    def __init__(self, settings, seed: int):
        self.settings = settings
        self.seed = seed
        self.view = ChainView(make_genesis(ChainId.PRODUCER, timestamp=0))
        self.accounts: dict[str, ContractAccount] = {}
        self.tx_count = 0
        self._nonce_counter = 0
        self._claim_counter = 0

    def _next_nonce(self) -> int:
        nonce = mix(self.seed, self._nonce_counter)
        self._nonce_counter += 1
        return nonce

    def _sender(self, contract: str) -> str:
        return f"acct-{contract}"

    def _build_tx(self, event: ScheduleEvent, account: ContractAccount, now: int,
                  tamper: TamperSpec | None) -> Transaction:
        spec = account.spec
        if event.action == "deploy":
            tx = Transaction(
                TxKind.DEPLOY,
                self._sender(spec.name),
                DeployPayload(account.code, spec.init),
                self._next_nonce(),
            )
            account.instance = vm.deploy(account.code, spec.init, tx_id(tx), now)
            account.contract_id = account.instance.contract_id
            account.deployed = True
            return tx
        if event.action == "terminate":
            if account.contract_id is None:
                raise ConfigError(f"terminate before deploy for {spec.name!r}")
            tx = Transaction(
                TxKind.TERMINATE,
                self._sender(spec.name),
                TerminatePayload(account.contract_id),
                self._next_nonce(),
            )
            if account.instance.lifecycle is vm.Lifecycle.ACTIVE:
                vm.terminate(account.instance, now)
            return tx
        # invoke
        method = event.method or "run"
        if spec.flow == "embedded" and not account.deployed:
            tx = Transaction(
                TxKind.EMBEDDED_DEPLOY_INVOKE,
                self._sender(spec.name),
                EmbeddedPayload(account.code, spec.init, method, event.params),
                self._next_nonce(),
            )
            instance, result = vm.deploy_embedded(tx, now)
            account.instance = instance
            account.contract_id = instance.contract_id
            account.deployed = True
        else:
            if account.contract_id is None:
                raise ConfigError(f"invoke before deploy for {spec.name!r}")
            tx = Transaction(
                TxKind.INVOKE,
                self._sender(spec.name),
                InvokePayload(account.contract_id, method, event.params),
                self._next_nonce(),
            )
            result = vm.invoke(
                account.instance, method, event.params, invocation_seed(tx), now
            )
        claim = result.result_bytes
        if tamper is not None and self._claim_counter == tamper.tx_index:
            claim = flip_bit(claim, tamper.bit)
        self._claim_counter += 1
        return tx.with_claim(claim)

    def run_schedule(self, contracts, schedule, tamper: TamperSpec | None) -> None:
        for spec in contracts:
            self.accounts[spec.name] = ContractAccount(spec, build_contract_code(spec))
        events = sorted(schedule, key=lambda e: e.time_ms)
        block_time = self.settings.block_time_ms
        if events:
            last = ((events[-1].time_ms + block_time - 1) // block_time) or 1
        else:
            last = 1
        cursor = 0
        for k in range(1, last + 1):
            now = k * block_time
            txs = []
            while cursor < len(events) and events[cursor].time_ms <= now:
                event = events[cursor]
                account = self.accounts[event.contract]
                tx = self._build_tx(event, account, now, tamper)
                account.related_txs.append(tx)
                txs.append(tx)
                cursor += 1
            block = seal_block(
                self.view.header(self.view.canonical_head),
                txs,
                None,
                self.settings.difficulty_bits,
                timestamp=now,
                max_block_size=self.settings.max_block_size,
            )
            self.view.apply_block(block)
            self.tx_count += len(txs)

    def last_timestamp(self) -> int:
        return self.view.header(self.view.canonical_head).timestamp

    def burden_report(self) -> dict[str, dict]:
        horizon = self.last_timestamp()
        out = {}
        for name, account in sorted(self.accounts.items()):
            if account.instance is None:
                continue
            metrics = vm.compute_burden(account.instance, account.related_txs, horizon)
            out[name] = {
                "flow": account.spec.flow,
                "time_occupation_ms": metrics.time_occupation,
                "transaction_numbers": metrics.transaction_numbers,
            }
        return out


class ConsumerSim:
    """Imports producer data, validates it, and confirms segments."""

    def __init__(self, settings, segment_cfg, segment_length: int | None):
        self.settings = settings
        self.cfg = segment_cfg
        self.view = ChainView(make_genesis(ChainId.CONSUMER, timestamp=0))
        self.store = HeaderImportStore()
        self.state = ConfirmationState()
        self.env = IsolatedEnv("env-consumer-0")
        self.outcomes: list[ValidationOutcome] = []
        self.rejections: list[str] = []
        self.clock = 0
        if segment_length is None:
            self.segment_length = plan_segment_length(segment_cfg).n
        else:
            self.segment_length = segment_length

    def sync_from(self, producer: ChainView) -> None:
        tip = producer.tip_height()
        headers = export_headers(producer, 0, tip)
        import_headers(self.store, headers)
        bundles = []
        for block in producer.canonical_blocks():
            bundles.extend(export_cross_txs(block))
        import_cross_txs(self.store, bundles)

    def _tick(self) -> int:
        self.clock += self.settings.block_time_ms
        return self.clock

    def confirm_all(self) -> None:
        while True:
            segment = assemble_segment(
                self.store, self.state, self.segment_length, force_on_crosschain_data=True
            )
            if segment is None:
                break
            now = self._tick()
            outcomes = replay_invocations(self.env, segment.cross_txs, now=now)
            self.outcomes.extend(outcomes)
            try:
                block = mine_confirmation(
                    self.view,
                    segment,
                    self.cfg,
                    outcomes=outcomes,
                    state=self.state,
                    difficulty_bits=self.settings.difficulty_bits,
                    timestamp=now,
                )
            except SegmentRejected as exc:
                self.rejections.append(str(exc))
                break
            self.view.apply_block(block)
            self.state.record_segment(segment, hash_header(block.header))
        self._bury_segments()

    def _bury_segments(self) -> None:
        if not self.state.segments:
            return
        last = self.state.segments[-1].consumer_block
        while confirmation_depth(self.view, last) < self.settings.confirm_depth:
            block = seal_block(
                self.view.header(self.view.canonical_head),
                (),
                None,
                self.settings.difficulty_bits,
                timestamp=self._tick(),
            )
            self.view.apply_block(block)


@dataclass
class RunReport:
    seed: int
    exit_status: int
    producer_blocks: int
    producer_txs: int
    consumer_blocks: int
    segments: list[dict]
    validation: dict
    burden: dict
    conflicts: list[dict]
    rejections: list[str]
    storage: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "exit_status": self.exit_status,
            "producer": {"blocks": self.producer_blocks, "txs": self.producer_txs},
            "consumer": {"blocks": self.consumer_blocks},
            "segments": self.segments,
            "validation": self.validation,
            "burden": self.burden,
            "conflicts": self.conflicts,
            "rejections": self.rejections,
        }
        if self.storage is not None:
            out["storage"] = self.storage
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def summarize_outcomes(outcomes) -> dict:
    summary = {"match": 0, "mismatch": 0, "inconclusive": 0, "mismatched_tx_ids": []}
    for o in outcomes:
        summary[o.verdict.value] += 1
        if o.verdict is Verdict.MISMATCH:
            summary["mismatched_tx_ids"].append(o.tx_id.hex())
    return summary


def run_scenario(scenario: Scenario) -> tuple[RunReport, ConsumerSim]:
    producer = ProducerSim(scenario.producer, scenario.seed)
    producer.run_schedule(scenario.contracts, scenario.schedule, scenario.tamper)

    consumer = ConsumerSim(scenario.consumer, scenario.segment, scenario.segment_length)
    consumer.sync_from(producer.view)
    consumer.confirm_all()

    storage = None
    if scenario.consumer.share_storage and scenario.consumer.node_count >= 2:
        requesters = [f"node-{i}" for i in range(1, scenario.consumer.node_count)]
        storage_node = StorageNode(f"node-{scenario.consumer.node_count}", consumer.store)
        report = collective_validate(storage_node, requesters, now=consumer.clock)
        r_individual = storage_node.data_bytes()
        savings = resource_savings(len(requesters), r_individual, 0)
        storage = {
            "storage_node": storage_node.node_id,
            "bytes_stored": dict(sorted(report.bytes_stored.items())),
            "savings": {
                "node_count": savings.node_count,
                "r_individual": savings.r_individual,
                "r_shared": savings.r_shared,
                "savings": savings.savings,
            },
        }

    validation = summarize_outcomes(consumer.outcomes)
    exit_status = EXIT_CLEAN
    if validation["mismatch"] or consumer.rejections:
        exit_status = EXIT_VALIDATION_FAILURE
    report = RunReport(
        seed=scenario.seed,
        exit_status=exit_status,
        producer_blocks=producer.view.tip_height() + 1,
        producer_txs=producer.tx_count,
        consumer_blocks=consumer.view.tip_height() + 1,
        segments=segment_log_entries(consumer.state, consumer.view),
        validation=validation,
        burden=producer.burden_report(),
        conflicts=[],
        rejections=consumer.rejections,
        storage=storage,
    )
    return report, consumer

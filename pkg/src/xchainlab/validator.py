"""Smart-contract-level validation.

Producer contracts are re-executed inside an isolated environment on the
consumer side and the computed bytes are compared against the claimed
results carried by the invocation transactions. Collective validation
lets several nodes run their comparisons against one storage node's
producer data, with byte-level accounting of who stores what.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import vm
from .chain import (
    CrossTxBundle,
    Hash256,
    Transaction,
    TxKind,
    core_tx_id,
    invocation_seed,
    tx_id,
)
from .sync import HeaderImportStore


class ValidatorError(Exception):
    pass


class NotADeployment(ValidatorError):
    pass


class MissingInstance(ValidatorError):
    pass


class NegativeSavingsInput(ValidatorError):
    pass


class Verdict(Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ValidationOutcome:
    tx_id: Hash256
    computed: bytes | None
    claimed: bytes | None
    verdict: Verdict
    reason: str | None = None
    env_id: str = ""
    ms: int = 0


@dataclass(frozen=True)
class SavingsReport:
    node_count: int
    r_individual: int
    r_shared: int
    savings: int


class IsolatedEnv:
    """Execution sandbox holding only cross-chain contract instances.

    Consumer-native contracts never live here; the environment answers
    result queries by transaction id (the cross-environment retrieval
    interface).
    """

    def __init__(self, env_id: str, data_source: str = "local"):
        self.env_id = env_id
        self.data_source = data_source
        self.instances: dict[Hash256, vm.ContractInstance] = {}
        self.results: dict[Hash256, bytes] = {}

    def result_for(self, txid: Hash256) -> bytes | None:
        return self.results.get(txid)


def instantiate_cross_contract(
    env: IsolatedEnv, deploy_bundle: CrossTxBundle, now: int
) -> vm.ContractInstance:
    tx = deploy_bundle.tx
    if tx.kind is TxKind.DEPLOY:
        instance = vm.deploy(tx.payload.code, tx.payload.init_params, core_tx_id(tx), now)
    elif tx.kind is TxKind.EMBEDDED_DEPLOY_INVOKE:
        instance, result = vm.deploy_embedded(tx, now)
        env.results[tx_id(tx)] = result.result_bytes
    else:
        raise NotADeployment(f"{tx.kind.name} transaction does not deploy")
    env.instances[instance.contract_id] = instance
    return instance


def _verdict(computed: bytes, claimed: bytes | None, compare: str) -> Verdict:
    if claimed is None:
        return Verdict.MISMATCH
    if compare == "hash":
        return (
            Verdict.MATCH
            if hashlib.sha256(computed).digest() == claimed
            else Verdict.MISMATCH
        )
    return Verdict.MATCH if computed == claimed else Verdict.MISMATCH


def replay_invocations(
    env: IsolatedEnv,
    bundles: Sequence[CrossTxBundle],
    *,
    now: int = 0,
    compare: str = "bytes",
) -> list[ValidationOutcome]:
    """Re-execute bundled transactions in producer order.

    Deployments instantiate, invocations produce one outcome each, and
    VM faults downgrade to Inconclusive so availability problems never
    masquerade as cheat detections. `compare="hash"` matches chains that
    record only a result digest.
    """
    outcomes: list[ValidationOutcome] = []
    for bundle in bundles:
        tx = bundle.tx
        txid = tx_id(tx)
        if tx.kind is TxKind.DEPLOY:
            instantiate_cross_contract(env, bundle, now)
            continue
        if tx.kind is TxKind.EMBEDDED_DEPLOY_INVOKE:
            try:
                instance, result = vm.deploy_embedded(tx, now)
            except vm.VMError as exc:
                outcomes.append(
                    ValidationOutcome(
                        txid, None, tx.claimed_result, Verdict.INCONCLUSIVE,
                        reason=str(exc), env_id=env.env_id, ms=now,
                    )
                )
                continue
            env.instances[instance.contract_id] = instance
            env.results[txid] = result.result_bytes
            outcomes.append(
                ValidationOutcome(
                    txid, result.result_bytes, tx.claimed_result,
                    _verdict(result.result_bytes, tx.claimed_result, compare),
                    env_id=env.env_id, ms=now,
                )
            )
            continue
        if tx.kind is TxKind.INVOKE:
            instance = env.instances.get(tx.payload.contract_id)
            if instance is None:
                raise MissingInstance(
                    f"no instance {tx.payload.contract_id.hex()[:16]} in {env.env_id}"
                )
            try:
                result = vm.invoke(
                    instance, tx.payload.method, tx.payload.params,
                    invocation_seed(tx), now,
                )
            except vm.VMError as exc:
                outcomes.append(
                    ValidationOutcome(
                        txid, None, tx.claimed_result, Verdict.INCONCLUSIVE,
                        reason=str(exc), env_id=env.env_id, ms=now,
                    )
                )
                continue
            env.results[txid] = result.result_bytes
            outcomes.append(
                ValidationOutcome(
                    txid, result.result_bytes, tx.claimed_result,
                    _verdict(result.result_bytes, tx.claimed_result, compare),
                    env_id=env.env_id, ms=now,
                )
            )
            continue
        if tx.kind is TxKind.TERMINATE:
            instance = env.instances.get(tx.payload.contract_id)
            if instance is None:
                raise MissingInstance(
                    f"no instance {tx.payload.contract_id.hex()[:16]} in {env.env_id}"
                )
            if instance.lifecycle is vm.Lifecycle.ACTIVE:
                vm.terminate(instance, now)
            continue
        # transfers carry no contract results; nothing to validate
    return outcomes


# --- collective validation ---------------------------------------------------


class StorageNode:
    """The one node of a sharing group that keeps the producer data."""

    def __init__(self, node_id: str, store: HeaderImportStore, available: bool = True):
        self.node_id = node_id
        self.store = store
        self.available = available

    def data_bytes(self) -> int:
        return self.store.data_bytes()

    def fetch_bundles(self) -> list[CrossTxBundle]:
        if not self.available:
            raise ValidatorError(f"storage node {self.node_id} unavailable")
        return list(self.store.bundles)


@dataclass
class CollectiveReport:
    outcomes: dict[str, list[ValidationOutcome]] = field(default_factory=dict)
    bytes_stored: dict[str, int] = field(default_factory=dict)


def collective_validate(
    storage_node: StorageNode,
    requesters: Sequence[str],
    workload: Sequence[CrossTxBundle] | None = None,
    *,
    now: int = 0,
    compare: str = "bytes",
) -> CollectiveReport:
    """Validate on every requester using the storage node's data.

    Requesters fetch bundles on demand, run their own comparisons in
    their own environments and retain no producer bytes. If the storage
    node is down every requester reports Inconclusive — an availability
    fault, never a false Match.
    """
    report = CollectiveReport()
    report.bytes_stored[storage_node.node_id] = storage_node.data_bytes()
    for node_id in requesters:
        report.bytes_stored[node_id] = 0
        if not storage_node.available:
            bundles = workload or []
            report.outcomes[node_id] = [
                ValidationOutcome(
                    tx_id(b.tx), None, b.tx.claimed_result, Verdict.INCONCLUSIVE,
                    reason="storage node unavailable", env_id=f"env-{node_id}", ms=now,
                )
                for b in bundles
                if b.tx.kind in (TxKind.INVOKE, TxKind.EMBEDDED_DEPLOY_INVOKE)
            ]
            continue
        fetched = storage_node.fetch_bundles() if workload is None else list(workload)
        env = IsolatedEnv(f"env-{node_id}", data_source=f"shared:{storage_node.node_id}")
        report.outcomes[node_id] = replay_invocations(env, fetched, now=now, compare=compare)
    return report


def individual_validate(
    node_ids: Sequence[str],
    stores: Sequence[HeaderImportStore],
    *,
    now: int = 0,
    compare: str = "bytes",
) -> CollectiveReport:
    """Non-shared baseline: every node keeps its own producer copy."""
    report = CollectiveReport()
    for node_id, store in zip(node_ids, stores):
        report.bytes_stored[node_id] = store.data_bytes()
        env = IsolatedEnv(f"env-{node_id}", data_source="local")
        report.outcomes[node_id] = replay_invocations(
            env, list(store.bundles), now=now, compare=compare
        )
    return report


def resource_savings(n: int, r_individual: int, r_shared: int) -> SavingsReport:
    """Total bytes saved by sharing one producer environment across n nodes."""
    if n < 0:
        raise NegativeSavingsInput(f"node count {n} negative")
    if r_shared < 0 or r_individual < r_shared:
        raise NegativeSavingsInput(
            f"need r_individual >= r_shared >= 0, got {r_individual} < {r_shared}"
        )
    return SavingsReport(
        node_count=n,
        r_individual=r_individual,
        r_shared=r_shared,
        savings=n * (r_individual - r_shared),
    )


# --- reporting ----------------------------------------------------------------

CSV_FIELDS = ("tx_id", "verdict", "computed_hash", "claimed_hash", "env_id", "ms")


def validation_rows(outcomes: Sequence[ValidationOutcome]) -> list[list[str]]:
    rows = []
    for o in outcomes:
        verdict = o.verdict.value
        if o.verdict is Verdict.INCONCLUSIVE and o.reason:
            verdict = f"inconclusive:{o.reason}"
        rows.append(
            [
                o.tx_id.hex(),
                verdict,
                hashlib.sha256(o.computed).hexdigest() if o.computed is not None else "",
                hashlib.sha256(o.claimed).hexdigest() if o.claimed is not None else "",
                o.env_id,
                str(o.ms),
            ]
        )
    return rows


def write_validation_csv(outcomes: Sequence[ValidationOutcome], path) -> None:
    if hasattr(path, "write"):
        writer = csv.writer(path, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        writer.writerows(validation_rows(outcomes))
        return
    buf = io.StringIO()
    write_validation_csv(outcomes, buf)
    Path(path).write_text(buf.getvalue())

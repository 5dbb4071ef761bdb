"""Stochastic race experiments and the storage-sharing scenario.

Mining times are exponential. In the cheat race a lone adversary tries
to mine one consumer block before the n-node producer network mines a
segment of L blocks; in the rebranch race the adversary must mine L
blocks before the network does. The network's per-block time is drawn
as Exponential(n/avg): the exact law of the minimum over n unit-node
draws, which keeps the 2048-node grid at desk scale.

Draw order inside a trial (fixed so streams are reproducible):

    cheat:    1 adversary draw, then L network draws
    rebranch: L adversary draws, then L network draws

Every trial runs on its own derived seed, so the estimate is a plain
sum of Bernoulli outcomes and execution order cannot change results.
Closed forms for both races follow from the event-merging view (each
merged event is the adversary's with probability 1/(n+1)) and serve as
independent oracles for the Monte-Carlo estimates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .rng import SplitMix64, mix
from .validator import SavingsReport, resource_savings

CHEAT = "cheat"
REBRANCH = "rebranch"
_MODEL_IDS = {CHEAT: 1, REBRANCH: 2}

DEFAULT_NODES = (2, 8, 32, 128, 512, 2048)
DEFAULT_LENGTHS = (2, 3, 4, 5, 6, 7, 8)
DEFAULT_TRIALS = 100_000


@dataclass(frozen=True)
class RaceConfig:
    producer_nodes: int
    segment_length: int
    avg_mining_time: float = 10.0
    trials: int = DEFAULT_TRIALS
    master_seed: int = 0

    def __post_init__(self):
        if self.producer_nodes < 1 or self.segment_length < 1:
            raise ValueError("need at least one node and one block")
        if self.avg_mining_time <= 0:
            raise ValueError("average mining time must be positive")


@dataclass(frozen=True)
class RaceResult:
    n: int
    L: int
    model: str
    estimate: float
    stderr: float
    trials: int
    seed: int


def sample_block_time(rate: float, rng: SplitMix64) -> float:
    """Exponential variate by inverse CDF; rng.random() is in (0, 1]."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return -math.log(rng.random()) / rate


def cheat_trial(cfg: RaceConfig, rng: SplitMix64) -> bool:
    """True when the adversary's single block lands before the segment."""
    adv_rate = 1.0 / cfg.avg_mining_time
    net_rate = cfg.producer_nodes / cfg.avg_mining_time
    adversary = sample_block_time(adv_rate, rng)
    segment = 0.0
    for _ in range(cfg.segment_length):
        segment += sample_block_time(net_rate, rng)
    return adversary < segment


def rebranch_trial(cfg: RaceConfig, rng: SplitMix64) -> bool:
    """True when the adversary mines L blocks before the network does."""
    adv_rate = 1.0 / cfg.avg_mining_time
    net_rate = cfg.producer_nodes / cfg.avg_mining_time
    adversary = 0.0
    for _ in range(cfg.segment_length):
        adversary += sample_block_time(adv_rate, rng)
    network = 0.0
    for _ in range(cfg.segment_length):
        network += sample_block_time(net_rate, rng)
    return adversary < network


def closed_form_cheat(n: int, L: int) -> float:
    """P(adversary's event precedes the network's L-th event) = 1-(n/(n+1))^L."""
    if n < 1 or L < 1:
        raise ValueError("need n >= 1 and L >= 1")
    return 1.0 - (n / (n + 1)) ** L


def closed_form_rebranch(n: int, L: int) -> float:
    """Negative-binomial tail: L adversary events before L network events."""
    if n < 1 or L < 1:
        raise ValueError("need n >= 1 and L >= 1")
    p = 1.0 / (n + 1)
    q = n / (n + 1)
    return sum(math.comb(L - 1 + k, k) * p**L * q**k for k in range(L))


def cell_seed(master_seed: int, model: str, n: int, L: int) -> int:
    """Per-cell seed independent of grid shape or execution order."""
    return mix(mix(mix(master_seed, _MODEL_IDS[model]), n), L)


def run_cell(model: str, n: int, L: int, cfg: RaceConfig) -> RaceResult:
    trial = cheat_trial if model == CHEAT else rebranch_trial
    cell_cfg = RaceConfig(
        producer_nodes=n,
        segment_length=L,
        avg_mining_time=cfg.avg_mining_time,
        trials=cfg.trials,
        master_seed=cfg.master_seed,
    )
    seed = cell_seed(cfg.master_seed, model, n, L)
    wins = 0
    for i in range(cfg.trials):
        wins += trial(cell_cfg, SplitMix64(mix(seed, i)))
    estimate = wins / cfg.trials
    stderr = math.sqrt(estimate * (1.0 - estimate) / cfg.trials)
    return RaceResult(
        n=n, L=L, model=model, estimate=estimate, stderr=stderr,
        trials=cfg.trials, seed=cfg.master_seed,
    )


def run_grid(
    model: str,
    n_values: Sequence[int],
    L_values: Sequence[int],
    cfg: RaceConfig,
) -> list[RaceResult]:
    if model not in _MODEL_IDS:
        raise ValueError(f"unknown model {model!r}")
    if not n_values or not L_values:
        raise ValueError("empty grid")
    return [run_cell(model, n, L, cfg) for n in n_values for L in L_values]


RACE_CSV_FIELDS = ("n", "L", "model", "estimate", "stderr", "trials", "seed")


def write_race_csv(results: Sequence[RaceResult], path) -> None:
    if hasattr(path, "write"):
        writer = csv.writer(path, lineterminator="\n")
        writer.writerow(RACE_CSV_FIELDS)
        for r in results:
            writer.writerow(
                [r.n, r.L, r.model, repr(r.estimate), repr(r.stderr), r.trials, r.seed]
            )
        return
    buf = io.StringIO()
    write_race_csv(results, buf)
    Path(path).write_text(buf.getvalue())


# --- storage-sharing scenario ---------------------------------------------


@dataclass(frozen=True)
class StorageSample:
    time_ms: int
    topology: str
    node_id: str
    role: str
    stored_bytes: int


@dataclass(frozen=True)
class StorageScenarioResult:
    samples: tuple[StorageSample, ...]
    shared_total: int
    individual_total: int
    savings_ratio: float
    savings: SavingsReport


STORAGE_CSV_FIELDS = ("time_ms", "topology", "node_id", "role", "stored_bytes")


def run_storage_scenario(
    producers_tx_interval: int,
    sample_interval: int,
    duration: int,
    sharers: int,
    *,
    block_interval: int = 10_000,
) -> StorageScenarioResult:
    """Producer-data byte accounting for shared vs per-node storage.

    A deterministic workload (one contract invoked every
    `producers_tx_interval` ms, blocks on a fixed cadence) is relayed to
    a group of `sharers` requesters plus one storage node; the non-shared
    baseline gives each of the sharers+1 nodes a full copy. All times
    are simulated milliseconds.
    """
    if sharers < 1:
        raise ValueError("need at least one sharer")
    if producers_tx_interval <= 0 or sample_interval <= 0 or duration <= 0:
        raise ValueError("intervals must be positive")

    from .harness import ProducerSim
    from .scenario import ChainSettings, ContractSpec, ScheduleEvent
    from .sync import HeaderImportStore, export_cross_txs, import_cross_txs, import_headers

    spec = ContractSpec(name="meter", template="seeded_draw", flow="classic")
    schedule = [ScheduleEvent(0, "deploy", "meter")]
    t = producers_tx_interval
    while t <= duration:
        schedule.append(ScheduleEvent(t, "invoke", "meter", "draw"))
        t += producers_tx_interval
    producer = ProducerSim(
        ChainSettings(difficulty_bits=0, block_time_ms=block_interval), seed=0
    )
    producer.run_schedule((spec,), schedule, None)

    # cumulative producer bytes at each block boundary
    store = HeaderImportStore()
    growth: list[tuple[int, int]] = []
    for block in producer.view.canonical_blocks():
        import_headers(store, [block.header])
        import_cross_txs(store, export_cross_txs(block))
        growth.append((block.header.timestamp, store.data_bytes()))

    def bytes_at(when: int) -> int:
        total = 0
        for ts, size in growth:
            if ts <= when:
                total = size
            else:
                break
        return total

    node_count = sharers + 1
    storage_id = f"node-{node_count}"
    samples: list[StorageSample] = []
    t = sample_interval
    while t <= duration:
        current = bytes_at(t)
        for i in range(1, node_count + 1):
            samples.append(
                StorageSample(t, "individual", f"node-{i}", "full-copy", current)
            )
        for i in range(1, sharers + 1):
            samples.append(StorageSample(t, "shared", f"node-{i}", "requester", 0))
        samples.append(StorageSample(t, "shared", storage_id, "storage", current))
        t += sample_interval

    final = bytes_at(duration)
    shared_total = final
    individual_total = node_count * final
    savings = resource_savings(sharers, final, 0)
    ratio = (
        (individual_total - shared_total) / individual_total if individual_total else 0.0
    )
    return StorageScenarioResult(
        samples=tuple(samples),
        shared_total=shared_total,
        individual_total=individual_total,
        savings_ratio=ratio,
        savings=savings,
    )


def write_storage_csv(result: StorageScenarioResult, path) -> None:
    if hasattr(path, "write"):
        writer = csv.writer(path, lineterminator="\n")
        writer.writerow(STORAGE_CSV_FIELDS)
        for s in result.samples:
            writer.writerow([s.time_ms, s.topology, s.node_id, s.role, s.stored_bytes])
        return
    buf = io.StringIO()
    write_storage_csv(result, buf)
    Path(path).write_text(buf.getvalue())

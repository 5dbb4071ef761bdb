"""Scenario files: a flat key-value-with-sections format (INI dialect).

Grammar (see README for the full reference):

    [scenario]           seed
    [producer]           node_count, difficulty_bits, block_time_ms,
                         max_block_size
    [consumer]           node_count, difficulty_bits, block_time_ms,
                         confirm_depth, share_storage
    [segment]            p_fake_avg, delta, beta_ms, avg_block_time_ms,
                         header_size, max_block_size, length (int | auto)
    [contract NAME]      template, flow, disposable, init, template args
    [schedule]           <key> = <time_ms> <action> <contract> [method] [args]
    [tamper]             tx_index, bit

Schedule actions are deploy / invoke / terminate. Parsing failures raise
ConfigError with section/field diagnostics and never leave partial
state behind.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .confirmation import ConfirmationError, SegmentConfig


class ConfigError(Exception):
    pass


TEMPLATES = ("random_sum", "accumulator", "constant", "seeded_draw")
FLOWS = ("classic", "embedded")
ACTIONS = ("deploy", "invoke", "terminate")

DEFAULT_METHODS = {
    "random_sum": "run",
    "accumulator": "add",
    "constant": "get",
    "seeded_draw": "draw",
}


@dataclass(frozen=True)
class ChainSettings:
    node_count: int = 1
    difficulty_bits: int = 8
    block_time_ms: int = 10_000
    max_block_size: int = 1 << 20


@dataclass(frozen=True)
class ConsumerSettings:
    node_count: int = 1
    difficulty_bits: int = 8
    block_time_ms: int = 10_000
    confirm_depth: int = 2
    share_storage: bool = False


@dataclass(frozen=True)
class ContractSpec:
    name: str
    template: str = "accumulator"
    flow: str = "classic"
    disposable: bool = False
    init: tuple[int, ...] = ()
    lo: int = 100
    span: int = 100 * 100 * 100 - 100 + 1
    value: int = 0


@dataclass(frozen=True)
class ScheduleEvent:
    time_ms: int
    action: str
    contract: str
    method: str | None = None
    params: tuple[int, ...] = ()


@dataclass(frozen=True)
class TamperSpec:
    tx_index: int
    bit: int = 0


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    producer: ChainSettings = field(default_factory=ChainSettings)
    consumer: ConsumerSettings = field(default_factory=ConsumerSettings)
    segment: SegmentConfig = field(
        default_factory=lambda: SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=300_000, avg_block_time_ms=10_000
        )
    )
    segment_length: int | None = None
    contracts: tuple[ContractSpec, ...] = ()
    schedule: tuple[ScheduleEvent, ...] = ()
    tamper: TamperSpec | None = None


def _get(section, key, cast, default, where):
    raw = section.get(key)
    if raw is None:
        return default
    raw = raw.strip()
    try:
        if cast is bool:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {key}: cannot parse {raw!r}") from exc


def _parse_ints(raw: str, where: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"[{where}] cannot parse integer list {raw!r}") from exc


def _parse_event(key: str, raw: str, contracts: dict[str, ContractSpec]) -> ScheduleEvent:
    where = f"schedule] {key}"
    tokens = raw.split()
    if len(tokens) < 3:
        raise ConfigError(f"[{where}: need '<time_ms> <action> <contract> ...'")
    try:
        time_ms = int(tokens[0])
    except ValueError as exc:
        raise ConfigError(f"[{where}: bad time {tokens[0]!r}") from exc
    if time_ms < 0:
        raise ConfigError(f"[{where}: negative time {time_ms}")
    action = tokens[1]
    if action not in ACTIONS:
        raise ConfigError(f"[{where}: unknown action {action!r}")
    name = tokens[2]
    spec = contracts.get(name)
    if spec is None:
        raise ConfigError(f"[{where}: unknown contract {name!r}")
    method = None
    params: tuple[int, ...] = ()
    if action == "invoke":
        rest = tokens[3:]
        if rest and not rest[0].lstrip("-").isdigit():
            method = rest[0]
            rest = rest[1:]
        else:
            method = DEFAULT_METHODS[spec.template]
        params = _parse_ints(" ".join(rest), where)
    elif len(tokens) > 3:
        raise ConfigError(f"[{where}: {action} takes no extra arguments")
    return ScheduleEvent(time_ms, action, name, method, params)


def _validate(scenario: Scenario) -> Scenario:
    names = [c.name for c in scenario.contracts]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate contract names")
    by_name = {c.name: c for c in scenario.contracts}
    invokes: dict[str, int] = {}
    deploys: dict[str, int] = {}
    for event in scenario.schedule:
        spec = by_name[event.contract]
        if event.action == "deploy":
            deploys[event.contract] = deploys.get(event.contract, 0) + 1
            if spec.flow == "embedded":
                raise ConfigError(
                    f"[schedule] contract {spec.name!r} is embedded: its first "
                    "invoke deploys it, remove the deploy event"
                )
        elif event.action == "invoke":
            invokes[event.contract] = invokes.get(event.contract, 0) + 1
    for spec in scenario.contracts:
        if spec.template not in TEMPLATES:
            raise ConfigError(f"[contract {spec.name}] unknown template {spec.template!r}")
        if spec.flow not in FLOWS:
            raise ConfigError(f"[contract {spec.name}] unknown flow {spec.flow!r}")
        if spec.flow == "classic" and invokes.get(spec.name) and not deploys.get(spec.name):
            raise ConfigError(
                f"[schedule] contract {spec.name!r} is invoked but never deployed"
            )
        if spec.disposable and invokes.get(spec.name, 0) > 1:
            raise ConfigError(
                f"[schedule] disposable contract {spec.name!r} invoked more than once"
            )
        if deploys.get(spec.name, 0) > 1:
            raise ConfigError(f"[schedule] contract {spec.name!r} deployed twice")
    if scenario.tamper is not None:
        claim_events = sum(1 for e in scenario.schedule if e.action == "invoke")
        if not 0 <= scenario.tamper.tx_index < claim_events:
            raise ConfigError(
                f"[tamper] tx_index {scenario.tamper.tx_index} out of range "
                f"(scenario has {claim_events} claim-carrying transactions)"
            )
    if scenario.segment_length is not None and scenario.segment_length < 1:
        raise ConfigError("[segment] length must be >= 1 or 'auto'")
    return scenario


def parse_scenario_text(text: str, *, seed_override: int | None = None) -> Scenario:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"scenario syntax error: {exc}") from exc

    scen = parser["scenario"] if parser.has_section("scenario") else {}
    seed = _get(scen, "seed", int, 0, "scenario")
    if seed_override is not None:
        seed = seed_override

    prod = parser["producer"] if parser.has_section("producer") else {}
    producer = ChainSettings(
        node_count=_get(prod, "node_count", int, 1, "producer"),
        difficulty_bits=_get(prod, "difficulty_bits", int, 8, "producer"),
        block_time_ms=_get(prod, "block_time_ms", int, 10_000, "producer"),
        max_block_size=_get(prod, "max_block_size", int, 1 << 20, "producer"),
    )
    cons = parser["consumer"] if parser.has_section("consumer") else {}
    consumer = ConsumerSettings(
        node_count=_get(cons, "node_count", int, 1, "consumer"),
        difficulty_bits=_get(cons, "difficulty_bits", int, 8, "consumer"),
        block_time_ms=_get(cons, "block_time_ms", int, 10_000, "consumer"),
        confirm_depth=_get(cons, "confirm_depth", int, 2, "consumer"),
        share_storage=_get(cons, "share_storage", bool, False, "consumer"),
    )
    seg = parser["segment"] if parser.has_section("segment") else {}
    try:
        segment = SegmentConfig(
            p_fake_avg=_get(seg, "p_fake_avg", float, 0.3, "segment"),
            delta=_get(seg, "delta", float, 0.01, "segment"),
            beta_ms=_get(seg, "beta_ms", int, 300_000, "segment"),
            avg_block_time_ms=_get(seg, "avg_block_time_ms", int, producer.block_time_ms, "segment"),
            header_size=_get(seg, "header_size", int, 91, "segment"),
            max_block_size=_get(seg, "max_block_size", int, producer.max_block_size, "segment"),
            confirm_depth=consumer.confirm_depth,
        )
    except ConfirmationError as exc:
        raise ConfigError(f"[segment] {exc}") from exc
    length_raw = seg.get("length", "auto") if seg else "auto"
    if isinstance(length_raw, str) and length_raw.strip().lower() == "auto":
        segment_length = None
    else:
        segment_length = _get(seg, "length", int, None, "segment")

    contracts = []
    for section in parser.sections():
        if not section.startswith("contract "):
            continue
        name = section[len("contract "):].strip()
        if not name:
            raise ConfigError(f"[{section}] missing contract name")
        sec = parser[section]
        where = f"contract {name}"
        template = sec.get("template", "accumulator").strip()
        contracts.append(
            ContractSpec(
                name=name,
                template=template,
                flow=sec.get("flow", "classic").strip(),
                disposable=_get(sec, "disposable", bool, False, where),
                init=_parse_ints(sec.get("init", ""), where),
                lo=_get(sec, "lo", int, 100, where),
                span=_get(sec, "span", int, 100 * 100 * 100 - 100 + 1, where),
                value=_get(sec, "value", int, 0, where),
            )
        )
    by_name = {c.name: c for c in contracts}

    schedule = []
    if parser.has_section("schedule"):
        for key, raw in parser["schedule"].items():
            schedule.append(_parse_event(key, raw, by_name))
    schedule.sort(key=lambda e: e.time_ms)

    tamper = None
    if parser.has_section("tamper"):
        sec = parser["tamper"]
        if sec.get("tx_index") is None:
            raise ConfigError("[tamper] tx_index is required")
        tamper = TamperSpec(
            tx_index=_get(sec, "tx_index", int, 0, "tamper"),
            bit=_get(sec, "bit", int, 0, "tamper"),
        )

    return _validate(
        Scenario(
            seed=seed,
            producer=producer,
            consumer=consumer,
            segment=segment,
            segment_length=segment_length,
            contracts=tuple(contracts),
            schedule=tuple(schedule),
            tamper=tamper,
        )
    )


def load_scenario(path: str | Path, *, seed_override: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario_text(text, seed_override=seed_override)

"""Deterministic contract runtime.

Contracts are method tables over a tiny stack language with named 64-bit
state cells. All arithmetic wraps modulo 2**64. The only entropy source
is the seed passed at invocation (derived from the transaction), so
re-running an invocation against the same pre-state reproduces the
result byte-for-byte — the property cross-chain validation relies on.

Instructions are plain tuples:

    ("push", n)            push literal n
    ("param", i)           push invocation parameter i (0 if absent)
    ("load", cell)         push state cell
    ("store", cell)        pop into state cell
    ("acc", cell)          pop and add into state cell
    ("add") ("sub") ("mul") ("mod")   binary ops; mod by zero yields 0
    ("lt") ("eq")          comparisons pushing 1/0
    ("rand")               push next PRNG draw
    ("loop", bound, body)  pop count, run body count times; count must
                           not exceed the static bound
    ("ret", k)             return the top k stack values (oldest first)

Every loop carries a static bound so the worst-case instruction count of
a method is computable at validation time and capped by the per-call
budget.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .rng import MASK64, SplitMix64

if TYPE_CHECKING:
    from .chain import Transaction

INSTRUCTION_BUDGET = 10_000_000

_BINARY_OPS = frozenset({"add", "sub", "mul", "mod", "lt", "eq"})
_CELL_OPS = frozenset({"load", "store", "acc"})


class VMError(Exception):
    pass


class InvalidCode(VMError):
    pass


class UnknownMethod(VMError):
    pass


class ContractTerminated(VMError):
    pass


class InstructionBudgetExceeded(VMError):
    pass


class ExecutionFault(VMError):
    """Malformed program state at runtime (e.g. stack underflow)."""


class Lifecycle(Enum):
    ACTIVE = "active"
    TERMINATED = "terminated"


Instruction = tuple
Method = tuple


@dataclass(frozen=True)
class ContractCode:
    methods: Mapping[str, tuple[Instruction, ...]]
    init_cells: tuple[str, ...]
    disposable: bool = False


@dataclass
class ContractInstance:
    contract_id: bytes
    code: ContractCode
    state: dict[str, int]
    lifecycle: Lifecycle
    time_begin: int
    time_end: int | None = None


@dataclass(frozen=True)
class InvocationResult:
    result_bytes: bytes
    instructions_executed: int
    state_delta: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class BurdenMetrics:
    time_occupation: int
    transaction_numbers: int


def _worst_case(instructions: Iterable[Instruction]) -> int:
    total = 0
    for op in instructions:
        total += 1
        if op[0] == "loop":
            total += op[1] * _worst_case(op[2])
    return total


def _validate_instructions(instructions, cells: frozenset[str]) -> None:
    if not isinstance(instructions, (list, tuple)):
        raise InvalidCode("instruction sequence must be a list or tuple")
    for op in instructions:
        if not isinstance(op, tuple) or not op or not isinstance(op[0], str):
            raise InvalidCode(f"malformed instruction {op!r}")
        tag = op[0]
        if tag == "push":
            if len(op) != 2 or not isinstance(op[1], int) or not 0 <= op[1] <= MASK64:
                raise InvalidCode(f"push needs one u64 operand: {op!r}")
        elif tag == "param":
            if len(op) != 2 or not isinstance(op[1], int) or op[1] < 0:
                raise InvalidCode(f"param needs a non-negative index: {op!r}")
        elif tag in _CELL_OPS:
            if len(op) != 2 or op[1] not in cells:
                raise InvalidCode(f"unknown state cell in {op!r}")
        elif tag in _BINARY_OPS or tag == "rand":
            if len(op) != 1:
                raise InvalidCode(f"{tag} takes no operands: {op!r}")
        elif tag == "loop":
            if (
                len(op) != 3
                or not isinstance(op[1], int)
                or op[1] < 0
                or op[1] > INSTRUCTION_BUDGET
            ):
                raise InvalidCode(f"loop needs a static bound and body: {op!r}")
            _validate_instructions(op[2], cells)
        elif tag == "ret":
            if len(op) != 2 or not isinstance(op[1], int) or op[1] < 0:
                raise InvalidCode(f"ret needs a non-negative count: {op!r}")
        else:
            raise InvalidCode(f"unknown opcode {tag!r}")


def validate_code(code: ContractCode) -> None:
    if len(set(code.init_cells)) != len(code.init_cells):
        raise InvalidCode("duplicate state cell names")
    cells = frozenset(code.init_cells)
    if not code.methods:
        return
    for name, instructions in code.methods.items():
        if not isinstance(name, str) or not name:
            raise InvalidCode(f"bad method name {name!r}")
        _validate_instructions(instructions, cells)
        worst = _worst_case(instructions)
        if worst > INSTRUCTION_BUDGET:
            raise InvalidCode(
                f"method {name!r} worst case {worst} exceeds budget {INSTRUCTION_BUDGET}"
            )


class _Return(Exception):
    def __init__(self, values: list[int]):
        self.values = values


def _run(instructions, stack, state, params, rng, counter) -> None:
    for op in instructions:
        counter[0] += 1
        if counter[0] > INSTRUCTION_BUDGET:
            raise InstructionBudgetExceeded(f"budget {INSTRUCTION_BUDGET} exhausted")
        tag = op[0]
        try:
            if tag == "push":
                stack.append(op[1])
            elif tag == "param":
                stack.append(params[op[1]] & MASK64 if op[1] < len(params) else 0)
            elif tag == "load":
                stack.append(state[op[1]])
            elif tag == "store":
                state[op[1]] = stack.pop()
            elif tag == "acc":
                state[op[1]] = (state[op[1]] + stack.pop()) & MASK64
            elif tag == "add":
                b, a = stack.pop(), stack.pop()
                stack.append((a + b) & MASK64)
            elif tag == "sub":
                b, a = stack.pop(), stack.pop()
                stack.append((a - b) & MASK64)
            elif tag == "mul":
                b, a = stack.pop(), stack.pop()
                stack.append((a * b) & MASK64)
            elif tag == "mod":
                b, a = stack.pop(), stack.pop()
                stack.append(a % b if b else 0)
            elif tag == "lt":
                b, a = stack.pop(), stack.pop()
                stack.append(1 if a < b else 0)
            elif tag == "eq":
                b, a = stack.pop(), stack.pop()
                stack.append(1 if a == b else 0)
            elif tag == "rand":
                stack.append(rng.next_u64())
            elif tag == "loop":
                count = stack.pop()
                if count > op[1]:
                    raise InstructionBudgetExceeded(
                        f"loop count {count} exceeds static bound {op[1]}"
                    )
                body = op[2]
                for _ in range(count):
                    _run(body, stack, state, params, rng, counter)
            elif tag == "ret":
                k = op[1]
                if k > len(stack):
                    raise ExecutionFault("ret count exceeds stack depth")
                raise _Return(stack[len(stack) - k :])
            else:
                raise ExecutionFault(f"unknown opcode {tag!r}")
        except IndexError as exc:
            raise ExecutionFault("stack underflow") from exc


def deploy(
    code: ContractCode,
    init_params: Sequence[int],
    deploy_tx_id: bytes,
    now: int,
) -> ContractInstance:
    """Create an active instance; state cells take init params positionally."""
    validate_code(code)
    state = {
        name: (init_params[i] & MASK64 if i < len(init_params) else 0)
        for i, name in enumerate(code.init_cells)
    }
    return ContractInstance(
        contract_id=hashlib.sha256(deploy_tx_id).digest(),
        code=code,
        state=state,
        lifecycle=Lifecycle.ACTIVE,
        time_begin=now,
    )


def invoke(
    instance: ContractInstance,
    method: str,
    params: Sequence[int],
    seed: int,
    now: int,
) -> InvocationResult:
    """Run a method deterministically; commits state only on success."""
    if instance.lifecycle is Lifecycle.TERMINATED:
        raise ContractTerminated(f"contract {instance.contract_id.hex()[:16]} terminated")
    instructions = instance.code.methods.get(method)
    if instructions is None:
        raise UnknownMethod(f"no method {method!r}")
    state = dict(instance.state)
    stack: list[int] = []
    counter = [0]
    values: list[int] = []
    try:
        _run(instructions, stack, state, params, SplitMix64(seed), counter)
    except _Return as ret:
        values = ret.values
    delta = {k: v for k, v in state.items() if instance.state[k] != v}
    instance.state = state
    if instance.code.disposable:
        instance.lifecycle = Lifecycle.TERMINATED
        instance.time_end = now
    return InvocationResult(
        result_bytes=b"".join(v.to_bytes(8, "big") for v in values),
        instructions_executed=counter[0],
        state_delta=delta,
    )


def terminate(instance: ContractInstance, now: int) -> None:
    if instance.lifecycle is Lifecycle.TERMINATED:
        raise ContractTerminated("already terminated")
    instance.lifecycle = Lifecycle.TERMINATED
    instance.time_end = now


def deploy_embedded(tx: "Transaction", now: int) -> tuple[ContractInstance, InvocationResult]:
    """Deploy from an embedded transaction and run its first invocation.

    One transaction performs both steps, so the instance begins life at
    invocation time.
    """
    from .chain import TxKind, core_tx_id, invocation_seed

    if tx.kind is not TxKind.EMBEDDED_DEPLOY_INVOKE:
        raise VMError(f"expected embedded deploy+invoke, got {tx.kind.name}")
    payload = tx.payload
    instance = deploy(payload.code, payload.init_params, core_tx_id(tx), now)
    result = invoke(instance, payload.method, payload.params, invocation_seed(tx), now)
    return instance, result


def compute_burden(
    instance: ContractInstance,
    related_txs: Sequence["Transaction"],
    horizon: int | None = None,
) -> BurdenMetrics:
    """Occupation time plus the count of validation-relevant transactions.

    For a still-active contract an observation horizon must be supplied.
    """
    from .chain import CONTRACT_TX_KINDS

    end = instance.time_end if instance.time_end is not None else horizon
    if end is None:
        raise ValueError("contract still active: supply an observation horizon")
    occupation = end - instance.time_begin
    if occupation < 0:
        raise ValueError(f"negative occupation time {occupation}")
    count = sum(1 for tx in related_txs if tx.kind in CONTRACT_TX_KINDS)
    return BurdenMetrics(time_occupation=occupation, transaction_numbers=count)


# --- reference contracts -------------------------------------------------

RANDOM_SUM_LO = 100
RANDOM_SUM_SPAN = 100 * 100 * 100 - RANDOM_SUM_LO + 1


def random_sum_contract(
    lo: int = RANDOM_SUM_LO, span: int = RANDOM_SUM_SPAN, disposable: bool = False
) -> ContractCode:
    """Draw a loop count in [lo, lo+span-1], then sum that many draws.

    The workload contract used throughout the experiments; `lo`/`span`
    can be scaled down for fast fixtures.
    """
    bound = lo + span - 1
    return ContractCode(
        methods={
            "run": (
                ("push", 0),
                ("store", "total"),
                ("rand",),
                ("push", span),
                ("mod",),
                ("push", lo),
                ("add",),
                ("loop", bound, (("rand",), ("acc", "total"))),
                ("load", "total"),
                ("ret", 1),
            )
        },
        init_cells=("total",),
        disposable=disposable,
    )


def accumulator_contract(disposable: bool = False) -> ContractCode:
    """Running total across invocations; results are order-dependent."""
    return ContractCode(
        methods={
            "add": (
                ("param", 0),
                ("acc", "acc"),
                ("load", "acc"),
                ("ret", 1),
            ),
            "mix": (
                ("rand",),
                ("load", "acc"),
                ("mul",),
                ("param", 0),
                ("add",),
                ("store", "acc"),
                ("load", "acc"),
                ("ret", 1),
            ),
        },
        init_cells=("acc",),
        disposable=disposable,
    )


def constant_contract(value: int, disposable: bool = False) -> ContractCode:
    return ContractCode(
        methods={"get": (("push", value & MASK64), ("ret", 1))},
        init_cells=(),
        disposable=disposable,
    )


def seeded_draw_contract(disposable: bool = False) -> ContractCode:
    """Return the first PRNG draw; cheap and fully seed-sensitive."""
    return ContractCode(
        methods={"draw": (("rand",), ("ret", 1))},
        init_cells=(),
        disposable=disposable,
    )

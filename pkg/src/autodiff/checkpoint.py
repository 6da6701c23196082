"""
Recompute-instead-of-store segments.

``checkpoint_segment`` runs a pure function of its inputs on a private
sub-tape, keeps only the outputs on the outer tape and throws the interior
away. The backward pass replays the segment on a fresh sub-tape and
back-propagates through it. Segments nest: the function may itself call
``checkpoint_segment`` on the sub-tape it receives.
"""
from typing import Callable, Sequence, Tuple, Union

from src.autodiff.tape import Tape, VarId, accumulate

SegmentFn = Callable[..., Union[VarId, Sequence[VarId]]]


def _run(
    tape: Tape, fn: SegmentFn, values
) -> Tuple[Tape, Tuple[VarId, ...], Tuple[VarId, ...], bool]:
    sub = Tape(enabled=tape.enabled, counter=tape.counter)
    sub_inputs = tuple(sub.variable(v) for v in values)
    outputs = fn(sub, *sub_inputs)
    single = isinstance(outputs, VarId)
    outputs = (outputs,) if single else tuple(outputs)
    return sub, sub_inputs, outputs, single


def checkpoint_segment(
    tape: Tape, fn: SegmentFn, *inputs: VarId
) -> Union[VarId, Tuple[VarId, ...]]:
    """
    Evaluate ``fn(sub_tape, *sub_inputs)`` without keeping its intermediates.

    Returns a single ``VarId`` or a tuple, mirroring what ``fn`` returns.
    """
    values = tuple(tape.value(v) for v in inputs)
    sub, _, outputs, single = _run(tape, fn, values)
    output_values = tuple(sub.value(o) for o in outputs)
    sub.release()

    def vjp(cotangent):
        replay, replay_inputs, replay_outputs, _ = _run(tape, fn, values)
        seeds = {}
        for out, cot in zip(replay_outputs, cotangent):
            if cot is not None:
                seeds[out.index] = accumulate(seeds.get(out.index), cot)
        grads = replay.backprop(seeds)
        result = [grads[v] for v in replay_inputs]
        replay.release()
        return result

    packed = tape.record_node("checkpoint", inputs, output_values, vjp)
    unpacked = tuple(_unpack(tape, packed, k) for k in range(len(output_values)))
    return unpacked[0] if single else unpacked


def _unpack(tape: Tape, packed: VarId, k: int) -> VarId:
    parts = packed.shape.parts

    def vjp(cot):
        return [tuple(cot if j == k else None for j in range(len(parts)))]

    return tape.record_node("unpack", (packed,), tape.value(packed)[k], vjp)

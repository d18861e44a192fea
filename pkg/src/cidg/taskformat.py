"""Rendering of examples and triplets into (source, target) token sequences.

The paper's four conditionals are numbered 1-4 in TaskCase. Source layouts:

    case 1  <gen_inst> [persona] [CTX] turns [RSP] response  ->  instruction
    case 2  <gen_resp> [INS] instruction [persona] [CTX] turns  ->  response
    case 3  <gen_inst> [persona] [CTX] turns  ->  instruction
    case 4  <gen_resp> [persona] [CTX] turns  ->  response

plus the fill-in-the-blank pair for the instruction generator:

    <mask_0> [CTX] x [RSP] y  ->  <mask_0> instruction

Only context turns are ever truncated: whole oldest turns go first, then the
leading tokens of the single remaining turn. The sentinel, instruction block,
response block, persona block, and [CTX] marker are a fixed skeleton; if the
skeleton alone exceeds the budget the pair is unbuildable and we raise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np

from .corpus import DialogueExample, LabeledExample, Turn
from .tokenizer import (
    BOS,
    CTX,
    EOS,
    GEN_INST,
    GEN_RESP,
    INS,
    MASK_0,
    PAD,
    PER,
    RSP,
    SEP,
    SPKA,
    SPKB,
    Vocabulary,
    encode,
)

INSTGEN = "instgen"


class TaskCase(Enum):
    """The four conditional formulations, numbered as in the framework."""

    INSTR_FROM_CONTEXT_AND_RESPONSE = 1
    RESP_FROM_INSTRUCTION_AND_CONTEXT = 2
    INSTR_FROM_CONTEXT = 3
    RESP_FROM_CONTEXT = 4


CASES = (
    TaskCase.INSTR_FROM_CONTEXT_AND_RESPONSE,
    TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT,
    TaskCase.INSTR_FROM_CONTEXT,
    TaskCase.RESP_FROM_CONTEXT,
)

_SPEAKER_MARKER = {"A": SPKA, "B": SPKB}


class SourceOverflowError(ValueError):
    """The untruncatable skeleton of a source already exceeds max_src_len."""


@dataclass(frozen=True)
class SeqPair:
    source: tuple[int, ...]
    target: tuple[int, ...]  # empty for inference pairs, else ends with EOS
    case: TaskCase | Literal["instgen"]

    def __post_init__(self):
        if not self.source:
            raise ValueError("source is empty")
        if self.target and self.target[-1] != EOS:
            raise ValueError("target must end with EOS")
        if PAD in self.target:
            raise ValueError("target contains PAD")


def serialize_context(example: DialogueExample) -> str:
    """Flat marker layout of persona + turns, the X string fed to the labeler."""
    parts: list[str] = []
    if example.persona:
        parts.append(PER)
        for i, p in enumerate(example.persona):
            if i:
                parts.append(SEP)
            parts.append(p)
    parts.append(CTX)
    for turn in example.context:
        parts.append(_SPEAKER_MARKER[turn.speaker])
        parts.append(turn.text)
    return " ".join(parts)


def _persona_ids(persona, vocab: Vocabulary) -> list[int]:
    if not persona:
        return []
    ids = [vocab.token_to_id(PER)]
    for i, p in enumerate(persona):
        if i:
            ids.append(vocab.token_to_id(SEP))
        ids.extend(encode(vocab, p))
    return ids


def _turn_blocks(context: tuple[Turn, ...], vocab: Vocabulary) -> list[list[int]]:
    return [
        [vocab.token_to_id(_SPEAKER_MARKER[t.speaker])] + encode(vocab, t.text) for t in context
    ]


def _fit_turns(blocks: list[list[int]], budget: int) -> list[int]:
    # whole oldest turns dropped first, then left-truncate the one remaining turn
    blocks = list(blocks)
    total = sum(len(b) for b in blocks)
    while len(blocks) > 1 and total > budget:
        total -= len(blocks.pop(0))
    kept = [tok for b in blocks for tok in b]
    if len(kept) > budget:
        kept = kept[len(kept) - budget :] if budget > 0 else []
    return kept


def build_source(
    example: DialogueExample,
    case: TaskCase,
    vocab: Vocabulary,
    max_src_len: int,
    instruction: str | None = None,
) -> list[int]:
    """Case source for training or inference.

    Case 1 embeds the example's own (gold) response; case 2 requires an
    instruction; cases 3 and 4 condition on context alone.
    """
    tid = vocab.token_to_id
    if case is TaskCase.INSTR_FROM_CONTEXT_AND_RESPONSE:
        head = [tid(GEN_INST)]
        tail = [tid(RSP)] + encode(vocab, example.response)
    elif case is TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT:
        if instruction is None:
            raise ValueError("case 2 requires an instruction")
        head = [tid(GEN_RESP), tid(INS)] + encode(vocab, instruction)
        tail = []
    elif case is TaskCase.INSTR_FROM_CONTEXT:
        head = [tid(GEN_INST)]
        tail = []
    elif case is TaskCase.RESP_FROM_CONTEXT:
        head = [tid(GEN_RESP)]
        tail = []
    else:
        raise ValueError(f"unknown case {case!r}")

    skeleton = head + _persona_ids(example.persona, vocab) + [tid(CTX)]
    fixed_len = len(skeleton) + len(tail)
    if fixed_len > max_src_len:
        raise SourceOverflowError(
            f"case {case.value} skeleton needs {fixed_len} tokens, budget is {max_src_len}"
        )
    turns = _fit_turns(_turn_blocks(example.context, vocab), max_src_len - fixed_len)
    return skeleton + turns + tail


def format_case(
    ex: LabeledExample, case: TaskCase, vocab: Vocabulary, max_src_len: int
) -> SeqPair:
    """Training pair for one of the four cases."""
    source = build_source(ex.example, case, vocab, max_src_len, instruction=ex.instruction)
    if case in (TaskCase.INSTR_FROM_CONTEXT_AND_RESPONSE, TaskCase.INSTR_FROM_CONTEXT):
        target = encode(vocab, ex.instruction)
    else:
        target = encode(vocab, ex.example.response)
    return SeqPair(source=tuple(source), target=tuple(target) + (EOS,), case=case)


def format_instgen(
    x: str,
    y: str,
    instruction: str | None,
    vocab: Vocabulary,
    max_src_len: int,
) -> SeqPair:
    """Fill-in-the-blank pair: the masked instruction is predicted from (x, y)."""
    if not y:
        raise ValueError("y must be non-empty")
    tid = vocab.token_to_id
    y_ids = encode(vocab, y)
    budget_x = max_src_len - 3 - len(y_ids)
    if budget_x < 0:
        raise SourceOverflowError(
            f"output needs {len(y_ids)} tokens, budget leaves {max_src_len - 3}"
        )
    x_ids = encode(vocab, x)
    if len(x_ids) > budget_x:
        x_ids = x_ids[len(x_ids) - budget_x :]
    source = [tid(MASK_0), tid(CTX)] + x_ids + [tid(RSP)] + y_ids
    if instruction is None:
        target: tuple[int, ...] = ()
    else:
        target = (tid(MASK_0),) + tuple(encode(vocab, instruction)) + (EOS,)
    return SeqPair(source=tuple(source), target=target, case=INSTGEN)


def sample_case(rng: np.random.Generator, mode: str) -> TaskCase:
    """One case per example per epoch; "response-only" pins case 4."""
    if mode == "response-only":
        return TaskCase.RESP_FROM_CONTEXT
    if mode == "full":
        return CASES[int(rng.integers(0, 4))]
    raise ValueError(f"unknown training mode {mode!r}")

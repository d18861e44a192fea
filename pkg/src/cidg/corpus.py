"""Dialogue corpora, instruction triplets, and labeled examples.

One normalized JSONL schema per record type (see the CLI module docs for the
bit-level layout). All types are frozen dataclasses: loaders validate on
construction and everything downstream can share records across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

SPEAKERS = ("A", "B")


class CorpusError(ValueError):
    """Malformed record or invariant violation; carries the source line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Turn:
    speaker: str  # "A" or "B"
    text: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise CorpusError(f"speaker must be one of {SPEAKERS}, got {self.speaker!r}")
        if not self.text.strip():
            raise CorpusError("turn text is empty")


@dataclass(frozen=True)
class Dialogue:
    id: str
    persona: tuple[str, ...]
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.id:
            raise CorpusError("dialogue id is empty")
        if len(self.turns) < 2:
            raise CorpusError(f"dialogue {self.id!r} has {len(self.turns)} turns, need >= 2")
        for i, turn in enumerate(self.turns):
            expected = SPEAKERS[i % 2]
            if turn.speaker != expected:
                raise CorpusError(
                    f"dialogue {self.id!r}: turn {i} spoken by {turn.speaker}, "
                    f"expected {expected} (speakers must alternate starting from A)"
                )


@dataclass(frozen=True)
class DialogueExample:
    """One (context, response) training pair cut from a dialogue at turn t."""

    dialogue_id: str
    turn_index: int
    persona: tuple[str, ...]
    context: tuple[Turn, ...]  # turns[0..t-1]
    response: str

    def __post_init__(self):
        if self.turn_index < 1:
            raise CorpusError(f"turn_index must be >= 1, got {self.turn_index}")
        if not self.context:
            raise CorpusError("example context is empty")


@dataclass(frozen=True)
class InstructionTriplet:
    instruction: str
    input: str
    output: str

    def __post_init__(self):
        if not self.instruction:
            raise CorpusError("triplet instruction is empty")
        if not self.output:
            raise CorpusError("triplet output is empty")


@dataclass(frozen=True)
class LabeledExample:
    example: DialogueExample
    instruction: str

    def __post_init__(self):
        if not self.instruction:
            raise CorpusError("instruction is empty")


def _parse_json_line(raw: str, lineno: int) -> dict:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from exc
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object", lineno)
    return record


def _require(record: dict, key: str, lineno: int):
    if key not in record:
        raise CorpusError(f"missing field {key!r}", lineno)
    return record[key]


def load_dialogues(path) -> list[Dialogue]:
    """Read dialogues.jsonl; every record is validated against the Dialogue invariants.

    Raises CorpusError naming the offending line, including duplicate ids.
    """
    dialogues: list[Dialogue] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = _parse_json_line(raw, lineno)
            did = _require(record, "id", lineno)
            persona = record.get("persona", [])
            turns_raw = _require(record, "turns", lineno)
            if not isinstance(persona, list) or not all(isinstance(p, str) for p in persona):
                raise CorpusError("persona must be a list of strings", lineno)
            if not isinstance(turns_raw, list):
                raise CorpusError("turns must be a list", lineno)
            try:
                turns = tuple(
                    Turn(speaker=_require(t, "speaker", lineno), text=_require(t, "text", lineno))
                    for t in turns_raw
                )
                dialogue = Dialogue(id=str(did), persona=tuple(persona), turns=turns)
            except CorpusError as exc:
                if exc.line is None:
                    raise CorpusError(str(exc), lineno) from exc
                raise
            if dialogue.id in seen_ids:
                raise CorpusError(f"duplicate dialogue id {dialogue.id!r}", lineno)
            seen_ids.add(dialogue.id)
            dialogues.append(dialogue)
    return dialogues


def expand_examples(dialogues: Iterable[Dialogue]) -> list[DialogueExample]:
    """A dialogue with T turns yields T-1 examples, one per target turn index."""
    examples = []
    for d in dialogues:
        for t in range(1, len(d.turns)):
            examples.append(
                DialogueExample(
                    dialogue_id=d.id,
                    turn_index=t,
                    persona=d.persona,
                    context=d.turns[:t],
                    response=d.turns[t].text,
                )
            )
    return examples


def load_triplets(path) -> list[InstructionTriplet]:
    triplets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = _parse_json_line(raw, lineno)
            try:
                triplets.append(
                    InstructionTriplet(
                        instruction=_require(record, "instruction", lineno),
                        input=record.get("input", ""),
                        output=_require(record, "output", lineno),
                    )
                )
            except CorpusError as exc:
                if exc.line is None:
                    raise CorpusError(str(exc), lineno) from exc
                raise
    return triplets


def attach_instructions(
    examples: list[DialogueExample], instructions: list[str]
) -> list[LabeledExample]:
    """Positional join of generated instructions back onto their examples."""
    if len(examples) != len(instructions):
        raise CorpusError(
            f"length mismatch: {len(examples)} examples vs {len(instructions)} instructions"
        )
    labeled = []
    for pos, (example, instruction) in enumerate(zip(examples, instructions)):
        if not instruction:
            raise CorpusError(f"empty instruction at position {pos}")
        labeled.append(LabeledExample(example=example, instruction=instruction))
    return labeled


def save_dialogues(dialogues: Iterable[Dialogue], path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(
                json.dumps(
                    {
                        "id": d.id,
                        "persona": list(d.persona),
                        "turns": [{"speaker": t.speaker, "text": t.text} for t in d.turns],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def save_triplets(triplets: Iterable[InstructionTriplet], path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {"instruction": t.instruction, "input": t.input, "output": t.output},
                    ensure_ascii=False,
                )
                + "\n"
            )

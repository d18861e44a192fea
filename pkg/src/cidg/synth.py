"""Synthetic corpora for experiments, demos, and the acceptance suite.

`intent_corpus` builds the directional-ordering experiment. Each first turn
carries an intent cue (the topic word after "regarding the") buried among a
distractor topic and variable filler; the cue deterministically selects the
response template. The context also mentions two candidate filler subjects,
and the response tail names one of them: training repeats each context with a
3:1 majority toward the first-mentioned subject, so the tail is genuinely
ambiguous given context alone. The gold instruction verbalizes the cue and the
gold subject, which is exactly why conditioning on it (or on the gold
response) beats decoding from raw context: an instruction-guided model copies
the subject from the instruction, while a context-only model can at best learn
the majority rule. Test dialogues pair each cue with a held-out distractor.
"""

from __future__ import annotations

import numpy as np

from .corpus import Dialogue, InstructionTriplet, LabeledExample, Turn, expand_examples

INTENT_CORES = {
    "weather": "the weather desk reports clear skies and a warm breeze",
    "food": "the food stall serves warm stew with fresh bread",
    "music": "the music band plays a lively tune on the stage",
    "sport": "the sport team wins the final match with ease",
    "travel": "the travel office books a long trip across the sea",
    "garden": "the garden crew plants bright flowers along the path",
    "school": "the school class learns a hard lesson with care",
    "market": "the market square fills with busy traders at dawn",
}

FILLER_SUBJECTS = (
    "journey", "harvest", "contest", "lecture", "festival", "meeting", "voyage", "parade",
)

_OPENERS = ("hey there", "well then", "so today", "listen up", "right now", "you know")
_CLOSERS = ("if you can", "when you reply", "for me now", "as you like", "this time", "in short")


def intent_response(cue: str, subject: str) -> str:
    return INTENT_CORES[cue] + f" concerning the {subject}"


def intent_instruction(cue: str, subject: str) -> str:
    return f"give the {cue} update concerning the {subject}"


def gold_of_response(response: str) -> tuple[str, str]:
    """(cue, subject) back out of a gold response string."""
    words = response.split()
    return words[1], words[-1]


def _context_text(cue: str, distractor: str, variant: int, f1: str, f2: str) -> str:
    opener = _OPENERS[variant % len(_OPENERS)]
    closer = _CLOSERS[(variant * 5 + 2) % len(_CLOSERS)]
    if variant % 2 == 0:
        return (
            f"{opener} we spoke about the {distractor} but i ask regarding the {cue} "
            f"maybe for the {f1} or the {f2} {closer}"
        )
    return (
        f"{opener} regarding the {cue} i wonder about the {f1} or maybe the {f2} "
        f"even after the {distractor} {closer}"
    )


def intent_corpus() -> tuple[list[LabeledExample], list[Dialogue]]:
    """(train labeled examples, held-out test dialogues) for the ordering experiment."""
    cues = list(INTENT_CORES)
    train: list[Dialogue] = []
    test: list[Dialogue] = []
    idx = 0
    for i, cue in enumerate(cues):
        others = [c for c in cues if c != cue]
        train_distractors = [others[(i + k) % 7] for k in (0, 3)]
        test_distractors = [others[(i + 5) % 7], others[(i + 6) % 7]]
        for j, d in enumerate(train_distractors):
            for v in range(2):
                f1 = FILLER_SUBJECTS[(i + 2 * j + v) % 8]
                f2 = FILLER_SUBJECTS[(i + 2 * j + v + 3) % 8]
                text = _context_text(cue, d, v, f1, f2)
                for gold in (f1, f1, f1, f2):  # 3:1 majority toward the first mention
                    train.append(
                        Dialogue(
                            id=f"x{idx}",
                            persona=(),
                            turns=(Turn("A", text), Turn("B", intent_response(cue, gold))),
                        )
                    )
                    idx += 1
        for k, d in enumerate(test_distractors):
            for v in range(2):
                f1 = FILLER_SUBJECTS[(i + v + k + 1) % 8]
                f2 = FILLER_SUBJECTS[(i + v + k + 5) % 8]
                gold = f1 if (i + v + k) % 4 != 0 else f2  # test matches the 3:1 marginal
                test.append(
                    Dialogue(
                        id=f"t{idx}",
                        persona=(),
                        turns=(
                            Turn("A", _context_text(cue, d, v, f1, f2)),
                            Turn("B", intent_response(cue, gold)),
                        ),
                    )
                )
                idx += 1
    examples = expand_examples(train)
    labeled = [
        LabeledExample(example=ex, instruction=intent_instruction(*gold_of_response(ex.response)))
        for ex in examples
    ]
    return labeled, test


def random_dialogues(n: int, seed: int = 0, with_persona: bool = False) -> list[Dialogue]:
    """Small filler dialogues with 2-4 alternating turns."""
    rng = np.random.default_rng(seed)
    nouns = ("coffee", "rain", "books", "trains", "cats", "bread", "maps", "songs")
    verbs = ("like", "want", "see", "make", "find", "hear")
    dialogues = []
    for i in range(n):
        n_turns = int(rng.integers(2, 5))
        turns = []
        for t in range(n_turns):
            noun = nouns[int(rng.integers(0, len(nouns)))]
            verb = verbs[int(rng.integers(0, len(verbs)))]
            turns.append(Turn("AB"[t % 2], f"i {verb} the {noun} today"))
        persona = (f"i collect {nouns[i % len(nouns)]}",) if with_persona else ()
        dialogues.append(Dialogue(id=f"r{i}", persona=persona, turns=tuple(turns)))
    return dialogues


def tiny_triplets(n: int = 24) -> list[InstructionTriplet]:
    """{instruction, input, output} records shaped like self-generated task data."""
    tasks = (
        ("repeat the word", "echo {w}", "{w}"),
        ("name the color of {w}", "", "it is plain"),
        ("answer the question about {w}", "what about {w} ?", "the {w} is fine"),
        ("greet the person named {w}", "{w} arrives", "hello {w}"),
    )
    words = ("sun", "map", "door", "tree", "boat", "lamp", "road", "bird")
    triplets = []
    for i in range(n):
        instruction, x, y = tasks[i % len(tasks)]
        w = words[i % len(words)]
        triplets.append(
            InstructionTriplet(
                instruction=instruction.format(w=w),
                input=x.format(w=w),
                output=y.format(w=w),
            )
        )
    return triplets

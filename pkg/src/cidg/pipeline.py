"""End-to-end pipeline: train the instruction generator, label a dialogue
corpus, multi-task train the dialogue model, generate under the ablation
modes, and evaluate.

All stages are pure functions of (config, input files, seed); running any
stage twice produces byte-identical outputs, which the acceptance suite
checks. Generation modes follow the ablation table: `none` (no instructions,
case 4 only), `fixed` (round-robin over a small human-written set),
`generated_naive` / `generated_iterative` (self-generated instructions), and
`oracle` (instruction decoded with the gold response visible).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corpus import (
    CorpusError,
    DialogueExample,
    LabeledExample,
    Turn,
    attach_instructions,
    expand_examples,
    load_dialogues,
    load_triplets,
)
from .decoding import (
    DecodeConfig,
    beam_search,
    generate_iterative,
    generate_naive,
    generate_oracle,
)
from .metrics import EvalReport, evaluate
from .model import ModelConfig, init_model
from .taskformat import TaskCase, build_source, format_instgen, serialize_context
from .tokenizer import Vocabulary, build_vocab, decode
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

FALLBACK_INSTRUCTION = "respond to the dialogue"

GENERATION_MODES = ("none", "fixed", "generated_naive", "generated_iterative", "oracle")

DEFAULT_FIXED_INSTRUCTIONS = (
    "given a context , generate the next response",
    "continue the conversation naturally",
    "given the dialogue history , write the next turn",
    "reply to the previous message",
)


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    dialogues_path: str = "dialogues.jsonl"
    test_path: str = "test.jsonl"
    triplets_path: str = "triplets.jsonl"
    labeled_path: str = "labeled.jsonl"
    instgen_checkpoint: str = "instgen.ckpt"
    dialog_checkpoint: str = "dialog.ckpt"
    generations_path: str = "generations.jsonl"
    report_path: str = "report.json"
    instruction_mode: str = "generated_iterative"
    fixed_instruction_set: tuple[str, ...] = DEFAULT_FIXED_INSTRUCTIONS
    seed: int = 0
    min_freq: int = 1
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=2048))
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        if self.instruction_mode not in GENERATION_MODES:
            raise ValueError(
                f"instruction_mode must be one of {GENERATION_MODES}, got {self.instruction_mode!r}"
            )
        if self.instruction_mode == "fixed" and not 3 <= len(self.fixed_instruction_set) <= 5:
            raise ValueError("fixed mode requires 3 to 5 fixed instructions")

    def resolve(self, name: str) -> Path:
        """Relative paths are rooted at data_dir (or $CIDG_DATA_DIR, or cwd)."""
        raw = Path(getattr(self, name))
        if raw.is_absolute():
            return raw
        root = self.data_dir or os.environ.get("CIDG_DATA_DIR", "")
        return Path(root) / raw if root else raw


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_DECODE_KEYS = {f.name for f in fields(DecodeConfig)}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"model", "train", "decode"}


def parse_flat_config(path) -> dict:
    """`key = value` lines; values parsed as JSON when possible, else strings."""
    mapping: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = key.strip()
            value = value.strip()
            try:
                mapping[key] = json.loads(value)
            except json.JSONDecodeError:
                mapping[key] = value
    return mapping


def config_from_mapping(mapping: dict) -> RunConfig:
    run_kwargs: dict = {}
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    decode_kwargs: dict = {}
    for key, value in mapping.items():
        if key in _RUN_KEYS:
            if key == "fixed_instruction_set":
                if not isinstance(value, list):
                    raise ValueError("fixed_instruction_set must be a JSON list of strings")
                value = tuple(value)
            run_kwargs[key] = value
        elif key in _MODEL_KEYS:
            model_kwargs[key] = value
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = value
        elif key in _DECODE_KEYS:
            decode_kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    seed = int(run_kwargs.get("seed", 0))
    model_kwargs.setdefault("vocab_size", 2048)
    return RunConfig(
        **run_kwargs,
        model=ModelConfig(**model_kwargs),
        train=TrainConfig(seed=seed, **train_kwargs),
        decode=DecodeConfig(**decode_kwargs),
    )


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    mapping = parse_flat_config(path) if path else {}
    if overrides:
        mapping.update(overrides)
    return config_from_mapping(mapping)


def _write_history(history: list[float], path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(history, fh)
        fh.write("\n")


def _require_file(path: Path, hint: str):
    if not path.is_file():
        raise FileNotFoundError(f"{hint} not found at {path} (set data_dir or $CIDG_DATA_DIR)")


def _sized_model_config(base: ModelConfig, vocab: Vocabulary) -> ModelConfig:
    return replace(base, vocab_size=len(vocab))


def cmd_train_instgen(config: RunConfig) -> Path:
    """Train the fill-in-the-blank instruction generator on {I, X, Y} triplets."""
    triplets_path = config.resolve("triplets_path")
    _require_file(triplets_path, "triplets file")
    triplets = load_triplets(triplets_path)
    if not triplets:
        raise CorpusError(f"{triplets_path} contains no triplets")
    texts = [t.instruction for t in triplets] + [t.input for t in triplets] + [t.output for t in triplets]
    vocab = build_vocab(texts, min_freq=config.min_freq, max_size=config.model.vocab_size)
    params = init_model(_sized_model_config(config.model, vocab), seed=config.seed)
    result = train(params, triplets, config.train, mode="instgen", vocab=vocab)
    out = config.resolve("instgen_checkpoint")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out)
    _write_history(result.history, out.with_suffix(out.suffix + ".history.json"))
    return out


def label_examples(
    ckpt: Checkpoint, examples: list[DialogueExample], decode_cfg: DecodeConfig, max_src_len: int
) -> list[dict]:
    """Instruction record per example, in order; empty decodes get the fallback."""
    records = []
    for ex in examples:
        pair = format_instgen(
            serialize_context(ex), ex.response, None, ckpt.vocab, max_src_len
        )
        text = decode(ckpt.vocab, beam_search(ckpt.params, list(pair.source), decode_cfg))
        fallback = not text
        records.append(
            {
                "dialogue_id": ex.dialogue_id,
                "turn_index": ex.turn_index,
                "instruction": text if text else FALLBACK_INSTRUCTION,
                "fallback": fallback,
            }
        )
    return records


def cmd_label(config: RunConfig) -> Path:
    ckpt_path = config.resolve("instgen_checkpoint")
    _require_file(ckpt_path, "instruction-generator checkpoint")
    dialogues_path = config.resolve("dialogues_path")
    _require_file(dialogues_path, "dialogues file")
    ckpt = load_checkpoint(ckpt_path)
    examples = expand_examples(load_dialogues(dialogues_path))
    records = label_examples(ckpt, examples, config.decode, config.train.max_src_len)
    out = config.resolve("labeled_path")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return out


def load_labeled(path, examples: list[DialogueExample]) -> list[LabeledExample]:
    """Join labeled.jsonl records back onto expanded examples, validating ids."""
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if len(records) != len(examples):
        raise CorpusError(
            f"labeled file has {len(records)} records but corpus expands to {len(examples)} examples"
        )
    for i, (record, ex) in enumerate(zip(records, examples)):
        if (record["dialogue_id"], record["turn_index"]) != (ex.dialogue_id, ex.turn_index):
            raise CorpusError(
                f"labeled record {i} is ({record['dialogue_id']}, {record['turn_index']}), "
                f"expected ({ex.dialogue_id}, {ex.turn_index})"
            )
    return attach_instructions(examples, [r["instruction"] for r in records])


def cmd_train_dialog(config: RunConfig) -> Path:
    """Multi-task train the dialogue model; mode none trains case 4 only."""
    dialogues_path = config.resolve("dialogues_path")
    _require_file(dialogues_path, "dialogues file")
    dialogues = load_dialogues(dialogues_path)
    examples = expand_examples(dialogues)
    if config.instruction_mode == "none":
        labeled = attach_instructions(examples, [FALLBACK_INSTRUCTION] * len(examples))
        train_mode = "response-only"
    else:
        labeled_path = config.resolve("labeled_path")
        _require_file(labeled_path, "labeled file")
        labeled = load_labeled(labeled_path, examples)
        train_mode = "full"
    texts = [t.text for d in dialogues for t in d.turns]
    texts += [p for d in dialogues for p in d.persona]
    texts += [ex.instruction for ex in labeled]
    vocab = build_vocab(texts, min_freq=config.min_freq, max_size=config.model.vocab_size)
    params = init_model(_sized_model_config(config.model, vocab), seed=config.seed)
    result = train(params, labeled, config.train, mode=train_mode, vocab=vocab)
    out = config.resolve("dialog_checkpoint")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out)
    _write_history(result.history, out.with_suffix(out.suffix + ".history.json"))
    return out


def generate_records(
    ckpt: Checkpoint, examples: list[DialogueExample], config: RunConfig
) -> list[dict]:
    mode = config.instruction_mode
    max_src_len = config.train.max_src_len
    dcfg = config.decode
    records = []
    for i, ex in enumerate(examples):
        record: dict = {"dialogue_id": ex.dialogue_id, "turn_index": ex.turn_index}
        if mode == "none":
            ids = beam_search(
                ckpt.params, build_source(ex, TaskCase.RESP_FROM_CONTEXT, ckpt.vocab, max_src_len), dcfg
            )
            record["response"] = decode(ckpt.vocab, ids)
        elif mode == "fixed":
            instruction = config.fixed_instruction_set[i % len(config.fixed_instruction_set)]
            source = build_source(
                ex, TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT, ckpt.vocab, max_src_len,
                instruction=instruction,
            )
            record["instruction"] = instruction
            record["response"] = decode(ckpt.vocab, beam_search(ckpt.params, source, dcfg))
        else:
            generator = {
                "generated_naive": generate_naive,
                "generated_iterative": generate_iterative,
                "oracle": generate_oracle,
            }[mode]
            out = generator(ckpt.params, ex, ckpt.vocab, dcfg, max_src_len=max_src_len)
            record["instruction"] = out.instruction
            record["response"] = out.response
        records.append(record)
    return records


def cmd_generate(config: RunConfig) -> Path:
    ckpt_path = config.resolve("dialog_checkpoint")
    _require_file(ckpt_path, "dialogue checkpoint")
    test_path = config.resolve("test_path")
    _require_file(test_path, "test corpus")
    ckpt = load_checkpoint(ckpt_path)
    examples = expand_examples(load_dialogues(test_path))
    records = generate_records(ckpt, examples, config)
    out = config.resolve("generations_path")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return out


def cmd_eval(config: RunConfig) -> EvalReport:
    """Score a generations file against the test corpus and write report.json."""
    gen_path = config.resolve("generations_path")
    _require_file(gen_path, "generations file")
    test_path = config.resolve("test_path")
    _require_file(test_path, "test corpus")
    with open(gen_path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise CorpusError(f"{gen_path} contains no records")
    references = {
        (ex.dialogue_id, ex.turn_index): ex.response
        for ex in expand_examples(load_dialogues(test_path))
    }
    hyps = []
    refs = []
    for record in records:
        key = (record["dialogue_id"], record["turn_index"])
        if key not in references:
            raise CorpusError(f"generation record {key} has no matching reference example")
        hyps.append(record["response"])
        refs.append(references[key])
    report = evaluate(hyps, refs)
    out = config.resolve("report_path")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "bleu1": report.bleu1,
                "bleu2": report.bleu2,
                "distinct1": report.distinct1,
                "distinct2": report.distinct2,
                "counts": report.counts,
                "mode": config.instruction_mode,
            },
            fh,
        )
        fh.write("\n")
    return report


def format_report_table(report: EvalReport, label: str) -> str:
    header = f"{'Model':<24}{'BLEU-1':>8}{'BLEU-2':>8}{'Distinct-1':>12}{'Distinct-2':>12}"
    row = (
        f"{label:<24}{report.bleu1:>8.3f}{report.bleu2:>8.3f}"
        f"{report.distinct1:>12.3f}{report.distinct2:>12.3f}"
    )
    return header + "\n" + row


def cmd_chat(config: RunConfig, stdin=None, stdout=None) -> None:
    """Interactive loop: user speaks as A, the model answers as B with its
    instruction printed first. `/reset`, `/persona <text>`, `/quit`."""
    import sys

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    ckpt_path = config.resolve("dialog_checkpoint")
    _require_file(ckpt_path, "dialogue checkpoint")
    ckpt = load_checkpoint(ckpt_path)

    persona: tuple[str, ...] = ()
    turns: list[Turn] = []

    def say(text: str):
        print(text, file=stdout)
        stdout.flush()

    say("chat ready; /persona <text>, /reset, /quit")
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/reset":
            turns.clear()
            say("(context cleared)")
            continue
        if line.startswith("/persona"):
            text = line[len("/persona") :].strip()
            persona = (text,) if text else ()
            say(f"(persona set to: {text!r})" if text else "(persona cleared)")
            continue
        turns.append(Turn("A", line))
        example = DialogueExample(
            dialogue_id="chat",
            turn_index=len(turns),
            persona=persona,
            context=tuple(turns),
            response="",
        )
        try:
            out = generate_iterative(
                ckpt.params, example, ckpt.vocab, config.decode, max_src_len=config.train.max_src_len
            )
        except Exception as exc:  # decoder errors are shown, session continues
            say(f"(decode error: {exc})")
            turns.pop()
            continue
        response = out.response if out.response else "(empty)"
        say(f"instruction: {out.instruction}")
        say(f"model: {response}")
        turns.append(Turn("B", response))

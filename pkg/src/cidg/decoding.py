"""Greedy and beam-search generation plus naive/iterative/oracle inference.

Beam rules, pinned so results are reproducible across implementations:
candidates at each step are ranked by cumulative log-probability with ties
broken by the lexicographically smaller token sequence; the top beam_size
candidates survive, and those ending in EOS (or hitting max_len) move to the
finished pool, consuming their slot — which is exactly what makes beam_size 1
coincide with greedy decoding. The pool keeps the best beam_size finished
hypotheses under the final score cum_logprob / len^alpha (length counts EOS),
ties broken by shorter-then-lexicographic. The search stops once no live
beam's optimistic bound (cum / max_len^alpha) can beat the best finished
score. Banned continuations score -inf; EOS can never be banned because no
recorded n-gram contains it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DialogueExample
from .model import ModelParams, decoder_logits, encode_source
from .taskformat import TaskCase, build_source
from .tokenizer import BOS, EOS, PAD, Vocabulary, decode


class EmptyGenerationError(RuntimeError):
    """Every continuation of every live beam was banned before anything finished."""


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 3
    no_repeat_ngram: int = 3
    max_len: int = 128
    length_alpha: float = 1.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.no_repeat_ngram < 0:
            raise ValueError("no_repeat_ngram must be >= 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.length_alpha < 0:
            raise ValueError("length_alpha must be >= 0")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # excludes BOS; includes EOS when finished by EOS
    logprob: float
    finished: bool


def banned_tokens(prefix: list[int] | tuple[int, ...], n: int) -> set[int]:
    """Tokens whose emission would repeat an n-gram already present in prefix."""
    if n <= 0 or len(prefix) < n - 1:
        return set()
    tail = tuple(prefix[len(prefix) - (n - 1) :]) if n > 1 else ()
    banned = set()
    for i in range(len(prefix) - n + 1):
        gram = tuple(prefix[i : i + n])
        if gram[:-1] == tail:
            banned.add(gram[-1])
    return banned


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=1, keepdims=True)
    e = np.exp(rows - m, dtype=np.float64)
    return (rows - m).astype(np.float64) - np.log(e.sum(axis=1, keepdims=True))


def _step_logprobs(params, enc_out, key_mask, prefixes: list[tuple[int, ...]]) -> np.ndarray:
    """Next-token log-probabilities for equal-length prefixes, batched over beams."""
    B = len(prefixes)
    T = len(prefixes[0]) + 1
    tgt_in = np.empty((B, T), dtype=np.int64)
    tgt_in[:, 0] = BOS
    for b, prefix in enumerate(prefixes):
        tgt_in[b, 1:] = prefix
    enc_rep = np.broadcast_to(enc_out, (B,) + enc_out.shape[1:])
    mask_rep = np.broadcast_to(key_mask, (B,) + key_mask.shape[1:])
    logits = decoder_logits(params, enc_rep, mask_rep, tgt_in)
    return _log_softmax(logits[:, -1, :])


def _score(hyp: Hypothesis, alpha: float) -> float:
    if alpha == 0.0:
        return hyp.logprob
    return hyp.logprob / (len(hyp.tokens) ** alpha)


def _final_key(hyp: Hypothesis, alpha: float):
    return (-_score(hyp, alpha), len(hyp.tokens), hyp.tokens)


def beam_search(params: ModelParams, source: list[int], cfg: DecodeConfig) -> list[int]:
    """Generated token ids, EOS stripped. Deterministic for fixed params/config."""
    src = np.asarray(source, dtype=np.int64)[None, :]
    enc_out, key_mask = encode_source(params, src)
    live: list[Hypothesis] = [Hypothesis(tokens=(), logprob=0.0, finished=False)]
    finished: list[Hypothesis] = []

    for _step in range(cfg.max_len):
        if not live:
            break
        logprobs = _step_logprobs(params, enc_out, key_mask, [h.tokens for h in live])
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for b, hyp in enumerate(live):
            row = logprobs[b]
            for v in banned_tokens(hyp.tokens, cfg.no_repeat_ngram):
                row[v] = -np.inf
            # stable sort keeps equal scores in ascending-id order, matching the
            # global lexicographic tie-break, so the per-beam cut loses nothing
            top = np.argsort(-row, kind="stable")[: cfg.beam_size]
            for v in top:
                if row[v] > -np.inf:
                    candidates.append((hyp.logprob + float(row[v]), hyp.tokens + (int(v),)))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for cum, tokens in candidates[: cfg.beam_size]:
            if tokens[-1] == EOS or len(tokens) == cfg.max_len:
                finished.append(Hypothesis(tokens=tokens, logprob=cum, finished=True))
            else:
                live.append(Hypothesis(tokens=tokens, logprob=cum, finished=False))
        if finished:
            finished.sort(key=lambda h: _final_key(h, cfg.length_alpha))
            del finished[cfg.beam_size :]
            best_score = _score(finished[0], cfg.length_alpha)
            bound_div = 1.0 if cfg.length_alpha == 0.0 else cfg.max_len**cfg.length_alpha
            if live and max(h.logprob / bound_div for h in live) <= best_score:
                break

    if not finished:
        raise EmptyGenerationError("all continuations banned before any hypothesis finished")
    best = min(finished, key=lambda h: _final_key(h, cfg.length_alpha))
    tokens = list(best.tokens)
    if tokens and tokens[-1] == EOS:
        tokens.pop()
    return tokens


def greedy_decode(params: ModelParams, source: list[int], cfg: DecodeConfig) -> list[int]:
    """Argmax per step under the same blocking/stopping rules; ties pick smaller id."""
    src = np.asarray(source, dtype=np.int64)[None, :]
    enc_out, key_mask = encode_source(params, src)
    tokens: tuple[int, ...] = ()
    for _step in range(cfg.max_len):
        row = _step_logprobs(params, enc_out, key_mask, [tokens])[0]
        for v in banned_tokens(tokens, cfg.no_repeat_ngram):
            row[v] = -np.inf
        best = int(row.argmax())  # argmax returns the smallest index on ties
        if row[best] == -np.inf:
            raise EmptyGenerationError("all continuations banned before EOS")
        if best == EOS:
            return list(tokens)
        tokens = tokens + (best,)
    return list(tokens)


@dataclass(frozen=True)
class GenOutput:
    instruction: str
    response: str


def _decode_case(params, example, case, vocab, cfg, max_src_len, instruction=None) -> str:
    source = build_source(example, case, vocab, max_src_len, instruction=instruction)
    return decode(vocab, beam_search(params, source, cfg))


def generate_naive(
    params: ModelParams,
    example: DialogueExample,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    max_src_len: int = 512,
) -> GenOutput:
    """Instruction and response decoded independently from the context."""
    instruction = _decode_case(params, example, TaskCase.INSTR_FROM_CONTEXT, vocab, cfg, max_src_len)
    response = _decode_case(params, example, TaskCase.RESP_FROM_CONTEXT, vocab, cfg, max_src_len)
    return GenOutput(instruction=instruction, response=response)


def generate_iterative(
    params: ModelParams,
    example: DialogueExample,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    max_src_len: int = 512,
) -> GenOutput:
    """Instruction from context first, then a response conditioned on it.

    An empty decoded instruction falls back to the plain context-only response.
    """
    instruction = _decode_case(params, example, TaskCase.INSTR_FROM_CONTEXT, vocab, cfg, max_src_len)
    if not instruction:
        response = _decode_case(params, example, TaskCase.RESP_FROM_CONTEXT, vocab, cfg, max_src_len)
    else:
        response = _decode_case(
            params, example, TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT, vocab, cfg, max_src_len,
            instruction=instruction,
        )
    return GenOutput(instruction=instruction, response=response)


def generate_oracle(
    params: ModelParams,
    example: DialogueExample,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    max_src_len: int = 512,
) -> GenOutput:
    """Upper-bound mode: the instruction is decoded with the gold response visible."""
    instruction = _decode_case(
        params, example, TaskCase.INSTR_FROM_CONTEXT_AND_RESPONSE, vocab, cfg, max_src_len
    )
    if not instruction:
        response = _decode_case(params, example, TaskCase.RESP_FROM_CONTEXT, vocab, cfg, max_src_len)
    else:
        response = _decode_case(
            params, example, TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT, vocab, cfg, max_src_len,
            instruction=instruction,
        )
    return GenOutput(instruction=instruction, response=response)

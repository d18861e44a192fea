import numpy as np
import pytest

from cidg.corpus import DialogueExample, LabeledExample, Turn
from cidg.taskformat import (
    CASES,
    INSTGEN,
    SeqPair,
    SourceOverflowError,
    TaskCase,
    build_source,
    format_case,
    format_instgen,
    sample_case,
    serialize_context,
)
from cidg.tokenizer import EOS, PAD, build_vocab, encode


def example(persona=(), turns=(("A", "hi"),), response="yo"):
    return DialogueExample(
        dialogue_id="d0",
        turn_index=len(turns),
        persona=tuple(persona),
        context=tuple(Turn(s, t) for s, t in turns),
        response=response,
    )


@pytest.fixture(scope="module")
def vocab():
    words = "hi yo p q i ski x do c a b reply with text one two three four five six seven"
    return build_vocab([words], min_freq=1, max_size=256)


class TestSerializeContext:
    def test_no_persona(self):
        assert serialize_context(example()) == "[CTX] [SPKA] hi"

    def test_with_persona(self):
        ex = example(persona=("i ski",), turns=(("A", "hi"), ("B", "yo")), response="ok")
        assert serialize_context(ex) == "[PER] i ski [CTX] [SPKA] hi [SPKB] yo"

    def test_multiple_personas_use_sep(self):
        ex = example(persona=("p", "q"), turns=(("A", "x"),))
        assert serialize_context(ex) == "[PER] p [SEP] q [CTX] [SPKA] x"


class TestFormatCase:
    def test_case4_layout(self, vocab):
        ex = LabeledExample(example=example(), instruction="reply")
        pair = format_case(ex, TaskCase.RESP_FROM_CONTEXT, vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [t("<gen_resp>"), t("[CTX]"), t("[SPKA]"), t("hi")]
        assert list(pair.target) == [t("yo"), EOS]

    def test_case3_layout(self, vocab):
        ex = LabeledExample(example=example(), instruction="reply")
        pair = format_case(ex, TaskCase.INSTR_FROM_CONTEXT, vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [t("<gen_inst>"), t("[CTX]"), t("[SPKA]"), t("hi")]
        assert list(pair.target) == [t("reply"), EOS]

    def test_case1_embeds_response(self, vocab):
        ex = LabeledExample(example=example(), instruction="reply")
        pair = format_case(ex, TaskCase.INSTR_FROM_CONTEXT_AND_RESPONSE, vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [
            t("<gen_inst>"), t("[CTX]"), t("[SPKA]"), t("hi"), t("[RSP]"), t("yo"),
        ]
        assert list(pair.target) == [t("reply"), EOS]

    def test_case2_embeds_instruction_before_context(self, vocab):
        ex = LabeledExample(example=example(), instruction="reply with text")
        pair = format_case(ex, TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT, vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [
            t("<gen_resp>"), t("[INS]"), t("reply"), t("with"), t("text"),
            t("[CTX]"), t("[SPKA]"), t("hi"),
        ]
        assert list(pair.target) == [t("yo"), EOS]

    def test_irreducible_overflow(self, vocab):
        ex = LabeledExample(
            example=example(), instruction="one two three four five six seven one two three"
        )
        with pytest.raises(SourceOverflowError):
            format_case(ex, TaskCase.RESP_FROM_INSTRUCTION_AND_CONTEXT, vocab, 4)

    def test_cases_3_and_4_differ_only_in_sentinel(self, vocab):
        ex = LabeledExample(
            example=example(persona=("i ski",), turns=(("A", "hi"), ("B", "yo")), response="x"),
            instruction="reply",
        )
        s3 = format_case(ex, TaskCase.INSTR_FROM_CONTEXT, vocab, 32).source
        s4 = format_case(ex, TaskCase.RESP_FROM_CONTEXT, vocab, 32).source
        assert s3[0] != s4[0] and s3[1:] == s4[1:]

    def test_untruncated_context_matches_serialize_context(self, vocab):
        ex = example(persona=("i ski", "p"), turns=(("A", "hi"), ("B", "yo"), ("A", "x")), response="q")
        source = build_source(ex, TaskCase.RESP_FROM_CONTEXT, vocab, 64)
        assert source[1:] == encode(vocab, serialize_context(ex))

    def test_invariants_on_random_examples(self, vocab):
        rng = np.random.default_rng(0)
        words = ["hi", "yo", "x", "a", "b", "c"]
        for _ in range(50):
            n_turns = int(rng.integers(1, 6))
            turns = tuple(("AB"[k % 2], " ".join(rng.choice(words, rng.integers(1, 8)))) for k in range(n_turns))
            ex = LabeledExample(
                example=example(turns=turns, response="yo a"), instruction="do c"
            )
            case = CASES[int(rng.integers(0, 4))]
            budget = int(rng.integers(16, 40))
            pair = format_case(ex, case, vocab, budget)
            assert 0 < len(pair.source) <= budget
            assert pair.source[0] in (vocab.token_to_id("<gen_resp>"), vocab.token_to_id("<gen_inst>"))
            assert pair.target[-1] == EOS and PAD not in pair.target


class TestTruncation:
    def make(self, vocab, texts, budget, case=TaskCase.RESP_FROM_CONTEXT):
        turns = tuple(("AB"[i % 2], t) for i, t in enumerate(texts))
        ex = example(turns=turns, response="yo")
        return build_source(ex, case, vocab, budget)

    def test_oldest_turn_dropped_first(self, vocab):
        t = vocab.token_to_id
        # skeleton = sentinel + [CTX] = 2; each turn block = marker + 2 words = 3
        src = self.make(vocab, ["a b", "x a", "yo b"], budget=2 + 6)
        assert src == [t("<gen_resp>"), t("[CTX]"),
                       t("[SPKB]"), t("x"), t("a"), t("[SPKA]"), t("yo"), t("b")]

    def test_single_turn_left_truncated(self, vocab):
        t = vocab.token_to_id
        src = self.make(vocab, ["a b c a b"], budget=2 + 3)
        # remaining oldest turn loses its leading tokens (speaker marker included)
        assert src == [t("<gen_resp>"), t("[CTX]"), t("c"), t("a"), t("b")]

    def test_monotone_in_budget(self, vocab):
        texts = ["a b c", "x a", "yo b c a", "hi"]
        previous: list[int] = []
        for budget in range(8, 30):
            src = self.make(vocab, texts, budget)
            body = src[2:]  # after sentinel + [CTX]
            if previous:
                assert body[len(body) - len(previous):] == previous or len(body) >= len(previous)
                # increasing the budget never drops a previously retained token
                assert previous == body[len(body) - len(previous):]
            previous = body

    def test_persona_never_truncated_before_turns(self, vocab):
        ex = example(persona=("i ski",), turns=(("A", "a b c a b c"),), response="yo")
        src = build_source(ex, TaskCase.RESP_FROM_CONTEXT, vocab, 8)
        t = vocab.token_to_id
        assert src[:5] == [t("<gen_resp>"), t("[PER]"), t("i"), t("ski"), t("[CTX]")]
        assert len(src) == 8


class TestFormatInstgen:
    def test_training_pair_layout(self, vocab):
        pair = format_instgen("a", "b", "do c", vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [t("<mask_0>"), t("[CTX]"), t("a"), t("[RSP]"), t("b")]
        assert list(pair.target) == [t("<mask_0>"), t("do"), t("c"), EOS]
        assert pair.case == INSTGEN

    def test_empty_input_field(self, vocab):
        pair = format_instgen("", "b", "c", vocab, 32)
        t = vocab.token_to_id
        assert list(pair.source) == [t("<mask_0>"), t("[CTX]"), t("[RSP]"), t("b")]

    def test_inference_pair_has_empty_target(self, vocab):
        pair = format_instgen("a", "b", None, vocab, 32)
        assert pair.target == ()

    def test_x_truncated_from_left(self, vocab):
        # budget 6 = 3 markers + y (1 token) + room for the last 2 tokens of x
        pair = format_instgen("a b c a b", "yo", "do c", vocab, 6)
        t = vocab.token_to_id
        assert list(pair.source) == [t("<mask_0>"), t("[CTX]"), t("a"), t("b"), t("[RSP]"), t("yo")]

    def test_irreducible_overflow_from_y(self, vocab):
        with pytest.raises(SourceOverflowError):
            format_instgen("a", "one two three four five", None, vocab, 6)


class TestSampleCase:
    def test_response_only_forced(self):
        for seed in (0, 7, 42):
            rng = np.random.default_rng(seed)
            assert sample_case(rng, "response-only") is TaskCase.RESP_FROM_CONTEXT

    def test_seed_42_frozen_sequence(self):
        # derived once from the documented generator (default_rng(42).integers(0, 4))
        rng = np.random.default_rng(42)
        draws = [sample_case(rng, "full").value for _ in range(4)]
        assert draws == [1, 4, 3, 2]

    def test_draws_roughly_uniform(self):
        rng = np.random.default_rng(0)
        counts = {c: 0 for c in CASES}
        for _ in range(4000):
            counts[sample_case(rng, "full")] += 1
        assert all(900 <= n <= 1100 for n in counts.values())

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            sample_case(np.random.default_rng(0), "bogus")


def test_seqpair_validation():
    with pytest.raises(ValueError):
        SeqPair(source=(), target=(EOS,), case=TaskCase.RESP_FROM_CONTEXT)
    with pytest.raises(ValueError, match="EOS"):
        SeqPair(source=(4,), target=(5,), case=TaskCase.RESP_FROM_CONTEXT)
    with pytest.raises(ValueError, match="PAD"):
        SeqPair(source=(4,), target=(PAD, EOS), case=TaskCase.RESP_FROM_CONTEXT)

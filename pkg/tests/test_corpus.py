import json

import pytest

from cidg.corpus import (
    CorpusError,
    Dialogue,
    Turn,
    attach_instructions,
    expand_examples,
    load_dialogues,
    load_triplets,
    save_dialogues,
    save_triplets,
)


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def dlg(i, texts, persona=()):
    turns = tuple(Turn("AB"[t % 2], text) for t, text in enumerate(texts))
    return Dialogue(id=f"d{i}", persona=tuple(persona), turns=turns)


class TestLoadDialogues:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("")
        assert load_dialogues(p) == []

    def test_one_record(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{
            "id": "a", "persona": [],
            "turns": [{"speaker": "A", "text": "x"}, {"speaker": "B", "text": "y"},
                      {"speaker": "A", "text": "z"}],
        }])
        out = load_dialogues(p)
        assert len(out) == 1 and len(out[0].turns) == 3

    def test_missing_turns_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"id": "a", "persona": []}])
        with pytest.raises(CorpusError, match="line 1"):
            load_dialogues(p)

    def test_too_few_turns(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"id": "a", "persona": [], "turns": [{"speaker": "A", "text": "x"}]}])
        with pytest.raises(CorpusError, match=">= 2"):
            load_dialogues(p)

    def test_non_alternating_speakers(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"id": "a", "persona": [],
                         "turns": [{"speaker": "A", "text": "x"}, {"speaker": "A", "text": "y"}]}])
        with pytest.raises(CorpusError, match="alternate"):
            load_dialogues(p)

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "d.jsonl"
        rec = {"id": "a", "persona": [],
               "turns": [{"speaker": "A", "text": "x"}, {"speaker": "B", "text": "y"}]}
        write_lines(p, [rec, rec])
        with pytest.raises(CorpusError, match="line 2.*duplicate"):
            load_dialogues(p)

    def test_bad_json_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        good = json.dumps({"id": "a", "persona": [],
                           "turns": [{"speaker": "A", "text": "x"}, {"speaker": "B", "text": "y"}]})
        p.write_text(good + "\nnot json\n")
        with pytest.raises(CorpusError, match="line 2"):
            load_dialogues(p)


class TestExpandExamples:
    def test_three_turns_yield_two_examples(self):
        d = dlg(0, ["u0", "u1", "u2"])
        ex = expand_examples([d])
        assert len(ex) == 2
        assert [t.text for t in ex[0].context] == ["u0"] and ex[0].response == "u1"
        assert [t.text for t in ex[1].context] == ["u0", "u1"] and ex[1].response == "u2"

    def test_two_turns_yield_one(self):
        assert len(expand_examples([dlg(0, ["a", "b"])])) == 1

    def test_persona_propagates(self):
        d = dlg(0, ["a", "b", "c"], persona=["p1"])
        assert all(ex.persona == ("p1",) for ex in expand_examples([d]))

    def test_total_count_formula(self):
        # sum over dialogues of (turn count - 1), checked by direct enumeration
        dialogues = [dlg(i, [f"t{j}" for j in range(n)]) for i, n in enumerate([2, 3, 5, 4])]
        assert len(expand_examples(dialogues)) == sum(n - 1 for n in [2, 3, 5, 4])

    def test_examples_resolve_to_source_turns(self):
        dialogues = [dlg(i, [f"u{i}{j}" for j in range(4)]) for i in range(3)]
        by_id = {d.id: d for d in dialogues}
        for ex in expand_examples(dialogues):
            assert by_id[ex.dialogue_id].turns[ex.turn_index].text == ex.response


class TestTriplets:
    def test_identity_load(self, tmp_path):
        p = tmp_path / "t.jsonl"
        write_lines(p, [{"instruction": "summarize", "input": "a b", "output": "c"}])
        out = load_triplets(p)
        assert len(out) == 1 and out[0].instruction == "summarize" and out[0].output == "c"

    def test_empty_output_rejected(self, tmp_path):
        p = tmp_path / "t.jsonl"
        write_lines(p, [{"instruction": "x", "input": "", "output": ""}])
        with pytest.raises(CorpusError, match="line 1"):
            load_triplets(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text("")
        assert load_triplets(p) == []

    def test_round_trip(self, tmp_path):
        p = tmp_path / "t.jsonl"
        write_lines(p, [{"instruction": "do", "input": "x", "output": "y"},
                        {"instruction": "say", "input": "", "output": "z"}])
        first = load_triplets(p)
        p2 = tmp_path / "t2.jsonl"
        save_triplets(first, p2)
        assert load_triplets(p2) == first


class TestAttachInstructions:
    def test_positional_join(self):
        ex = expand_examples([dlg(0, ["a", "b", "c"])])
        out = attach_instructions(ex, ["i1", "i2"])
        assert [l.instruction for l in out] == ["i1", "i2"]
        assert [l.example for l in out] == ex

    def test_length_mismatch(self):
        ex = expand_examples([dlg(0, ["a", "b", "c"])])
        with pytest.raises(CorpusError, match="mismatch"):
            attach_instructions(ex, ["only one"])

    def test_empty_instruction_names_position(self):
        ex = expand_examples([dlg(0, ["a", "b", "c"])])
        with pytest.raises(CorpusError, match="position 0"):
            attach_instructions(ex, ["", "i2"])


def test_dialogue_round_trip(tmp_path):
    dialogues = [dlg(0, ["a", "b"], persona=["likes tea"]), dlg(1, ["x", "y", "z"])]
    p = tmp_path / "d.jsonl"
    save_dialogues(dialogues, p)
    assert load_dialogues(p) == dialogues

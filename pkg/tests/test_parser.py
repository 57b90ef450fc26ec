import json
import random
from pathlib import Path

import pytest

from keygram.errors import (
    BudgetError,
    EmptyInstruction,
    LengthError,
    NoCandidates,
    SchemaError,
)
from keygram.parser import (
    KeyGram,
    Lexicon,
    encode,
    extract_from_instruction,
    extract_keygrams,
    extraction_prompt,
    normalize,
    serialize_keygrams,
    validate_external,
    word_id,
)

FIXTURES = Path(__file__).parent / "fixtures"

MUG_SENTENCE = "put the yellow and white mug in the microwave and close it"

# Independently computed FNV-1a 64-bit reference value.
FNV_MUG = 569241466720365104


def test_normalize_strips_punctuation_and_case():
    assert normalize("Pick up the Mug!") == ["pick", "up", "the", "mug"]


def test_normalize_empty_instruction():
    with pytest.raises(EmptyInstruction):
        normalize("")
    with pytest.raises(EmptyInstruction):
        normalize("..., !!")


def test_normalize_mug_sentence_has_12_words():
    assert len(normalize(MUG_SENTENCE)) == 12


def test_extract_golden_file():
    golden = json.loads((FIXTURES / "extract_golden.json").read_text())
    for case in golden["cases"]:
        got = extract_from_instruction(
            golden["instruction"], budget=case["budget"], max_words=golden["max_words"]
        )
        assert got.phrases() == case["keywords"]


def test_extract_mug_sentence_shape():
    got = extract_from_instruction(MUG_SENTENCE, budget=4, max_words=4)
    assert all(2 <= len(g.words) <= 4 for g in got.grams)
    lex = Lexicon.load()
    assert any(g.words[0] in lex.verbs for g in got.grams)


def test_extract_deterministic():
    a = extract_from_instruction(MUG_SENTENCE, budget=8)
    b = extract_from_instruction(MUG_SENTENCE, budget=8)
    assert a == b


def test_extract_budget_exactness():
    for budget in (1, 2, 5, 13):
        got = extract_from_instruction(MUG_SENTENCE, budget=budget)
        assert len(got.grams) == budget


def test_extract_single_verb_has_no_candidates():
    with pytest.raises(NoCandidates):
        extract_from_instruction("stop", budget=1)


def test_extract_bigram_fallback():
    # No template matches two bare nouns, so consecutive non-stopword
    # bigrams stand in.
    got = extract_from_instruction("the mug microwave", budget=2)
    assert got.phrases() == ["mug microwave", "mug microwave"]


def test_extract_rejects_bad_budget_and_width():
    words = normalize(MUG_SENTENCE)
    with pytest.raises(ValueError):
        extract_keygrams(words, budget=0)
    with pytest.raises(ValueError):
        extract_keygrams(words, budget=4, max_words=1)


def test_llm_style_decomposition_passes_validation():
    parse = json.dumps({
        "keywords": [
            "put mug in microwave",
            "close microwave door",
            "yellow and white mug",
            "mug inside microwave",
        ]
    })
    got = validate_external(parse, budget=4, max_words=4)
    assert got.phrases()[1] == "close microwave door"


def test_prompt_example_parse_accepted():
    parse = json.dumps({
        "keywords": [
            "pick and wipe",
            "pick sponge from sink",
            "pick up sponge",
            "green sponge",
            "wipe wooden table",
            "wipe table near window",
            "table near window",
            "wooden table",
        ]
    })
    got = validate_external(parse, budget=8, max_words=4)
    assert len(got.grams) == 8
    assert all(2 <= len(g.words) <= 4 for g in got.grams)


def test_validate_budget_error_on_empty_array():
    with pytest.raises(BudgetError):
        validate_external(json.dumps({"keywords": []}), budget=8)


def test_validate_length_error():
    parse = json.dumps({"keywords": ["a b c d e"] * 8})
    with pytest.raises(LengthError):
        validate_external(parse, budget=8, max_words=4)


def test_validate_length_error_on_empty_keyword():
    parse = json.dumps({"keywords": ["mug", "!!!"]})
    with pytest.raises(LengthError):
        validate_external(parse, budget=2)


def test_validate_schema_errors():
    for bad in ["[]", "{}", '{"keywords": "mug"}', '{"keywords": [1, 2]}', "not json"]:
        with pytest.raises(SchemaError):
            validate_external(bad, budget=2)


def test_roundtrip_serialize_validate():
    for budget in (1, 4, 8):
        grams = extract_from_instruction(MUG_SENTENCE, budget=budget)
        back = validate_external(serialize_keygrams(grams), budget=budget, max_words=4)
        assert back == grams


def test_encode_pads_with_zeros():
    key = encode(KeyGram(("yellow", "mug")), max_words=4)
    assert key.ids[0] == word_id("yellow")
    assert key.ids[1] == word_id("mug")
    assert key.ids[2:] == (0, 0)


def test_encode_stateless_across_grams():
    a = encode(KeyGram(("mug", "microwave")), max_words=4)
    b = encode(KeyGram(("close", "mug")), max_words=4)
    assert a.ids[0] == b.ids[1]


def test_word_id_golden_value():
    assert word_id("mug") == FNV_MUG


def test_word_id_never_zero():
    for w in ("", "mug", "a", "the", "microwave"):
        assert word_id(w) != 0


def test_pad_correctness_property():
    rnd = random.Random(555)
    vocab = ["mug", "plate", "red", "put", "shelf", "drawer", "lift", "blue"]
    for _ in range(100):
        n = rnd.randint(1, 4)
        gram = KeyGram(tuple(rnd.choice(vocab) for _ in range(n)))
        key = encode(gram, max_words=4)
        for j, value in enumerate(key.ids):
            assert (value == 0) == (j >= n)


def test_lexicon_disjointness():
    lex = Lexicon.load()
    assert not lex.verbs & lex.attributes
    assert not lex.verbs & lex.prepositions
    assert not lex.attributes & lex.prepositions


def test_prompt_asset_ships():
    text = extraction_prompt()
    assert "exactly 8" in text
    assert "Return valid JSON only" in text

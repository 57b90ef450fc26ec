"""Instruction to key-gram parsing and fixed-length key encoding.

Two ways in: a deterministic rule-based extractor over small word lists,
or validate_external() for parses produced by an outside LLM following
the shipped prompt (data/prompt.txt). Both return a KeyGramSet holding
exactly `budget` grams of at most `max_words` words each.

Word identifiers are stateless FNV-1a 64-bit hashes of the word bytes
(0 remapped to 1), so no vocabulary table has to be shared between runs
or shards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import (
    BudgetError,
    ConfigError,
    EmptyInstruction,
    LengthError,
    NoCandidates,
    SchemaError,
)

DEFAULT_BUDGET = 8
DEFAULT_MAX_WORDS = 4

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF

# Verb particles for the verb+particle+object template. These also appear
# in prepositions.txt; membership here only gates the adjacency rule.
PARTICLES = frozenset({"up", "down", "out", "off", "away", "over", "back"})

_LEXICON_FILES = ("verbs.txt", "attributes.txt", "prepositions.txt", "stopwords.txt")


def word_id(word: str) -> int:
    """Stateless 64-bit FNV-1a hash of the word's UTF-8 bytes; never 0."""
    h = FNV_OFFSET
    for b in word.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & _U64
    return h if h != 0 else 1


def normalize(instruction: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace; order preserved."""
    cleaned = []
    for ch in instruction.lower():
        if ch.isalnum() or ch.isspace():
            cleaned.append(ch)
    words = "".join(cleaned).split()
    if not words:
        raise EmptyInstruction(f"no words remain in {instruction!r}")
    return words


@dataclass(frozen=True)
class KeyGram:
    """An ordered phrase of normalized words."""

    words: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.words:
            raise ValueError("empty key-gram")
        for w in self.words:
            if not w or any(c.isspace() for c in w):
                raise ValueError(f"bad key-gram word {w!r}")

    @property
    def phrase(self) -> str:
        return " ".join(self.words)


@dataclass(frozen=True)
class KeyGramSet:
    """Exactly `budget` grams, in retrieval slot order."""

    grams: tuple[KeyGram, ...]
    budget: int

    def __post_init__(self) -> None:
        if len(self.grams) != self.budget:
            raise ValueError(f"{len(self.grams)} grams != budget {self.budget}")

    def phrases(self) -> list[str]:
        return [g.phrase for g in self.grams]


@dataclass(frozen=True)
class PaddedKey:
    """Fixed-length word-id vector; 0 marks padding positions."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        seen_pad = False
        for i in self.ids:
            if i == 0:
                seen_pad = True
            elif seen_pad:
                raise ValueError("nonzero id after padding")


def encode(gram: KeyGram, max_words: int = DEFAULT_MAX_WORDS) -> PaddedKey:
    """Hash each word to its id and right-pad with zeros to max_words."""
    if len(gram.words) > max_words:
        raise ValueError(f"gram {gram.phrase!r} longer than {max_words}")
    ids = [word_id(w) for w in gram.words]
    ids.extend(0 for _ in range(max_words - len(ids)))
    return PaddedKey(ids=tuple(ids))


def encode_set(grams: KeyGramSet, max_words: int = DEFAULT_MAX_WORDS) -> list[PaddedKey]:
    return [encode(g, max_words) for g in grams.grams]


@dataclass(frozen=True)
class Lexicon:
    """Word classes driving the rule-based extractor.

    verbs, attributes and prepositions are mutually disjoint; stopwords
    may overlap any of them (overlapping words classify as their
    non-stopword role and simply score zero).
    """

    verbs: frozenset[str]
    attributes: frozenset[str]
    prepositions: frozenset[str]
    stopwords: frozenset[str]

    def __post_init__(self) -> None:
        for a, b in (
            ("verbs", "attributes"),
            ("verbs", "prepositions"),
            ("attributes", "prepositions"),
        ):
            overlap = getattr(self, a) & getattr(self, b)
            if overlap:
                raise ConfigError(f"{a} and {b} overlap: {sorted(overlap)}")

    @staticmethod
    def load(directory: str | Path | None = None) -> "Lexicon":
        """Load word lists from a directory, or the bundled defaults."""
        sets = []
        for name in _LEXICON_FILES:
            if directory is None:
                text = resources.files("keygram.data").joinpath(name).read_text("utf-8")
            else:
                path = Path(directory) / name
                if not path.is_file():
                    raise ConfigError(f"missing lexicon file {path}")
                text = path.read_text("utf-8")
            words = frozenset(w.strip().lower() for w in text.splitlines() if w.strip())
            sets.append(words)
        return Lexicon(*sets)


def extraction_prompt() -> str:
    """The system prompt shipped for users driving an external LLM parser."""
    return resources.files("keygram.data").joinpath("prompt.txt").read_text("utf-8")


_VERB, _PREP, _ATTR, _STOP, _NOUN = range(5)


def _classify(words: list[str], lex: Lexicon) -> list[int]:
    kinds = []
    for w in words:
        if w in lex.verbs:
            kinds.append(_VERB)
        elif w in lex.prepositions:
            kinds.append(_PREP)
        elif w in lex.attributes:
            kinds.append(_ATTR)
        elif w in lex.stopwords:
            kinds.append(_STOP)
        else:
            kinds.append(_NOUN)
    return kinds


def _first(kinds: list[int], kind: int, start: int) -> int | None:
    for i in range(start, len(kinds)):
        if kinds[i] == kind:
            return i
    return None


def _template_candidates(
    words: list[str], kinds: list[int], max_words: int
) -> list[tuple[int, tuple[str, ...]]]:
    """All (priority, phrase) pairs the five templates produce."""
    out: list[tuple[int, tuple[str, ...]]] = []
    n = len(words)

    for i in range(n):
        if kinds[i] != _VERB:
            continue
        # verb + object + relation/target/source
        j = _first(kinds, _NOUN, i + 1)
        if j is not None and max_words >= 4:
            k = _first(kinds, _PREP, j + 1)
            if k is not None:
                m = _first(kinds, _NOUN, k + 1)
                if m is not None:
                    out.append((1, (words[i], words[j], words[k], words[m])))
        # verb + particle + object (particle must be adjacent)
        if i + 1 < n and words[i + 1] in PARTICLES and max_words >= 3:
            j = _first(kinds, _NOUN, i + 2)
            if j is not None:
                out.append((2, (words[i], words[i + 1], words[j])))
        # verb + prep + object
        if max_words >= 3:
            k = _first(kinds, _PREP, i + 1)
            if k is not None:
                m = _first(kinds, _NOUN, k + 1)
                if m is not None:
                    out.append((3, (words[i], words[k], words[m])))

    # object + prep + object
    if max_words >= 3:
        for j in range(n):
            if kinds[j] != _NOUN:
                continue
            k = _first(kinds, _PREP, j + 1)
            if k is not None:
                m = _first(kinds, _NOUN, k + 1)
                if m is not None:
                    out.append((4, (words[j], words[k], words[m])))

    # attribute(s) + object: contiguous attribute/stopword span before a noun
    for m in range(n):
        if kinds[m] != _NOUN:
            continue
        start = m
        while start > 0 and kinds[start - 1] in (_ATTR, _STOP):
            start -= 1
        span = list(range(start, m))
        while span and kinds[span[-1]] == _STOP:
            span.pop()
        while span and (kinds[span[0]] == _STOP or len(span) + 1 > max_words):
            span.pop(0)
        if span and any(kinds[i] == _ATTR for i in span):
            out.append((5, tuple(words[i] for i in span) + (words[m],)))

    return out


def extract_keygrams(
    words: list[str],
    budget: int = DEFAULT_BUDGET,
    max_words: int = DEFAULT_MAX_WORDS,
    lexicon: Lexicon | None = None,
) -> KeyGramSet:
    """Deterministic rule-based extraction of exactly `budget` key-grams.

    Candidates come from five phrase templates in priority order
    (verb+object+target, verb+particle+object, verb+prep+object,
    object+prep+object, attribute+object), are scored by template
    priority then non-stopword count, and tie-break lexicographically.
    Too few candidates: the last gram repeats. No template match at all:
    consecutive non-stopword bigrams stand in, and only if not even one
    bigram exists does extraction fail.
    """
    if not words:
        raise EmptyInstruction("empty word list")
    if budget < 1:
        raise ValueError(f"budget {budget} < 1")
    if max_words < 2:
        raise ValueError(f"max_words {max_words} < 2")
    lex = lexicon if lexicon is not None else Lexicon.load()
    kinds = _classify(words, lex)

    candidates = _template_candidates(words, kinds, max_words)
    if not candidates:
        content = [w for w, k in zip(words, kinds) if k != _STOP]
        candidates = [(6, (content[i], content[i + 1])) for i in range(len(content) - 1)]
        if not candidates:
            raise NoCandidates(f"no template or bigram in {' '.join(words)!r}")

    best: dict[tuple[str, ...], int] = {}
    for priority, phrase in candidates:
        if all(w in lex.stopwords for w in phrase):
            continue
        if phrase not in best or priority < best[phrase]:
            best[phrase] = priority

    def sort_key(item: tuple[tuple[str, ...], int]):
        phrase, priority = item
        content = sum(1 for w in phrase if w not in lex.stopwords)
        return (priority, -content, " ".join(phrase))

    ranked = [phrase for phrase, _ in sorted(best.items(), key=sort_key)]
    if not ranked:
        raise NoCandidates(f"only stopword candidates in {' '.join(words)!r}")
    selected = ranked[:budget]
    while len(selected) < budget:
        selected.append(selected[-1])
    return KeyGramSet(grams=tuple(KeyGram(p) for p in selected), budget=budget)


def extract_from_instruction(
    instruction: str,
    budget: int = DEFAULT_BUDGET,
    max_words: int = DEFAULT_MAX_WORDS,
    lexicon: Lexicon | None = None,
) -> KeyGramSet:
    return extract_keygrams(normalize(instruction), budget, max_words, lexicon)


def validate_external(
    parse: str,
    budget: int = DEFAULT_BUDGET,
    max_words: int = DEFAULT_MAX_WORDS,
) -> KeyGramSet:
    """Accept an externally produced parse iff it meets the contract.

    The parse must be a JSON object {"keywords": [str, ...]} with exactly
    `budget` entries, each normalizing to 1..max_words words.
    """
    try:
        obj = json.loads(parse)
    except json.JSONDecodeError as e:
        raise SchemaError(f"not valid JSON: {e}") from e
    if not isinstance(obj, dict) or "keywords" not in obj:
        raise SchemaError("expected a JSON object with a 'keywords' field")
    keywords = obj["keywords"]
    if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
        raise SchemaError("'keywords' must be an array of strings")
    if len(keywords) != budget:
        raise BudgetError(f"{len(keywords)} keywords, budget is {budget}")
    grams = []
    for i, kw in enumerate(keywords):
        try:
            words = normalize(kw)
        except EmptyInstruction:
            raise LengthError(f"keyword {i} normalizes to 0 words") from None
        if len(words) > max_words:
            raise LengthError(f"keyword {i} has {len(words)} words > {max_words}")
        grams.append(KeyGram(tuple(words)))
    return KeyGramSet(grams=tuple(grams), budget=budget)


def serialize_keygrams(grams: KeyGramSet) -> str:
    """Render a KeyGramSet in the external parse format."""
    return json.dumps({"keywords": grams.phrases()})

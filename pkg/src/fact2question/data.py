"""Facts, question-answer pairs, vocabularies, and the TSV loaders.

File conventions:
  * question files: UTF-8, LF lines, 4 tab-separated fields
    (subject, relationship, object, question)
  * triple files: 3 tab-separated fields (subject, relationship, object)
  * vocabulary dumps: "index<TAB>token<TAB>count" lines
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ContractError, ParseError, UnknownIdError

log = logging.getLogger(__name__)

UNK = "<unk>"
BOS = "<bos>"
QMARK = "?"

_FREEBASE_PREFIX = "www.freebase.com/"
_TOKEN_RE = re.compile(r"[?,.]|'[^\s?,.']*|[^\s?,.']+")


def normalize_id(raw: str) -> str:
    """Strip the freebase URL prefix; MIDs like m/abc become m.abc.

    Relationship paths keep their slashes (category extraction needs the
    domain/type/property structure).
    """
    s = raw.strip()
    if s.startswith(_FREEBASE_PREFIX):
        s = s[len(_FREEBASE_PREFIX):]
    s = s.lstrip("/")
    if s.startswith(("m/", "g/")):
        s = s.replace("/", ".")
    return s


def tokenize_phrase(text: str) -> list[str]:
    """Lowercase and split on whitespace plus the ? ' , . marks."""
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str) -> list[str]:
    """tokenize_phrase plus a guaranteed terminal question mark."""
    tokens = tokenize_phrase(text)
    if not tokens or tokens[-1] != QMARK:
        tokens.append(QMARK)
    return tokens


@dataclass(frozen=True)
class Fact:
    """A (subject, relationship, object) triple of normalized ids."""

    subject: str
    relationship: str
    object: str

    def __post_init__(self):
        if not (self.subject and self.relationship and self.object):
            raise ContractError(f"fact with empty id: {self!r}")

    def atoms(self) -> tuple[str, str, str]:
        return (self.subject, self.relationship, self.object)


@dataclass(frozen=True)
class QAPair:
    """A fact plus its question as lowercase tokens ending in '?'."""

    fact: Fact
    question_tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.question_tokens or self.question_tokens[-1] != QMARK:
            raise ContractError(
                f"question tokens must be non-empty and end with '?': "
                f"{list(self.question_tokens)!r}"
            )


def load_simplequestions(path) -> list[QAPair]:
    """Parse a 4-field question file; blank questions are skipped (logged)."""
    pairs: list[QAPair] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, "
                    f"got {len(fields)}"
                )
            subject, relationship, object_, question = fields
            if not question.strip():
                skipped += 1
                continue
            fact = Fact(normalize_id(subject), normalize_id(relationship),
                        normalize_id(object_))
            pairs.append(QAPair(fact, tuple(tokenize(question))))
    if skipped:
        log.warning("%s: skipped %d lines with empty questions", path, skipped)
    return pairs


def load_triples(path) -> tuple[list[Fact], int]:
    """Parse a 3-field triple file; returns (deduplicated facts, dup count)."""
    facts: list[Fact] = []
    seen: set[Fact] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, "
                    f"got {len(fields)}"
                )
            fact = Fact(*(normalize_id(f) for f in fields))
            if fact in seen:
                duplicates += 1
                continue
            seen.add(fact)
            facts.append(fact)
    return facts, duplicates


def load_names(path) -> dict[str, str]:
    """Optional id -> display-string map, 2 tab-separated fields per line."""
    names: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(
                    f"{path}:{lineno}: expected 2 tab-separated fields, "
                    f"got {len(fields)}"
                )
            names[normalize_id(fields[0])] = fields[1]
    return names


class Vocabulary:
    """Bijective token <-> index map with reserved tokens at the front."""

    def __init__(self, tokens: Iterable[str], counts: dict[str, int] | None = None):
        self._tokens = list(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise ContractError("vocabulary tokens must be unique")
        self._counts = dict(counts or {})

    @classmethod
    def build(cls, counts: Counter, reserved: Iterable[str],
              min_count: int = 1) -> "Vocabulary":
        reserved = list(reserved)
        body = sorted(
            tok for tok, n in counts.items()
            if n >= min_count and tok not in reserved
        )
        return cls(reserved + body, counts=dict(counts))

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def tokens(self) -> list[str]:
        return list(self._tokens)

    def index(self, token: str) -> int:
        """Strict lookup; unknown tokens raise."""
        try:
            return self._index[token]
        except KeyError:
            raise UnknownIdError(f"token not in vocabulary: {token!r}") from None

    def index_or_unk(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def token(self, i: int) -> str:
        if not 0 <= i < len(self._tokens):
            raise UnknownIdError(f"index {i} out of vocabulary range")
        return self._tokens[i]

    def count(self, token: str) -> int:
        return self._counts.get(token, 0)

    def content_hash(self) -> str:
        """sha256 over the index->token map (counts excluded)."""
        body = "\n".join(f"{i}\t{tok}" for i, tok in enumerate(self._tokens))
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._tokens):
                fh.write(f"{i}\t{tok}\t{self._counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise ParseError(
                        f"{path}:{lineno}: expected 3 tab-separated fields"
                    )
                idx, tok, count = fields
                if int(idx) != len(tokens):
                    raise ParseError(f"{path}:{lineno}: indices out of order")
                tokens.append(tok)
                counts[tok] = int(count)
        return cls(tokens, counts=counts)


def build_vocabularies(
    pairs: Iterable,
    min_count: int = 1,
    placeholder_tokens: Iterable[str] = (),
) -> tuple[Vocabulary, Vocabulary]:
    """Input vocabulary over fact atoms, output vocabulary over question tokens.

    `pairs` may be QAPair objects or anything with .fact and a token list
    under .question_tokens or .tokens (placeholderized questions).  Tokens
    below min_count map to <unk>; placeholder tokens are always kept.
    """
    pairs = list(pairs)
    if not pairs:
        raise ContractError("build_vocabularies: empty corpus")
    atom_counts: Counter = Counter()
    token_counts: Counter = Counter()
    for pair in pairs:
        atom_counts.update(pair.fact.atoms())
        tokens = getattr(pair, "question_tokens", None)
        if tokens is None:
            tokens = pair.tokens
        token_counts.update(tokens)
    input_vocab = Vocabulary.build(atom_counts, reserved=[UNK], min_count=min_count)
    reserved = [UNK, BOS, QMARK] + sorted(set(placeholder_tokens))
    output_vocab = Vocabulary.build(token_counts, reserved=reserved,
                                    min_count=min_count)
    return input_vocab, output_vocab


@dataclass
class Dataset:
    """The train/valid/test splits of a question corpus."""

    train: list[QAPair]
    valid: list[QAPair]
    test: list[QAPair] = field(default_factory=list)

    @classmethod
    def from_files(cls, train_path, valid_path, test_path=None) -> "Dataset":
        ds = cls(
            train=load_simplequestions(train_path),
            valid=load_simplequestions(valid_path),
            test=load_simplequestions(test_path) if test_path else [],
        )
        ds.check_disjoint()
        return ds

    def check_disjoint(self) -> None:
        """Splits must not share (fact, question) pairs."""
        seen: dict[QAPair, str] = {}
        for name, split in (("train", self.train), ("valid", self.valid),
                            ("test", self.test)):
            for pair in split:
                other = seen.get(pair)
                if other is not None and other != name:
                    raise ContractError(
                        f"splits overlap: pair in both {other} and {name}: "
                        f"{pair.fact}"
                    )
                seen[pair] = name

    def all_pairs(self) -> list[QAPair]:
        return self.train + self.valid + self.test

    def stats(self) -> dict[str, int]:
        """Corpus statistics: questions, entities, relationships, words."""
        entities: set[str] = set()
        relationships: set[str] = set()
        words: set[str] = set()
        n = 0
        for pair in self.all_pairs():
            n += 1
            entities.add(pair.fact.subject)
            entities.add(pair.fact.object)
            relationships.add(pair.fact.relationship)
            words.update(pair.question_tokens)
        return {
            "questions": n,
            "entities": len(entities),
            "relationships": len(relationships),
            "words": len(words),
        }

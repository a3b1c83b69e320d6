"""Shared fixtures: a synthetic fact-question corpus small enough to
overfit and the machinery to prepare it for the decoder."""

import numpy as np
import pytest

from fact2question.data import Fact, QAPair, build_vocabularies, tokenize
from fact2question.model import QGenParams
from fact2question.placeholders import SP_TOKEN, placeholderize_corpus

TOY_TEMPLATES = {
    "facts/thing/kind": "what is {}?",
    "location/place/found_in": "where is {}?",
    "people/maker/made": "who made {}?",
    "time/era/appeared": "when did {} appear?",
    "location/region/contains": "which place contains {}?",
}


def make_toy_pairs(n_pairs: int = 20) -> list[QAPair]:
    relationships = list(TOY_TEMPLATES)
    pairs = []
    for i in range(n_pairs):
        rel = relationships[i % len(relationships)]
        subject = f"thing_{i}"
        question = TOY_TEMPLATES[rel].format(f"thing {i}")
        pairs.append(QAPair(Fact(subject, rel, f"obj_{i}"),
                            tuple(tokenize(question))))
    return pairs


def prepare_toy(n_pairs: int = 20, hidden: int = 64, d_enc: int = 8,
                d_dec: int = 16, seed: int = 0):
    """Placeholderized corpus, vocabularies, and fresh decoder params."""
    pairs = make_toy_pairs(n_pairs)
    prepared, dropped = placeholderize_corpus(pairs, "sp")
    assert dropped == 0
    input_vocab, output_vocab = build_vocabularies(
        [ph for _, ph in prepared], placeholder_tokens=[SP_TOKEN])
    rng = np.random.default_rng(seed + 1000)
    params = QGenParams.init(
        n_in=len(input_vocab), n_out=len(output_vocab), d_enc=d_enc,
        d_dec=d_dec, hidden=hidden, seed=seed,
        input_emb=rng.normal(scale=0.5, size=(len(input_vocab), d_enc)))
    return prepared, input_vocab, output_vocab, params


@pytest.fixture(scope="session")
def toy_prepared():
    return prepare_toy(n_pairs=10, hidden=32, d_enc=6, d_dec=8, seed=0)

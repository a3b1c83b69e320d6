"""Question decoding: greedy, beam search, and streaming corpus generation.

Decoding runs tape-free through kernels.decode_step.  An output sequence
is at most max_len tokens ending in '?': up to max_len - 1 tokens are
chosen by the model, and a hypothesis that never emits '?' gets one
appended (unscored).  Scores are length-unnormalized sums of chosen
token log-probabilities.
"""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .autodiff import log_softmax_values, tanh_values
from .data import BOS, QMARK, Fact, Vocabulary, normalize_id
from .errors import ContractError, ParseError, UnknownIdError
from .model import QGenParams, atom_indices
from .placeholders import restore, subject_text

DEFAULT_MAX_LEN = 30
DEFAULT_BEAM_WIDTH = 5


@dataclass
class Hypothesis:
    """A (possibly finished) candidate question as output-vocab indices."""

    tokens: tuple[int, ...]
    log_prob: float
    finished: bool


def worker_count() -> int:
    """Parallel decode workers: min(QGEN_THREADS, cores); default cores."""
    cores = os.cpu_count() or 1
    raw = os.environ.get("QGEN_THREADS", "").strip()
    if not raw:
        return cores
    try:
        n = int(raw)
    except ValueError:
        raise ContractError(f"QGEN_THREADS must be an integer, got {raw!r}")
    return max(1, min(n, cores))


class GenerationSession:
    """Read-only decoding state shared across facts (and across threads)."""

    def __init__(self, params: QGenParams, input_vocab: Vocabulary,
                 output_vocab: Vocabulary,
                 names: Mapping[str, str] | None = None,
                 max_len: int = DEFAULT_MAX_LEN):
        if max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {max_len}")
        self.params = params
        self.input_vocab = input_vocab
        self.output_vocab = output_vocab
        self.names = names
        self.max_len = max_len
        t = params.tensors
        self._word_emb = t["word_emb"].value
        self._atom_proj = t["atom_proj"].value
        self._init_proj = t["init_proj"].value
        self._step_weights = tuple(
            t[name].value for name in (
                "att_hidden", "att_score",
                "reset_emb", "reset_ctx", "reset_state",
                "update_emb", "update_ctx", "update_state",
                "cand_emb", "cand_ctx", "cand_state",
                "out_state", "out_emb", "out_ctx", "out_proj",
            )
        )
        self._bos = output_vocab.index(BOS)
        self._qmark = output_vocab.index(QMARK)

    def _encode(self, fact: Fact):
        s, r, o = atom_indices(fact, self.input_vocab)
        enc_s = self._atom_proj @ self.params.input_emb[s]
        enc_r = self._atom_proj @ self.params.input_emb[r]
        enc_o = self._atom_proj @ self.params.input_emb[o]
        enc_all = np.concatenate((enc_s, enc_r, enc_o))
        h0 = tanh_values(self._init_proj @ enc_all)
        return (enc_s, enc_r, enc_o, enc_all), h0

    def _step(self, enc, w_prev: int, h_prev):
        h, logits, alpha = kernels.decode_step(
            self._word_emb[w_prev], h_prev, *enc, *self._step_weights)
        return h, logits, alpha

    def greedy_indices(self, fact: Fact) -> list[int]:
        """Argmax decode as vocabulary indices (ties pick the lowest index)."""
        enc, h = self._encode(fact)
        w_prev = self._bos
        out: list[int] = []
        for _ in range(self.max_len - 1):
            h, logits, _ = self._step(enc, w_prev, h)
            idx = int(np.argmax(logits))
            out.append(idx)
            if idx == self._qmark:
                return out
            w_prev = idx
        out.append(self._qmark)
        return out

    def beam_indices(self, fact: Fact, width: int) -> list[Hypothesis]:
        """Up to `width` finished hypotheses, best (then lexicographically
        smallest) first."""
        if width < 1:
            raise ContractError(f"beam width must be >= 1, got {width}")
        enc, h0 = self._encode(fact)
        # live beams carry their recurrent state; finished ones do not
        beams: list[tuple[Hypothesis, np.ndarray, int]] = [
            (Hypothesis((), 0.0, False), h0, self._bos)
        ]
        finished: list[Hypothesis] = []
        for _ in range(self.max_len - 1):
            if not beams:
                break
            candidates: list[tuple[Hypothesis, np.ndarray]] = []
            for hyp, h, w_prev in beams:
                h_new, logits, _ = self._step(enc, w_prev, h)
                logp = log_softmax_values(logits)
                for v in range(logp.shape[0]):
                    candidates.append((
                        Hypothesis(hyp.tokens + (v,), hyp.log_prob + float(logp[v]),
                                   v == self._qmark),
                        h_new,
                    ))
            candidates.sort(key=lambda c: (-c[0].log_prob, c[0].tokens))
            beams = []
            for hyp, h_new in candidates[:width]:
                if hyp.finished:
                    finished.append(hyp)
                else:
                    beams.append((hyp, h_new, hyp.tokens[-1]))
        # out of steps: force-terminate survivors with an unscored '?'
        for hyp, _, _ in beams:
            finished.append(Hypothesis(hyp.tokens + (self._qmark,), hyp.log_prob, True))
        finished.sort(key=lambda hyp: (-hyp.log_prob, hyp.tokens))
        return finished[:width]

    def to_words(self, indices: Iterable[int], fact: Fact) -> list[str]:
        """Map indices to tokens and substitute the subject for placeholders."""
        tokens = [self.output_vocab.token(i) for i in indices]
        words, _ = restore(tokens, subject_text(fact, self.names))
        return words

    def greedy(self, fact: Fact) -> list[str]:
        return self.to_words(self.greedy_indices(fact), fact)

    def beam(self, fact: Fact, width: int = DEFAULT_BEAM_WIDTH) -> list[str]:
        best = self.beam_indices(fact, width)[0]
        return self.to_words(best.tokens, fact)


def greedy_decode(fact: Fact, params: QGenParams, input_vocab: Vocabulary,
                  output_vocab: Vocabulary,
                  names: Mapping[str, str] | None = None,
                  max_len: int = DEFAULT_MAX_LEN) -> list[str]:
    """One-shot greedy decode with placeholder restoration."""
    session = GenerationSession(params, input_vocab, output_vocab, names, max_len)
    return session.greedy(fact)


def beam_search(fact: Fact, params: QGenParams, input_vocab: Vocabulary,
                output_vocab: Vocabulary, width: int = DEFAULT_BEAM_WIDTH,
                max_len: int = DEFAULT_MAX_LEN) -> list[Hypothesis]:
    """Ranked finished hypotheses (as indices; no restoration applied)."""
    session = GenerationSession(params, input_vocab, output_vocab, None, max_len)
    return session.beam_indices(fact, width)


def generate_corpus(facts_path, session: GenerationSession, output_path,
                    width: int = DEFAULT_BEAM_WIDTH) -> tuple[int, int]:
    """Stream a triple file through the decoder into a 4-field TSV.

    Facts whose atoms are unknown to the encoder are skipped.  Returns
    (written, skipped).  Output order follows input order regardless of
    the worker count.
    """

    def decode_line(item):
        lineno, line = item
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(
                f"{facts_path}:{lineno}: expected 3 tab-separated fields, "
                f"got {len(fields)}"
            )
        fact = Fact(*(normalize_id(f) for f in fields))
        try:
            if width == 1:
                indices = session.greedy_indices(fact)
            else:
                indices = session.beam_indices(fact, width)[0].tokens
        except UnknownIdError:
            return fact, None
        return fact, " ".join(session.to_words(indices, fact))

    def lines():
        with open(facts_path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.rstrip("\n")
                if raw:
                    yield lineno, raw

    written = 0
    skipped = 0
    workers = worker_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if pool:
            # bounded in-flight window: pool.map would slurp the whole file
            results = _bounded_ordered_map(decode_line, lines(), pool,
                                           window=workers * 4)
        else:
            results = map(decode_line, lines())
        with open(output_path, "w", encoding="utf-8") as out:
            for fact, question in results:
                if question is None:
                    skipped += 1
                    continue
                out.write(f"{fact.subject}\t{fact.relationship}\t"
                          f"{fact.object}\t{question}\n")
                written += 1
    finally:
        if pool:
            pool.shutdown()
    return written, skipped


def _bounded_ordered_map(fn, items, pool, window: int):
    pending = deque()
    for item in items:
        pending.append(pool.submit(fn, item))
        if len(pending) >= window:
            yield pending.popleft().result()
    while pending:
        yield pending.popleft().result()

"""Decoder training: Adam on the token NLL with gradient clipping and
early stopping with patience on the validation question-match score.

Gradients are computed per example and summed in fixed example order, so
a run is deterministic for a given seed.  The batch loss is the summed
token NLL divided by the batch token count, i.e. mean NLL per token.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backprop
from .data import QAPair, Vocabulary
from .errors import ContractError, NumericError, TrainingDivergedError
from .model import QGenParams, sequence_log_likelihood
from .placeholders import PlaceholderizedQuestion

log = logging.getLogger(__name__)


def clip_gradients(grads: dict[str, np.ndarray],
                   max_norm: float = 0.1) -> dict[str, np.ndarray]:
    """Scale the whole gradient set down when its global L2 norm exceeds
    max_norm; otherwise return it unchanged."""
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    sq = 0.0
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
        sq += float(np.sum(g * g))
    norm = np.sqrt(sq)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    learning_rate: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """Standard Adam update with bias correction, in place on the params."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


@dataclass
class EarlyStopState:
    """Best validation score and evaluations since it improved."""

    patience: int
    best: float = -np.inf
    since_improvement: int = 0

    def update(self, score: float) -> bool:
        """Record one evaluation; True when it improved the best score."""
        if score > self.best:
            self.best = score
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        return False

    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


@dataclass
class TrainConfig:
    learning_rate: float = 0.00025
    clip_norm: float = 0.1
    batch_size: int = 32
    patience: int = 5
    eval_every: int | None = None   # updates between evaluations; None = 1 epoch
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")


@dataclass
class TrainResult:
    params: QGenParams
    log_lines: list[str]
    best_score: float
    steps: int


def _example_gradients(fact, tokens, params: QGenParams, input_vocab, output_vocab):
    """Per-example NLL and its gradients (log-likelihood negated)."""
    with Tape() as tape:
        tape.watch(params.trainable())
        ll = sequence_log_likelihood(fact, tokens, params, input_vocab, output_vocab)
    grads = backprop(tape, ll)
    return -ll.item(), {name: -g for name, g in grads.items()}


def train(
    train_pairs: list[tuple[QAPair, PlaceholderizedQuestion]],
    valid_pairs: list[tuple[QAPair, PlaceholderizedQuestion]],
    params: QGenParams,
    config: TrainConfig,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
    score_fn=None,
) -> TrainResult:
    """Minimize token NLL; keep the checkpoint with the best validation score.

    score_fn(params) -> float scores the validation set (by default the
    stem-match metric over greedily decoded questions, see evaluation
    helpers in decoding/metrics).  Raises TrainingDivergedError on NaN
    loss, with the best checkpoint attached.
    """
    if not train_pairs:
        raise ContractError("train: empty training set")
    if score_fn is None:
        from .evaluation import validation_scorer

        score_fn = validation_scorer(valid_pairs, input_vocab, output_vocab)

    rng = np.random.default_rng(config.seed)
    trainable = params.trainable()
    adam = AdamState(learning_rate=config.learning_rate)
    stopper = EarlyStopState(patience=config.patience)
    steps_per_epoch = max(1, -(-len(train_pairs) // config.batch_size))
    eval_every = config.eval_every or steps_per_epoch

    log_lines: list[str] = []
    best_values = params.copy_values()
    start = time.perf_counter()
    step = 0
    recent_nll: list[float] = []

    def evaluate() -> bool:
        score = score_fn(params)
        snapshot = score >= stopper.best  # ties keep the newer checkpoint
        improved = stopper.update(score)
        if snapshot:
            best_values.update(params.copy_values())
        train_nll = float(np.mean(recent_nll)) if recent_nll else float("nan")
        recent_nll.clear()
        wall = time.perf_counter() - start
        log_lines.append(f"{step}\t{train_nll:.6f}\t{score:.4f}\t{wall:.3f}")
        log.info("step %d: train nll/token %.4f, valid score %.4f%s",
                 step, train_nll, score, " *" if improved else "")
        return improved

    stop = False
    while not stop:
        order = rng.permutation(len(train_pairs))
        for lo in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[lo:lo + config.batch_size]]
            total_tokens = sum(len(ph.tokens) for _, ph in batch)
            summed: dict[str, np.ndarray] | None = None
            batch_nll = 0.0
            try:
                for _, ph in batch:
                    nll, grads = _example_gradients(ph.fact, list(ph.tokens),
                                                    params, input_vocab,
                                                    output_vocab)
                    batch_nll += nll
                    if summed is None:
                        summed = grads
                    else:
                        for name in summed:
                            summed[name] += grads[name]
                if not np.isfinite(batch_nll):
                    raise NumericError("non-finite training loss")
                scaled = {name: g / total_tokens for name, g in summed.items()}
                adam_step(trainable, clip_gradients(scaled, config.clip_norm),
                          adam)
            except (NumericError, TrainingDivergedError) as exc:
                params.load_values(best_values)
                raise TrainingDivergedError(
                    f"training diverged at step {step}: {exc}",
                    checkpoint=params, log_lines=log_lines,
                ) from exc
            loss = batch_nll / total_tokens
            step += 1
            recent_nll.append(loss)

            if step % eval_every == 0:
                evaluate()
                if stopper.should_stop():
                    stop = True
                    break
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
                break

    if step % eval_every != 0:
        evaluate()
    params.load_values(best_values)
    return TrainResult(params=params, log_lines=log_lines,
                       best_score=stopper.best, steps=step)

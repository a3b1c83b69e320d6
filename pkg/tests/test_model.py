import math

import numpy as np
import pytest

from fact2question.autodiff import Tape, Tensor, backprop, finite_diff_check
from fact2question.data import BOS, Fact, Vocabulary
from fact2question.errors import ContractError, ParseError, UnknownIdError
from fact2question.model import (
    QGenParams,
    attend,
    decoder_step,
    encode_fact,
    init_state,
    load_checkpoint,
    output_distribution,
    save_checkpoint,
    sequence_log_likelihood,
)

INPUT_VOCAB = Vocabulary(["<unk>", "s0", "r0", "o0"])
OUTPUT_VOCAB = Vocabulary(["<unk>", "<bos>", "?", "w3", "w4", "w5", "w6", "w7"])
FACT = Fact("s0", "r0", "o0")


def _params(seed=0, d_enc=4, d_dec=4, hidden=6, n_out=8, zero=False,
            input_emb=None):
    rng = np.random.default_rng(seed + 100)
    if input_emb is None:
        input_emb = rng.normal(size=(len(INPUT_VOCAB), d_enc))
    params = QGenParams.init(n_in=len(INPUT_VOCAB), n_out=n_out, d_enc=d_enc,
                             d_dec=d_dec, hidden=hidden, seed=seed,
                             input_emb=input_emb)
    if zero:
        for tensor in params.tensors.values():
            tensor.value[:] = 0.0
    return params


def test_encode_fact_zero_projection():
    params = _params(zero=True)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    for part in (enc.enc_s, enc.enc_r, enc.enc_o):
        assert np.array_equal(part.value, np.zeros(6))


def test_encode_fact_identity_projection_returns_raw_rows():
    params = _params(d_enc=4, hidden=4)
    params.tensors["atom_proj"].value[:] = np.eye(4)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    s, r, o = (INPUT_VOCAB.index(a) for a in FACT.atoms())
    assert np.array_equal(enc.enc_s.value, params.input_emb[s])
    assert np.array_equal(enc.enc_r.value, params.input_emb[r])
    assert np.array_equal(enc.enc_o.value, params.input_emb[o])


def test_encode_fact_matches_matvec_oracle():
    params = _params(seed=3)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    proj = params.tensors["atom_proj"].value
    s = INPUT_VOCAB.index("s0")
    assert np.allclose(enc.enc_s.value, proj @ params.input_emb[s])
    assert np.array_equal(
        enc.enc_all.value,
        np.concatenate([enc.enc_s.value, enc.enc_r.value, enc.enc_o.value]))


def test_encode_fact_unknown_atom_names_role():
    params = _params()
    with pytest.raises(UnknownIdError, match="subject.*nope"):
        encode_fact(Fact("nope", "r0", "o0"), params, INPUT_VOCAB)
    with pytest.raises(UnknownIdError, match="relationship"):
        encode_fact(Fact("s0", "nope", "o0"), params, INPUT_VOCAB)


def test_init_state_zero_cases():
    params = _params(zero=True)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    assert np.array_equal(init_state(enc, params).value, np.zeros(6))

    params2 = _params()
    params2.input_emb[:] = 0.0
    enc2 = encode_fact(FACT, params2, INPUT_VOCAB)
    assert np.array_equal(init_state(enc2, params2).value, np.zeros(6))


def test_init_state_matches_oracle():
    params = _params(seed=5)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    expected = np.tanh(params.tensors["init_proj"].value @ enc.enc_all.value)
    assert np.allclose(init_state(enc, params).value, expected, atol=1e-15)


def test_attend_zero_parameters_halves_everything():
    params = _params(seed=1)
    params.tensors["att_hidden"].value[:] = 0.0
    params.tensors["att_score"].value[:] = 0.0
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    h = Tensor(np.zeros(6))
    c, alpha = attend(enc, h, params)
    assert np.allclose(alpha.value, [0.5, 0.5, 0.5])
    expected = 0.5 * (enc.enc_s.value + enc.enc_r.value + enc.enc_o.value)
    assert np.allclose(c.value, expected, atol=1e-15)


def test_attend_zero_relation_object_leaves_subject_term():
    params = _params(seed=2)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    zero = Tensor(np.zeros(6))
    enc.enc_r, enc.enc_o = zero, zero
    h = Tensor(np.zeros(6))
    c, alpha = attend(enc, h, params)
    assert np.allclose(c.value, alpha.value[0] * enc.enc_s.value, atol=1e-15)


def test_attend_matches_weighted_sum_oracle():
    params = _params(seed=4)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    h = Tensor(np.random.default_rng(9).normal(size=6))
    c, alpha = attend(enc, h, params)
    z = np.concatenate([enc.enc_all.value, h.value])
    hid = np.tanh(params.tensors["att_hidden"].value @ z)
    scores = params.tensors["att_score"].value @ hid
    expected_alpha = 1.0 / (1.0 + np.exp(-scores))
    assert np.allclose(alpha.value, expected_alpha, atol=1e-14)
    expected_c = (expected_alpha[0] * enc.enc_s.value
                  + expected_alpha[1] * enc.enc_r.value
                  + expected_alpha[2] * enc.enc_o.value)
    assert np.allclose(c.value, expected_c, atol=1e-13)


@pytest.mark.parametrize("seed", range(30))
def test_attention_scalars_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    params = _params(seed=seed)
    for tensor in params.tensors.values():
        tensor.value[:] = rng.normal(scale=5.0, size=tensor.value.shape)
    enc = encode_fact(FACT, params, INPUT_VOCAB)
    h = Tensor(rng.normal(size=6))
    c, alpha = attend(enc, h, params)
    assert np.all((alpha.value > 0.0) & (alpha.value < 1.0))
    manual = (alpha.value[0] * enc.enc_s.value + alpha.value[1] * enc.enc_r.value
              + alpha.value[2] * enc.enc_o.value)
    assert np.max(np.abs(c.value - manual)) <= 1e-12


def test_decoder_step_all_zero_parameters():
    params = _params(zero=True)
    h_prev = Tensor(np.arange(6.0))
    c = Tensor(np.zeros(6))
    h = decoder_step(3, h_prev, c, params)
    # gates are 0.5, the candidate is tanh(0)=0, so h = 0.5 * h_prev
    assert np.allclose(h.value, 0.5 * h_prev.value)
    h0 = decoder_step(3, Tensor(np.zeros(6)), c, params)
    assert np.array_equal(h0.value, np.zeros(6))


def test_decoder_step_matches_scalar_oracle():
    params = _params(seed=7, d_enc=3, d_dec=3, hidden=3)
    rng = np.random.default_rng(11)
    h_prev = Tensor(rng.normal(size=3))
    c = Tensor(rng.normal(size=3))
    w_prev = 2
    h = decoder_step(w_prev, h_prev, c, params)

    t = {name: tensor.value for name, tensor in params.tensors.items()}
    e_w = t["word_emb"][w_prev]

    def sig(x):
        return 1.0 / (1.0 + math.exp(-x))

    expected = np.empty(3)
    for i in range(3):
        g_r = sig(sum(t["reset_emb"][i][j] * e_w[j] for j in range(3))
                  + sum(t["reset_ctx"][i][j] * c.value[j] for j in range(3))
                  + sum(t["reset_state"][i][j] * h_prev.value[j] for j in range(3)))
        assert 0.0 < g_r < 1.0
    # full-vector oracle (hand recurrence, gates applied to the old state)
    g_r = np.array([sig((t["reset_emb"] @ e_w + t["reset_ctx"] @ c.value
                         + t["reset_state"] @ h_prev.value)[i]) for i in range(3)])
    g_u = np.array([sig((t["update_emb"] @ e_w + t["update_ctx"] @ c.value
                         + t["update_state"] @ h_prev.value)[i]) for i in range(3)])
    cand = np.tanh(t["cand_emb"] @ e_w + t["cand_ctx"] @ c.value
                   + t["cand_state"] @ (g_r * h_prev.value))
    expected = g_u * h_prev.value + (1.0 - g_u) * cand
    assert np.allclose(h.value, expected, atol=1e-14)


def test_decoder_step_bounded_by_old_state_and_one():
    rng = np.random.default_rng(0)
    for seed in range(10):
        params = _params(seed=seed)
        h_prev = Tensor(rng.normal(scale=3.0, size=6))
        c = Tensor(rng.normal(size=6))
        h = decoder_step(int(rng.integers(8)), h_prev, c, params)
        assert np.max(np.abs(h.value)) <= max(np.max(np.abs(h_prev.value)), 1.0)


def test_decoder_step_rejects_out_of_range_token():
    params = _params()
    with pytest.raises(Exception):
        decoder_step(99, Tensor(np.zeros(6)), Tensor(np.zeros(6)), params)


def test_output_distribution_uniform_for_zero_weights():
    params = _params(zero=True)
    probs = output_distribution(Tensor(np.zeros(6)), 0, Tensor(np.zeros(6)), params)
    assert np.allclose(probs.value, np.full(8, 1.0 / 8.0))


def test_output_distribution_matches_softmax_oracle_and_range():
    params = _params(seed=8)
    rng = np.random.default_rng(13)
    h = Tensor(rng.normal(size=6))
    c = Tensor(rng.normal(size=6))
    probs = output_distribution(h, 4, c, params)
    t = {name: tensor.value for name, tensor in params.tensors.items()}
    pre = np.tanh(t["out_state"] @ h.value + t["out_emb"] @ t["word_emb"][4]
                  + t["out_ctx"] @ c.value)
    logits = t["out_proj"] @ pre
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    assert np.allclose(probs.value, expected, atol=1e-14)
    assert abs(probs.value.sum() - 1.0) <= 1e-12
    assert np.all((probs.value > 0.0) & (probs.value < 1.0))


def test_sequence_ll_uniform_single_token():
    params = _params(zero=True, n_out=8)
    vocab4 = Vocabulary(["<unk>", "<bos>", "?", "w"])
    params4 = _params(zero=True, n_out=4)
    ll = sequence_log_likelihood(FACT, ["?"], params4, INPUT_VOCAB, vocab4)
    assert ll.item() == pytest.approx(math.log(0.25), abs=1e-12)


def test_sequence_ll_uniform_two_tokens():
    vocab4 = Vocabulary(["<unk>", "<bos>", "?", "w"])
    params4 = _params(zero=True, n_out=4)
    ll = sequence_log_likelihood(FACT, ["w", "?"], params4, INPUT_VOCAB, vocab4)
    assert ll.item() == pytest.approx(2.0 * math.log(0.25), abs=1e-12)


def test_sequence_ll_is_nonpositive_and_maps_oov_to_unk():
    params = _params(seed=6)
    ll = sequence_log_likelihood(FACT, ["martian", "w3", "?"], params,
                                 INPUT_VOCAB, OUTPUT_VOCAB)
    assert ll.item() <= 0.0
    ll_unk = sequence_log_likelihood(FACT, ["<unk>", "w3", "?"], params,
                                     INPUT_VOCAB, OUTPUT_VOCAB)
    assert ll.item() == pytest.approx(ll_unk.item(), abs=1e-12)


def test_sequence_ll_contract_errors():
    params = _params()
    with pytest.raises(ContractError):
        sequence_log_likelihood(FACT, [], params, INPUT_VOCAB, OUTPUT_VOCAB)
    with pytest.raises(ContractError):
        sequence_log_likelihood(FACT, ["w3"], params, INPUT_VOCAB, OUTPUT_VOCAB)


def test_sequence_ll_matches_chained_op_oracle():
    params = _params(seed=9)
    tokens = ["w3", "w5", "?"]
    ll = sequence_log_likelihood(FACT, tokens, params, INPUT_VOCAB, OUTPUT_VOCAB)

    enc = encode_fact(FACT, params, INPUT_VOCAB)
    h = init_state(enc, params)
    w_prev = OUTPUT_VOCAB.index(BOS)
    total = 0.0
    for token in tokens:
        target = OUTPUT_VOCAB.index(token)
        c, _ = attend(enc, h, params)
        h = decoder_step(w_prev, h, c, params)
        probs = output_distribution(h, w_prev, c, params)
        total += math.log(probs.value[target])
        w_prev = target
    assert ll.item() == pytest.approx(total, abs=1e-12)


def test_sequence_ll_gradients_match_finite_differences():
    # acceptance-sized check: d_enc 4, hidden 6, vocab 8, 5-token question.
    # weights at scale 0.4 keep every gradient coordinate well above the
    # finite-difference noise floor (~1e-10 for |loss| ~ 10 at eps 1e-5)
    params = _params(seed=0)
    rng = np.random.default_rng(1)
    for tensor in params.tensors.values():
        tensor.value[:] = rng.normal(scale=0.4, size=tensor.value.shape)
    tokens = ["w3", "w4", "w5", "w6", "?"]

    def loss():
        return sequence_log_likelihood(FACT, tokens, params, INPUT_VOCAB,
                                       OUTPUT_VOCAB)

    err = finite_diff_check(loss, params.trainable(), eps=1e-5)
    assert err <= 1e-4


def test_frozen_input_table_gets_no_gradient():
    params = _params(seed=10)
    with Tape() as tape:
        tape.watch(params.trainable())
        ll = sequence_log_likelihood(FACT, ["w3", "?"], params, INPUT_VOCAB,
                                     OUTPUT_VOCAB)
    grads = backprop(tape, ll)
    assert set(grads) == set(params.tensors)
    before = params.input_emb.copy()
    assert np.array_equal(params.input_emb, before)


def test_checkpoint_round_trip(tmp_path):
    params = _params(seed=11)
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(path, params, "sp", INPUT_VOCAB, OUTPUT_VOCAB)
    loaded, mode = load_checkpoint(path, INPUT_VOCAB, OUTPUT_VOCAB)
    assert mode == "sp"
    assert loaded.d_enc == params.d_enc
    assert loaded.hidden == params.hidden
    assert np.array_equal(loaded.input_emb, params.input_emb)
    for name, tensor in params.tensors.items():
        assert np.array_equal(loaded.tensors[name].value, tensor.value)


def test_checkpoint_rejects_vocab_mismatch(tmp_path):
    params = _params(seed=12)
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(path, params, "mp", INPUT_VOCAB, OUTPUT_VOCAB)
    other = Vocabulary(["<unk>", "<bos>", "?", "different"])
    with pytest.raises(ContractError, match="vocabulary hash"):
        load_checkpoint(path, INPUT_VOCAB, other)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "checkpoint.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ParseError):
        load_checkpoint(path, INPUT_VOCAB, OUTPUT_VOCAB)

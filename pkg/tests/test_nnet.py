import numpy as np
import pytest

from cassnat.ctc import collapse, trigger_mask
from cassnat.errors import ContractError
from cassnat.nnet import (
    CM,
    NCM,
    AttentionSpec,
    BlockConfig,
    EncoderBlock,
    MadBlock,
    MultiHeadAttention,
    SadBlock,
    Subsampler,
    Taee,
    cm_mask,
    length_mask,
    masked_attention,
    ncm_mask,
    relative_position_bias,
    sinusoidal,
)
from cassnat.numcore import Tensor, grad_check_params, ops

D, H = 8, 2
NODROP = BlockConfig(d_ff=16, conv_kernel=3, dropout=0.0)


def rng(seed=0):
    return np.random.default_rng(seed)


def close(a, b, tol=1e-9):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), atol=tol, rtol=0)


# -- masked attention ----------------------------------------------------------------


def test_single_allowed_key_returns_its_value():
    r = rng()
    q, k, v = (Tensor(r.normal(size=(4, 3))) for _ in range(3))
    mask = np.zeros((4, 4), dtype=bool)
    mask[np.arange(4), [2, 0, 3, 3]] = True
    out = masked_attention(q, k, v, mask)
    close(out.data, v.data[[2, 0, 3, 3]], 1e-12)


def test_ncm_without_padding_is_unmasked():
    r = rng(1)
    q, k, v = (Tensor(r.normal(size=(1, 5, 4))) for _ in range(3))
    valid = np.ones((1, 5), dtype=bool)
    a = masked_attention(q, k, v, ncm_mask(valid, valid))
    scores = q.data @ k.data.transpose(0, 2, 1) / 2.0
    w = np.exp(scores - scores.max(-1, keepdims=True))
    w /= w.sum(-1, keepdims=True)
    close(a.data, w @ v.data, 1e-12)


def test_trigger_mask_row_is_convex_combination_of_its_segment():
    r = rng(2)
    tm = trigger_mask([0, 1, 1, 0, 2, 0, 0, 3, 0], 0)
    q = Tensor(r.normal(size=(4, 6)))
    k = Tensor(r.normal(size=(9, 6)))
    v = Tensor(np.eye(9))  # output row == attention weights
    out = masked_attention(q, k, v, tm.attention_rows()).data
    row_a = out[1]
    assert set(np.flatnonzero(row_a > 1e-30).tolist()) == {2, 3, 4}
    assert row_a.sum() == pytest.approx(1.0, abs=1e-12)


def test_fully_masked_row_is_an_error():
    z = Tensor(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        masked_attention(z, z, z, np.array([[True, False], [False, False]]))


def test_literal_mask_leaves_rows_unnormalized():
    r = rng(3)
    q, k, v = (Tensor(r.normal(size=(3, 4))) for _ in range(3))
    mask = np.array([[1, 1, 0], [1, 0, 0], [1, 1, 1]], dtype=bool)
    _, w = masked_attention(q, k, Tensor(np.eye(3)), mask, literal=True, return_weights=True)
    assert (w.data[~mask] == 0).all()
    assert w.data[1].sum() < 1.0


@pytest.mark.parametrize("kind", ["CM", "NCM", "TM"])
def test_attention_rows_normalized_and_masked(kind):
    r = rng(4)
    for _ in range(30):
        b, n, t = 2, int(r.integers(1, 6)), int(r.integers(1, 9))
        if kind == "TM":
            ids = r.integers(0, 3, size=(b, t))
            rows = [trigger_mask(z, int(r.integers(0, 2))).attention_rows() for z in ids]
            n = max(len(x) for x in rows)
            mask = np.zeros((b, n, t), dtype=bool)
            for i, x in enumerate(rows):
                mask[i, : len(x)] = x
                mask[i, len(x) :, 0] = True
        else:
            t = n
            valid = length_mask(r.integers(1, n + 1, size=b), n)
            mask = cm_mask(valid) if kind == "CM" else ncm_mask(valid, valid)
        q = Tensor(r.normal(scale=5, size=(b, n, 4)))
        k = Tensor(r.normal(scale=5, size=(b, t, 4)))
        _, w = masked_attention(q, k, k, mask, return_weights=True)
        close(w.data.sum(-1), 1.0)
        assert (w.data[~mask] <= 1e-30).all()


def test_attention_spec_validation():
    with pytest.raises(ContractError):
        AttentionSpec(10, 3)
    assert AttentionSpec(8, 2).d_k == 4


# -- relative positions ------------------------------------------------------------------


def test_rel_bias_k0_is_constant():
    table = Tensor(np.array([[0.7, -0.2]]))
    b = relative_position_bias(table, 4, 6, 0).data
    assert (b[0] == 0.7).all() and (b[1] == -0.2).all()


def test_rel_bias_shift_invariant_and_clipped():
    table = Tensor(rng().normal(size=(9, 2)))
    b = relative_position_bias(table, 12, 12, 4).data
    for i in range(6):
        for j in range(6):
            assert (b[:, i, j] == b[:, i + 5, j + 5]).all()
    assert (b[:, 0, 4] == b[:, 0, 11]).all()
    assert (b[:, 11, 0] == b[:, 7, 0]).all()
    assert not np.allclose(b[:, 0, 3], b[:, 0, 4])


# -- blocks ---------------------------------------------------------------------------------


def _zero_branches(block):
    for ffn in (block.ffn1, block.ffn2):
        if ffn is not None:
            ffn.l2.weight.data[:] = 0
            ffn.l2.bias.data[:] = 0
    block.att.wo.weight.data[:] = 0
    block.att.wo.bias.data[:] = 0
    if block.conv is not None:
        block.conv.pw2.weight.data[:] = 0
        block.conv.pw2.bias.data[:] = 0


@pytest.mark.parametrize("macaron", [True, False])
def test_zero_residuals_reduce_to_final_norm(macaron):
    cfg = BlockConfig(d_ff=16, conv_kernel=3, dropout=0.0, macaron=macaron, use_conv=macaron)
    block = EncoderBlock(D, H, cfg, rng(), rel_pos_k=2).eval()
    _zero_branches(block)
    x = rng(5).normal(size=(2, 5, D))
    out = block(Tensor(x), np.ones((2, 5), dtype=bool))
    assert out.shape == x.shape
    close(out.data, ops.layer_norm(x).data, 1e-12)


def _junk_padding(block_call, length, t_max, seed=6):
    r = rng(seed)
    x = r.normal(size=(1, t_max, D))
    y = x.copy()
    y[:, length:] = r.normal(scale=100, size=(1, t_max - length, D))
    valid = length_mask([length], t_max)
    a = block_call(Tensor(x), valid).data[:, :length]
    b = block_call(Tensor(y), valid).data[:, :length]
    short = block_call(Tensor(x[:, :length]), length_mask([length], length)).data
    return a, b, short


@pytest.mark.parametrize("rel", [None, 3])
def test_encoder_block_ignores_padding(rel):
    block = EncoderBlock(D, H, NODROP, rng(), rel_pos_k=rel).eval()
    a, b, short = _junk_padding(block, 4, 7)
    close(a, b)
    close(a, short)


def test_sad_single_token_attention_is_trivial():
    block = SadBlock(D, H, NODROP, rng()).eval()
    x = Tensor(rng(1).normal(size=(1, 1, D)))
    valid = np.ones((1, 1), dtype=bool)
    att_in = block.norm_att(ops.add(x, ops.scale(block.ffn1(x), 0.5)))
    block(x, valid)
    # the only key gets all the weight
    assert block.att.last_weights.shape[-1] == 1
    close(block.att.last_weights, 1.0, 0)
    v = block.att.wo(block.att.wv(att_in))
    assert v.shape == (1, 1, D)


def test_sad_pad_tail_permutation_invariant():
    block = SadBlock(D, H, NODROP, rng()).eval()
    r = rng(8)
    x = r.normal(size=(1, 6, D))
    y = x.copy()
    y[:, 3:] = y[:, [5, 3, 4]]
    valid = length_mask([3], 6)
    close(block(Tensor(x), valid).data[:, :3], block(Tensor(y), valid).data[:, :3])


def test_causal_block_ignores_future_inputs():
    block = SadBlock(D, H, BlockConfig(d_ff=16, dropout=0.0, use_conv=False), rng(), mask_kind=CM).eval()
    r = rng(9)
    x = r.normal(size=(1, 6, D))
    y = x.copy()
    y[:, 4:] += r.normal(size=(1, 2, D))
    valid = np.ones((1, 6), dtype=bool)
    close(block(Tensor(x), valid).data[:, :4], block(Tensor(y), valid).data[:, :4])


def test_mad_single_frame_source_is_delta_attention():
    mad = MadBlock(D, H, NODROP, rng()).eval()
    r = rng(10)
    s = Tensor(r.normal(size=(1, 3, D)))
    h = Tensor(r.normal(size=(1, 5, D)))
    src = np.zeros((1, 3, 5), dtype=bool)
    src[..., 2] = True
    mad(s, np.ones((1, 3), dtype=bool), h, src)
    w = mad.src_att.last_weights
    close(w[..., 2], 1.0, 0)
    proj = mad.src_att.wo(mad.src_att.wv(h)).data[0, 2]
    att_out = mad.src_att(s, h, h, src).data[0]
    close(att_out, np.broadcast_to(proj, att_out.shape), 1e-12)


def test_mad_self_mask_choice_irrelevant_for_one_token():
    a = MadBlock(D, H, NODROP, rng(), self_kind=NCM).eval()
    b = MadBlock(D, H, NODROP, rng(), self_kind=CM).eval()
    r = rng(11)
    s = Tensor(r.normal(size=(1, 1, D)))
    h = Tensor(r.normal(size=(1, 4, D)))
    src = np.ones((1, 1, 4), dtype=bool)
    valid = np.ones((1, 1), dtype=bool)
    assert np.array_equal(a(s, valid, h, src).data, b(s, valid, h, src).data)


def test_mad_matches_its_five_equations():
    mad = MadBlock(D, H, NODROP, rng()).eval()
    r = rng(12)
    s = Tensor(r.normal(size=(1, 3, D)))
    h = Tensor(r.normal(size=(1, 4, D)))
    valid = np.ones((1, 3), dtype=bool)
    src = np.ones((1, 3, 4), dtype=bool)
    s1 = s.data + 0.5 * mad.ffn1(s).data
    T1 = Tensor(s1)
    s2 = s1 + mad.norm_self(mad.self_att(T1, T1, T1, ncm_mask(valid, valid))).data
    s3 = s2 + mad.conv(Tensor(s2), valid).data
    T3 = Tensor(s3)
    s4 = s3 + mad.norm_src(mad.src_att(T3, h, h, src)).data
    o = mad.norm_out(Tensor(s4 + 0.5 * mad.ffn2(Tensor(s4)).data)).data
    close(mad(s, valid, h, src).data, o, 1e-12)


def test_mad_micro_gradient_check():
    mad = MadBlock(4, 2, BlockConfig(d_ff=6, conv_kernel=3, dropout=0.0), rng()).eval()
    r = rng(13)
    s = Tensor(r.normal(size=(1, 3, 4)))
    h = Tensor(r.normal(size=(1, 4, 4)))
    valid = np.ones((1, 3), dtype=bool)
    src = trigger_mask([1, 0, 2, 0], 0).attention_rows()[None]
    weights = r.normal(size=(1, 3, 4))

    def loss():
        return ops.sum(ops.mul(mad(s, valid, h, src), weights))

    assert grad_check_params(loss, list(mad.parameters().values()), 1e-5) <= 1e-3


# -- TAEE ----------------------------------------------------------------------------------------


def test_taee_one_frame_row_is_projection_of_that_frame():
    taee = Taee(D, H, rng()).eval()
    h = Tensor(rng(14).normal(size=(1, 5, D)))
    tm = trigger_mask([0, 1, 0, 0, 0], 0)  # token row covers frames 0..1, EOS 2..4
    rows = tm.attention_rows().copy()
    rows[0] = False
    rows[0, 3] = True
    out = taee(h, rows[None]).data
    proj = taee.att.wo(taee.att.wv(h)).data[0, 3]
    close(out[0, 0], proj, 1e-12)


def test_taee_length_rule_and_expansion_locality():
    taee = Taee(D, H, rng()).eval()
    z = [0, 1, 1, 0, 0, 2, 0, 0, 0, 0, 3, 0, 0, 0, 0]
    h = Tensor(rng(15).normal(size=(1, len(z), D)))
    m0 = trigger_mask(z, 0)
    m1 = trigger_mask(z, 1)
    out0 = taee(h, m0.attention_rows()[None]).data[0]
    out1 = taee(h, m1.attention_rows()[None]).data[0]
    assert out0.shape[0] == len(collapse(z)) + 1
    changed = np.abs(out0 - out1).max(axis=1) > 1e-12
    # each row changes iff its support changed
    support = (m0.attention_rows() != m1.attention_rows()).any(axis=1)
    assert (changed == support).all()


def test_taee_rejects_empty_row():
    taee = Taee(D, H, rng())
    with pytest.raises(ContractError):
        taee(Tensor(np.zeros((1, 3, D))), np.zeros((1, 2, 3), dtype=bool))


# -- subsampling and encodings -----------------------------------------------------------------------


def test_subsampling_length_and_padding():
    sub = Subsampler(3, D, rng())
    assert Subsampler.out_length(16) == 4
    assert Subsampler.out_length(np.array([1, 5, 9])).tolist() == [1, 2, 3]
    r = rng(16)
    x = r.normal(size=(1, 16, 3))
    y = x.copy()
    y[:, 9:] = 50.0
    a, la = sub(Tensor(x), [9])
    b, lb = sub(Tensor(y), [9])
    c, lc = sub(Tensor(x[:, :9]), [9])
    assert a.shape == (1, 4, D) and la.tolist() == [3] == lc.tolist()
    close(a.data[:, :3], b.data[:, :3], 1e-12)
    close(a.data[:, :3], c.data, 1e-12)


def test_sinusoidal_table():
    pe = sinusoidal(5, 6)
    assert pe.shape == (5, 6)
    close(pe[0], [0, 1, 0, 1, 0, 1], 0)
    assert pe[3, 0] == pytest.approx(np.sin(3.0))


def test_module_state_dict_round_trip():
    a = MultiHeadAttention(D, H, rng(1), rel_pos_k=2)
    b = MultiHeadAttention(D, H, rng(2), rel_pos_k=2)
    b.load_state_dict(a.state_dict())
    for k, v in a.parameters().items():
        assert np.array_equal(v.data, b.parameters()[k].data)
    assert "rel" in a.parameters()

import numpy as np
import pytest

from changetitans import tensor as T
from changetitans.tensor import Tensor, grad_check
from changetitans.vtitans import (
    EncoderConfig,
    PatchEmbedder,
    TitansBlock,
    VTitansEncoder,
    block_forward,
    chunked_attention,
    embed,
    encode,
    map_to_tokens,
    patchify,
    tokens_to_map,
)

from conftest import projected


def test_patchify_order_and_content(rng):
    img = rng.normal(size=(1, 2, 4, 6))
    tok = patchify(img, 2).data
    assert tok.shape == (1, 6, 8)
    # token 4 is patch row 1, col 1
    np.testing.assert_array_equal(tok[0, 4], img[0, :, 2:4, 2:4].transpose(1, 2, 0).ravel())


def test_patchify_rejects_indivisible():
    with pytest.raises(ValueError, match="divisible"):
        patchify(np.zeros((1, 3, 10, 8)), 4)


def test_map_token_roundtrip(rng):
    m = rng.normal(size=(2, 3, 4, 5))
    np.testing.assert_array_equal(tokens_to_map(map_to_tokens(m), 4, 5).data, m)


def test_embed_shapes(rng):
    emb = PatchEmbedder(3, 4, 8, 16, rng)
    assert embed(rng.normal(size=(3, 16, 16)), emb).shape == (16, 8)
    assert embed(rng.normal(size=(2, 3, 16, 16)), emb).shape == (2, 16, 8)
    with pytest.raises(ValueError, match="positional"):
        embed(rng.normal(size=(1, 3, 20, 20)), emb)


def test_config_layout():
    cfg = EncoderConfig(depth=12)
    assert cfg.taps == (3, 6, 9, 12)
    assert [i for i in range(1, 13) if cfg.has_memory(i)] == [3, 6, 9, 12]
    assert not any(EncoderConfig(depth=4, memory_interval=None).has_memory(i) for i in range(1, 5))
    with pytest.raises(ValueError):
        EncoderConfig(depth=6)
    with pytest.raises(ValueError):
        EncoderConfig(dim=10, heads=3)


def _block(rng, memory=True, second_order=False, chunk=4):
    blk = TitansBlock(8, 2, chunk, 2, rng, memory=memory, second_order=second_order)
    if memory:
        blk.memory.w2.data = rng.normal(0, 0.3, blk.memory.w2.shape)
    return blk


@pytest.mark.parametrize("memory", [False, True])
def test_chunk_causality_exact(memory, rng):
    blk = _block(rng, memory)
    x = rng.normal(size=(2, 16, 8))
    base = blk(x).data
    for j in range(1, 4):
        y = x.copy()
        y[:, 4 * j:4 * (j + 1)] += rng.normal(size=(2, 4, 8))
        out = blk(y).data
        np.testing.assert_array_equal(out[:, :4 * j], base[:, :4 * j])
        assert not np.array_equal(out[:, 4 * j:4 * (j + 1)], base[:, 4 * j:4 * (j + 1)])


def test_encoder_chunk_causality_exact(rng):
    cfg = EncoderConfig(depth=4, dim=8, patch=4, chunk=4, heads=2, memory_interval=2)
    enc = VTitansEncoder(cfg, 16, rng)
    for blk in enc.blocks:
        if blk.memory is not None:
            blk.memory.w2.data = rng.normal(0, 0.3, blk.memory.w2.shape)
    img = rng.normal(size=(1, 3, 16, 16))
    base = [t.data for t in encode(img, enc)]
    pert = img.copy()
    pert[:, :, 8:12, :] += 1.0  # patch row 2 = tokens 8..11 = chunk 2
    for b, t in zip(base, encode(pert, enc)):
        np.testing.assert_array_equal(t.data[:, :8], b[:, :8])


def test_attention_weights_never_see_future(rng):
    blk = _block(rng, memory=True)
    _, ws = chunked_attention(rng.normal(size=(12, 8)), blk, return_weights=True)
    # context per chunk: 2 persistent + 4 retrieved + 4 current tokens
    assert len(ws) == 3 and all(w.shape[-1] == 10 for w in ws)
    for w in ws:
        np.testing.assert_allclose(T.as_tensor(w).data.sum(-1), 1.0, atol=1e-12)


def test_memory_state_advances_per_chunk(rng):
    blk = _block(rng, memory=True)
    _, state = block_forward(rng.normal(size=(10, 8)), blk)
    assert state.step == 3  # chunks of 4, 4, 2


def test_memoryless_block_matches_gate_off(rng):
    blk = _block(rng, memory=True)
    x = rng.normal(size=(8, 8))
    blk.use_memory = False
    off = blk(x).data
    blk.memory = None
    np.testing.assert_array_equal(blk(x).data, off)


def test_fresh_memory_gate_is_identity(rng):
    blk = TitansBlock(8, 2, 4, 2, rng, memory=True)
    x = rng.normal(size=(4, 8))
    m, o, _, _ = blk.run_chunks(x)
    # first chunk: M_1 = updated initial memory; the unit bias keeps the gate near one
    assert np.allclose(o.data, m.data * blk.memory.initial_state().mlp(m).data, atol=0.1)


def test_titans_block_gradcheck(rng):
    blk = _block(rng, memory=True, second_order=True)
    x = Tensor(rng.normal(size=(1, 8, 8)), requires_grad=True)
    params = [x, blk.q.weight, blk.persistent, blk.memory.w1, blk.memory.theta_raw,
              blk.memory.w_k, blk.ffn.fc1.weight]
    assert grad_check(lambda: projected(blk(x)), params, max_elements=12) < 1e-4


def test_encoder_taps_shapes(rng):
    cfg = EncoderConfig(depth=4, dim=8, patch=4, chunk=8, heads=2)
    taps = encode(rng.normal(size=(2, 3, 16, 16)), VTitansEncoder(cfg, 16, rng))
    assert len(taps) == 4 and all(t.shape == (2, 16, 8) for t in taps)


def test_memory_resets_between_images(rng):
    cfg = EncoderConfig(depth=4, dim=8, patch=4, chunk=4, heads=2, memory_interval=1)
    enc = VTitansEncoder(cfg, 16, rng)
    a, b = rng.normal(size=(1, 3, 16, 16)), rng.normal(size=(1, 3, 16, 16))
    alone = encode(b, enc)[-1].data
    encode(a, enc)
    np.testing.assert_array_equal(encode(b, enc)[-1].data, alone)
    batched = encode(np.concatenate([a, b]), enc)[-1].data
    np.testing.assert_allclose(batched[1], alone[0], atol=1e-12)

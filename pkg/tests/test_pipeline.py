import numpy as np
import pytest

from changetitans import tensor as T
from changetitans.nn import NumericError
from changetitans.pipeline import (
    SGD,
    Adam,
    ChangeTitans,
    ModelConfig,
    SiamConc,
    SiamDiff,
    TrainConfig,
    augment,
    baseline_fuse,
    clip_grad_norm,
    config_hash,
    format_config,
    forward,
    load_checkpoint,
    loss_on,
    parse_config,
    read_dataset,
    save_checkpoint,
    synth_dataset,
    synth_pair,
    train,
    write_dataset,
)
from changetitans.pipeline.config import ConfigError
from changetitans.tensor import Tensor


@pytest.fixture(scope="module")
def tiny():
    return ChangeTitans(ModelConfig.tiny())


@pytest.fixture(scope="module")
def pairs():
    return synth_dataset(2, seed=3)


# ------------------------------------------------------------------- synthetic
def test_synth_is_deterministic():
    a, b = synth_pair(5), synth_pair(5)
    for x, y in ((a.x1, b.x1), (a.x2, b.x2), (a.mask, b.mask)):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(synth_pair(6).mask, a.mask)


def test_synth_zero_objects_has_empty_mask():
    assert synth_pair(1, n_objects=0).mask.sum() == 0


def test_synth_mask_marks_altered_pixels():
    p = synth_pair(11, size=64, n_objects=4)
    assert p.x1.shape == p.x2.shape == (3, 64, 64) and p.mask.shape == (64, 64)
    # objects are painted with colours far from the background, so changed pixels differ strongly
    diff = np.abs(p.x1 - p.x2).max(0)
    assert np.median(diff[p.mask == 1]) > 3 * np.median(diff[p.mask == 0])
    assert 0.0 <= p.x1.min() and p.x2.max() <= 1.0


def test_synth_mask_matches_rasteriser():
    # replay the generator's draws and rasterise the shapes independently
    seed, size, n = 21, 32, 3
    rng = np.random.default_rng(seed)
    from changetitans.pipeline.data import _texture

    _texture(rng, size, 3)
    union = np.zeros((size, size), bool)
    for _ in range(n):
        rect = rng.random() < 0.5
        lo, hi = size // 8, size // 3
        yy, xx = np.mgrid[0:size, 0:size]
        if rect:
            h, w = rng.integers(lo, hi + 1, 2)
            r0, c0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
            shape = np.zeros((size, size), bool)
            shape[r0:r0 + h, c0:c0 + w] = True
        else:
            rad = rng.uniform(lo / 2, hi / 2)
            cy, cx = rng.uniform(rad, size - rad, 2)
            shape = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
        rng.uniform(0.0, 1.0, 3)
        rng.random()
        rng.normal(0.0, 0.02, (3, int(shape.sum())))
        union |= shape
    assert synth_pair(seed, size, n).mask.sum() == union.sum()


def test_synth_rejects_bad_sizes():
    with pytest.raises(ValueError):
        synth_pair(0, size=48)
    with pytest.raises(ValueError):
        synth_pair(0, size=16)


def test_augment_is_consistent(rng):
    p = synth_pair(2)
    q = augment(p, np.random.default_rng(4))
    assert q.mask.sum() == p.mask.sum()
    # the same geometric transform hits image and mask: changed pixels still line up
    d = np.abs(q.x1 - q.x2).max(0)
    assert np.median(d[q.mask == 1]) > 3 * np.median(d[q.mask == 0])


def test_dataset_roundtrip(tmp_path):
    src = synth_dataset(2, seed=1)
    write_dataset(tmp_path, src)
    back = read_dataset(tmp_path)
    assert [b.ident for b in back] == [s.ident for s in src]
    for s, b in zip(src, back):
        np.testing.assert_array_equal(s.mask, b.mask)
        assert np.abs(s.x1 - b.x1).max() <= 0.5 / 255 + 1e-12


# ----------------------------------------------------------------------- model
def test_forward_contract(tiny, pairs):
    cm = forward((pairs[0].x1, pairs[0].x2), tiny)
    assert cm.prob.shape == (32, 32) and np.all((cm.prob > 0) & (cm.prob < 1))
    assert set(np.unique(cm.mask)) <= {0, 1}


def test_forward_64px_default_tiny():
    model = ChangeTitans(ModelConfig.tiny(image_size=64))
    p = synth_pair(0, size=64)
    cm = forward((p.x1, p.x2), model)
    assert cm.prob.shape == (64, 64) and np.isfinite(cm.prob).all()


def test_identical_inputs_finite(tiny, pairs):
    cm = forward((pairs[0].x1, pairs[0].x1), tiny)
    assert np.isfinite(cm.prob).all()


def test_stream_swap_bounded(tiny, pairs):
    a = forward((pairs[0].x1, pairs[0].x2), tiny).prob
    b = forward((pairs[0].x2, pairs[0].x1), tiny).prob
    # sum fusion is symmetric and each stream has its own memory, so only rounding may differ
    assert np.max(np.abs(a - b)) < 1e-9


def test_forward_shape_errors(tiny):
    with pytest.raises(ValueError, match="expected"):
        tiny(np.zeros((1, 3, 40, 40)), np.zeros((1, 3, 40, 40)))
    with pytest.raises(ValueError, match="differ"):
        tiny(np.zeros((1, 3, 32, 32)), np.zeros((2, 3, 32, 32)))
    with pytest.raises(ConfigError):
        ModelConfig.tiny(image_size=40)


@pytest.mark.parametrize("fusion", ["diff", "conv", "siam_diff", "siam_conc", "early"])
def test_fusion_variants_run(fusion, pairs):
    model = ChangeTitans(ModelConfig.tiny(fusion=fusion, depth=4, dim=16))
    assert forward((pairs[0].x1, pairs[0].x2), model).prob.shape == (32, 32)


def test_baseline_fusers(rng):
    f = Tensor(rng.normal(size=(1, 4, 3, 3)))
    np.testing.assert_array_equal(SiamDiff()(f, f).data, 0.0)
    g = Tensor(rng.normal(size=(1, 4, 3, 3)))
    np.testing.assert_array_equal(SiamDiff()(f, g).data, SiamDiff()(g, f).data)
    sc = SiamConc(4, rng)
    sc.mix.weight.data = np.concatenate([np.eye(4), np.zeros((4, 4))], 1)[..., None, None]
    sc.mix.bias.data = np.zeros(4)
    np.testing.assert_allclose(sc(f, g).data, f.data, atol=1e-15)
    np.testing.assert_array_equal(baseline_fuse(f, g, "siam_diff").data, np.abs(f.data - g.data))
    np.testing.assert_array_equal(baseline_fuse(f, g, "siam_conc", sc).data, sc(f, g).data)
    with pytest.raises(ValueError):
        baseline_fuse(f, g, "siam_conc")
    with pytest.raises(ValueError):
        baseline_fuse(f, g, "median")


def test_memory_switch(tiny, pairs):
    on = forward((pairs[0].x1, pairs[0].x2), tiny).prob
    tiny.set_memory(False)
    try:
        off = forward((pairs[0].x1, pairs[0].x2), tiny).prob
    finally:
        tiny.set_memory(True)
    assert not np.array_equal(on, off)


def test_parameter_names_are_hierarchical(tiny):
    names = [n for n, _ in tiny.named_parameters()]
    assert len(names) == len(set(names))
    assert "encoder.blocks.2.memory.w1" in names and "decoder.head.conv2.weight" in names


def test_dead_parameter_audit(pairs):
    # exact outer gradients need the second-order inner loop; the zero-initialised adapter gates
    # are opened and chunks shortened (momentum decay only matters from the second chunk on)
    model = ChangeTitans(ModelConfig.tiny(second_order=True, chunk=8, decoder_chunk=8))
    for _, mod in model.named_modules():
        if hasattr(mod, "gamma_in"):
            mod.gamma_in.data, mod.gamma_ex.data = np.array(0.3), np.array(0.3)
            mod.cffn.fc2.weight.data = np.full(mod.cffn.fc2.weight.shape, 0.01)
        if getattr(mod, "memory", None) is not None:
            mod.memory.w2.data = np.full(mod.memory.w2.shape, 0.01)
    loss_on(model, pairs).backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_first_order_whitelist(pairs):
    # in the default first-order mode only the memory key/value projections and paths behind
    # closed gates may be gradient-free
    model = ChangeTitans(ModelConfig.tiny())
    loss_on(model, pairs).backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not np.any(p.grad)]
    allowed = ("memory.w_k", "memory.w_v", "memory.w_q", "memory.eta_raw", "adapter.stages.")
    assert all(any(a in n for a in allowed) for n in dead), dead


# -------------------------------------------------------------------- training
def test_lr_zero_keeps_parameters(pairs):
    model = ChangeTitans(ModelConfig.tiny())
    before = model.state_dict()
    train(model, pairs, TrainConfig(steps=2, learning_rate=0.0, batch_size=2))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_clipping_bounds_global_norm(rng):
    ps = [Tensor(np.zeros(3), requires_grad=True), Tensor(np.zeros((2, 2)), requires_grad=True)]
    ps[0].grad, ps[1].grad = np.full(3, 1e6), np.full((2, 2), -1e6)
    pre = clip_grad_norm(ps, 0.5)
    post = np.sqrt(sum(float((p.grad ** 2).sum()) for p in ps))
    assert pre > 1e6 and post <= 0.5 + 1e-12


def test_optimisers_descend_quadratic():
    for make in (lambda p: SGD(p, 0.1, 0.9), lambda p: Adam(p, 0.1)):
        x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = make([x])
        for _ in range(200):
            x.grad = 2 * x.data
            opt.step()
        assert np.abs(x.data).max() < 1e-2


def test_bitwise_reproducible_trace(pairs):
    cfg = TrainConfig(steps=3, batch_size=1, augment=True)
    runs = [train(ChangeTitans(ModelConfig.tiny()), pairs, cfg, seed=9).losses for _ in range(2)]
    assert runs[0] == runs[1]


def test_nan_names_module(pairs):
    model = ChangeTitans(ModelConfig.tiny())
    model.decoder.reduce.weight.data = np.full(model.decoder.reduce.weight.shape, np.nan)
    with pytest.raises(NumericError, match="decoder"):
        train(model, pairs, TrainConfig(steps=1))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train(ChangeTitans(ModelConfig.tiny()), [], TrainConfig(steps=1))


# ----------------------------------------------------------------- checkpoints
def test_checkpoint_roundtrip_and_resume(tmp_path, pairs):
    model = ChangeTitans(ModelConfig.tiny())
    cfg = TrainConfig(steps=2, batch_size=2)
    train(model, pairs, cfg)
    save_checkpoint(tmp_path / "ck", model, step=2)
    loaded, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["step"] == 2 and manifest["config_hash"] == config_hash(model.cfg)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    assert float(loss_on(model, pairs).data) == float(loss_on(loaded, pairs).data)


def test_checkpoint_hash_mismatch(tmp_path):
    model = ChangeTitans(ModelConfig.tiny())
    save_checkpoint(tmp_path, model)
    (tmp_path / "config.txt").write_text(format_config(ModelConfig.tiny(dim=16)))
    with pytest.raises(ConfigError, match="hash"):
        load_checkpoint(tmp_path)


# ---------------------------------------------------------------------- config
def test_config_roundtrip():
    cfg = ModelConfig.tiny(fusion="conv", memory_interval=None, upsample="bilinear")
    tc = TrainConfig(steps=7, optimizer="adam")
    m2, t2 = parse_config(format_config(cfg, tc))
    assert m2 == cfg and t2 == tc


def test_config_parsing_table_names():
    m, t = parse_config("""
        # desk-scale run
        Number of Titans Blocks = 8
        Embedding Dimension = 16
        patch_size = 8x8
        input_resolution = 64 x 64
        memory_block_interval = every 2
        learning_rate = 0.01
    """)
    assert (m.encoder.depth, m.encoder.dim, m.encoder.patch, m.image_size) == (8, 16, 8, 64)
    assert m.encoder.memory_interval == 2 and t.learning_rate == 0.01


@pytest.mark.parametrize("text", ["nonsense", "bogus_key = 1", "steps = many", "fusion_module = max",
                                  "optimizer = rmsprop", "input_resolution = 32x64"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)

import numpy as np
import pytest

from clickview import model as M
from clickview import tensor as T
from clickview.geometry import batched_structure_aware_loss
from clickview.model import ModelConfig, default_config, init_params
from clickview.tensor import Tensor

from gradcheck import rel_err, sample_indices


def tiny_config(variant="ch_full", **over):
    """Small config for fast tests: 16px images, 2 conv layers, 8 bins."""
    base = dict(
        image_size=16,
        conv_specs=((4, 3, 2, 1), (6, 3, 1, 1)),
        attention_grid=(4, 4),
        kp_pool_factor=4,
        kp_map_feature_dim=8,
        kp_class_feature_dim=4,
        image_feature_dim=12,
        fused_dim=10,
        n_bins=8,
        loss_t=2 * np.pi / 8,
        kp_classes={"boxy": ("left_a", "right_a", "nose"), "slim": ("left_b", "right_b")},
        variant=variant,
    )
    base.update(over)
    return default_config(**base)


def rand_inputs(cfg, rng, batch=1):
    s = cfg.image_size
    images = rng.uniform(0, 1, (batch, 3, s, s))
    kmaps = rng.uniform(0, 1, (batch, s, s))
    kvecs = np.zeros((batch, cfg.total_kp_classes))
    for i in range(batch):
        kvecs[i, rng.integers(0, cfg.total_kp_classes)] = 1.0
    return images, kmaps, kvecs


def test_config_validation_catches_grid_mismatch():
    with pytest.raises(ValueError, match="attention_grid"):
        tiny_config(attention_grid=(5, 5))


def test_variant_validation():
    with pytest.raises(ValueError, match="variant"):
        tiny_config(variant="nope")


def test_weight_map_simplex_every_variant():
    rng = np.random.default_rng(0)
    for variant in M.VARIANTS:
        if variant == "image_only":
            continue
        cfg = tiny_config(variant)
        params = init_params(cfg, np.random.default_rng(1))
        images, kmaps, kvecs = rand_inputs(cfg, rng, batch=3)
        _, wmap = M.forward_batch(params, cfg, images, kmaps, kvecs)
        w = wmap.data
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=(1, 2)), 1.0, atol=1e-10)


def test_blank_inputs_give_uniform_map_and_mean_column():
    cfg = tiny_config("ch_full")
    params = init_params(cfg, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    s = cfg.image_size
    acts = Tensor(rng.uniform(-1, 1, (1, cfg.attended_channels, *cfg.attention_grid)))
    kp_feats, wmap = M.keypoint_stream(
        params, cfg, Tensor(np.zeros((1, s, s))),
        Tensor(np.zeros((1, cfg.total_kp_classes))), acts)
    h, w = cfg.attention_grid
    np.testing.assert_array_equal(wmap.data, np.full((1, h, w), 1.0 / (h * w)))
    mean_col = acts.data[0].reshape(cfg.attended_channels, -1).mean(axis=1)
    np.testing.assert_allclose(kp_feats.data[0], mean_col, atol=1e-12)


def test_keypoint_stream_hand_built_dot_product():
    # 2x2 grid, one channel with columns [1,2,3,4] and weights [.1,.2,.3,.4]
    cfg = tiny_config("ch_full")
    cols = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    w = Tensor(np.array([[0.1, 0.2], [0.3, 0.4]]))
    out = T.scale_sum(cols, w)
    assert abs(float(out.data[0]) - 3.0) < 1e-15


def test_weight_map_ignores_image_content():
    """The attention map reads only the keypoint inputs: same (map, class)
    with a different image yields the identical map."""
    cfg = tiny_config("ch_full")
    params = init_params(cfg, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    imgs1, kmaps, kvecs = rand_inputs(cfg, rng)
    imgs2 = rng.uniform(0, 1, imgs1.shape)
    _, w1 = M.forward_batch(params, cfg, imgs1, kmaps, kvecs)
    _, w2 = M.forward_batch(params, cfg, imgs2, kmaps, kvecs)
    np.testing.assert_array_equal(w1.data, w2.data)


def test_image_only_invariant_to_keypoint():
    cfg = tiny_config("image_only")
    params = init_params(cfg, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 1, (cfg.image_size, cfg.image_size, 3))
    p1 = M.predict(params, cfg, img, 1, 2, "left_a", "boxy")
    p2 = M.predict(params, cfg, img, 9, 14, "nose", "boxy")
    for angle in M.ANGLE_NAMES:
        np.testing.assert_array_equal(p1.probs[angle], p2.probs[angle])
    assert p1.weight_map is None


def test_full_agrees_with_map_only_when_class_path_zeroed():
    """Constructed equivalence: blank class vector + full-variant attention
    whose class columns are irrelevant reduces exactly to map-only."""
    cfg_map = tiny_config("ch_map_only")
    p_map = init_params(cfg_map, np.random.default_rng(8))
    cfg_full = tiny_config("ch_full")
    p_full = init_params(cfg_full, np.random.default_rng(9))
    # share every tensor both variants have; splice map-only attn into the
    # map half of the full attention projection
    for name in p_map:
        if name != "attn_proj":
            p_full[name] = Tensor(p_map[name].data.copy(), requires_grad=True)
    full_attn = p_full["attn_proj"].data.copy()
    full_attn[:, :cfg_full.kp_map_feature_dim] = p_map["attn_proj"].data
    p_full["attn_proj"] = Tensor(full_attn, requires_grad=True)

    rng = np.random.default_rng(10)
    images, kmaps, _ = rand_inputs(cfg_map, rng, batch=2)
    blank = np.zeros((2, cfg_full.total_kp_classes))
    fused_map, w_map = M.forward_batch(p_map, cfg_map, images, kmaps, blank)
    fused_full, w_full = M.forward_batch(p_full, cfg_full, images, kmaps, blank)
    np.testing.assert_array_equal(w_map.data, w_full.data)
    np.testing.assert_array_equal(fused_map.data, fused_full.data)


def test_output_shapes_all_variants():
    rng = np.random.default_rng(11)
    for variant in M.VARIANTS:
        cfg = tiny_config(variant)
        params = init_params(cfg, np.random.default_rng(12))
        img = rng.uniform(0, 1, (cfg.image_size, cfg.image_size, 3))
        pred = M.predict(params, cfg, img, 3, 3, "left_b", "slim")
        for angle in M.ANGLE_NAMES:
            assert pred.probs[angle].shape == (cfg.n_bins,)
            assert abs(pred.probs[angle].sum() - 1.0) < 1e-10


def test_predict_deterministic():
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(13))
    rng = np.random.default_rng(14)
    img = rng.uniform(0, 1, (cfg.image_size, cfg.image_size, 3))
    a = M.predict(params, cfg, img, 5, 6, "nose", "boxy")
    b = M.predict(params, cfg, img, 5, 6, "nose", "boxy")
    for angle in M.ANGLE_NAMES:
        np.testing.assert_array_equal(a.probs[angle], b.probs[angle])
    assert a.bins == b.bins


def test_predict_validates_inputs():
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(15))
    img = np.zeros((cfg.image_size, cfg.image_size, 3))
    with pytest.raises(ValueError, match="object class"):
        M.predict(params, cfg, img, 0, 0, "nose", "plane")
    with pytest.raises(ValueError, match="outside"):
        M.predict(params, cfg, img, -1, 0, "nose", "boxy")


@pytest.mark.parametrize("variant", M.VARIANTS)
def test_gradcheck_full_network(variant):
    """Every parameter's analytic gradient vs central differences on a
    1-instance batch, sampled elements per tensor."""
    cfg = tiny_config(variant)
    params = init_params(cfg, np.random.default_rng(20))
    rng = np.random.default_rng(21)
    images, kmaps, kvecs = rand_inputs(cfg, rng)
    gts = {a: int(rng.integers(0, cfg.n_bins)) for a in M.ANGLE_NAMES}

    def loss():
        fused, _ = M.forward_batch(params, cfg, images, kmaps, kvecs)
        logits = M.head_logits(params, "boxy", fused)
        total = None
        for angle in M.ANGLE_NAMES:
            l = batched_structure_aware_loss(logits[angle], np.array([gts[angle]]),
                                             cfg.loss_t, cfg.n_bins)
            total = l if total is None else T.add(total, l)
        return total

    out = loss()
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    h = 1e-5
    for name, p in params.items():
        for idx in sample_indices(rng, p.data.shape, 4):
            orig = p.data[idx]
            p.data[idx] = orig + h
            hi = float(loss().data)
            p.data[idx] = orig - h
            lo = float(loss().data)
            p.data[idx] = orig
            num = (hi - lo) / (2 * h)
            err = rel_err(float(analytic[name][idx]), num)
            assert err < 1e-4, f"{variant} {name}{idx}: {err:.2e}"
        p.zero_grad()


def test_parameter_count_ordering():
    cfg_full = tiny_config("ch_full")
    cfg_map = tiny_config("ch_map_only")
    cfg_img = tiny_config("image_only")
    n_full = M.param_count(init_params(cfg_full, np.random.default_rng(0)))
    n_map = M.param_count(init_params(cfg_map, np.random.default_rng(0)))
    n_img = M.param_count(init_params(cfg_img, np.random.default_rng(0)))
    assert n_full > n_map > n_img


def test_fixed_attention_uniform():
    m = M.fixed_attention_map("uniform", 13, 13)
    np.testing.assert_array_equal(m, np.full((13, 13), 1.0 / 169))


def test_fixed_attention_gaussian_center_max_and_corner_ratio():
    m = M.fixed_attention_map("gaussian", 13, 13)
    assert m[6, 6] == m.max()
    assert abs(m.sum() - 1.0) < 1e-12
    # corner/center before normalization: exp(-(36+36)/72) = e^-1
    assert abs(m[0, 0] / m[6, 6] - np.exp(-1.0)) < 1e-12


def test_fixed_variants_have_no_attention_params():
    for variant in ("fixed_gaussian", "fixed_uniform"):
        params = init_params(tiny_config(variant), np.random.default_rng(1))
        assert not any(k.startswith(("kp_", "attn_")) for k in params)
    params = init_params(tiny_config("image_only"), np.random.default_rng(1))
    assert not any(k.startswith(("kp_", "attn_")) for k in params)


def test_init_seed_reproducibility():
    cfg = tiny_config()
    a = init_params(cfg, np.random.default_rng(33))
    b = init_params(cfg, np.random.default_rng(33))
    c = init_params(cfg, np.random.default_rng(34))
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(40))
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    M.save_checkpoint(params, cfg, p1)
    loaded, cfg2 = M.load_checkpoint(p1)
    M.save_checkpoint(loaded, cfg2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert cfg2.to_dict() == cfg.to_dict()


def test_checkpoint_reproduces_forward_outputs(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(41))
    rng = np.random.default_rng(42)
    img = rng.uniform(0, 1, (cfg.image_size, cfg.image_size, 3))
    before = M.predict(params, cfg, img, 2, 3, "left_a", "boxy")
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(params, cfg, path)
    loaded, cfg2 = M.load_checkpoint(path)
    after = M.predict(loaded, cfg2, img, 2, 3, "left_a", "boxy")
    for angle in M.ANGLE_NAMES:
        np.testing.assert_array_equal(before.probs[angle], after.probs[angle])


def test_checkpoint_detects_corruption(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(43))
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(params, cfg, path)
    raw = bytearray(path.read_bytes())
    # flip a byte inside the JSON header
    raw[20] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
    with pytest.raises((M.CheckpointError, ValueError)):
        M.load_checkpoint(tmp_path / "bad.ckpt")
    with pytest.raises(M.CheckpointError):
        M.load_checkpoint(__file__)  # not a checkpoint at all

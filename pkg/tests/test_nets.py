import numpy as np
import pytest

from rtlab import tensor as T
from rtlab.errors import CheckpointError, ConfigError, DimensionError
from rtlab.nets import ModelConfig, Network, build, checkpoint_load, checkpoint_save, replace_head


def small_config(**kw):
    base = dict(input_channels=1, input_size=8, base_channels=8, width_multiplier=1,
                num_blocks=2, num_classes=10, use_batchnorm=True, seed=7)
    base.update(kw)
    return ModelConfig(**base)


def test_feature_dim_formula():
    assert small_config().feature_dim == 16
    assert small_config(width_multiplier=4).feature_dim == 64
    net = build(small_config())
    assert net.head_w.data.shape == (16, 10)


def test_build_determinism_bit_identical():
    a, b = build(small_config()), build(small_config())
    for (na, pa), (nb, pb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()


def test_backbone_identical_across_class_counts():
    a = build(small_config(num_classes=10))
    b = build(small_config(num_classes=47))
    assert a.backbone_bytes() == b.backbone_bytes()


def test_indivisible_input_size_rejected():
    with pytest.raises(ConfigError):
        small_config(input_size=6, num_blocks=2)


def test_parameter_count_monotone_in_width_and_depth():
    counts = [build(small_config(width_multiplier=w)).parameter_count() for w in (1, 2, 4)]
    assert counts[0] < counts[1] < counts[2]
    shallow = build(small_config(num_blocks=1)).parameter_count()
    deep = build(small_config(num_blocks=3, input_size=16)).parameter_count()
    assert shallow < deep


def test_features_finite_on_zero_input():
    net = build(small_config()).eval_mode()
    f = net.features(np.zeros((2, 1, 8, 8)))
    assert np.isfinite(f.data).all()
    assert f.data.shape == (2, 16)


def test_features_compose_to_logits():
    rng = np.random.default_rng(0)
    net = build(small_config()).eval_mode()
    x = rng.random((3, 1, 8, 8))
    with T.no_grad():
        feats = net.features(x)
        logits = net.forward(x)
    manual = feats.data @ net.head_w.data + net.head_b.data
    assert np.array_equal(manual, logits.data)


def test_eval_mode_batch_order_equivariant():
    rng = np.random.default_rng(1)
    net = build(small_config()).eval_mode()
    x = rng.random((6, 1, 8, 8))
    perm = rng.permutation(6)
    with T.no_grad():
        f = net.features(x).data
        fp = net.features(x[perm]).data
    assert np.array_equal(f[perm], fp)


def test_eval_mode_batch_composition_independent():
    rng = np.random.default_rng(2)
    net = build(small_config()).eval_mode()
    x = rng.random((5, 1, 8, 8))
    with T.no_grad():
        whole = net.features(x).data
        single = net.features(x[2:3]).data
    assert np.allclose(whole[2:3], single, atol=1e-12)


def test_geometry_mismatch_raises():
    net = build(small_config())
    with pytest.raises(DimensionError):
        net.features(np.zeros((1, 1, 4, 4)))


def test_replace_head_contract():
    rng = np.random.default_rng(3)
    net = build(small_config())
    # nudge running stats away from init so the copy is non-trivial
    net.train_mode()
    with T.no_grad():
        net.features(rng.random((4, 1, 8, 8)))
    before = net.backbone_bytes()
    head_before = net.head_w.data.tobytes()
    out = replace_head(net, 10, seed=123)
    assert out.backbone_bytes() == before
    assert out.head_w.data.tobytes() != head_before
    assert net.head_w.data.tobytes() == head_before  # original untouched
    for (_, rm), (_, rm2) in zip(net.buffers(), out.buffers()):
        assert np.array_equal(rm, rm2)


def test_replace_head_shapes_and_validation():
    net = build(small_config())
    out = replace_head(net, 47, seed=1)
    assert out.head_w.data.shape == (16, 47)
    assert out.config.num_classes == 47
    with pytest.raises(ConfigError):
        replace_head(net, 1, seed=1)


def test_replace_head_preserves_features():
    rng = np.random.default_rng(4)
    net = build(small_config()).eval_mode()
    x = rng.random((3, 1, 8, 8))
    out = replace_head(net, 5, seed=9).eval_mode()
    with T.no_grad():
        assert np.array_equal(net.features(x).data, out.features(x).data)
        assert not np.array_equal(
            net.forward(x).data[:, :5], out.forward(x).data
        )


def test_replace_head_deterministic_in_seed():
    net = build(small_config())
    a = replace_head(net, 5, seed=11)
    b = replace_head(net, 5, seed=11)
    assert a.head_w.data.tobytes() == b.head_w.data.tobytes()


def test_checkpoint_round_trip_identical_bytes():
    rng = np.random.default_rng(5)
    net = build(small_config())
    net.train_mode()
    with T.no_grad():
        net.features(rng.random((4, 1, 8, 8)))  # move running stats
    net.eval_mode()
    blob = checkpoint_save(net)
    again = checkpoint_save(checkpoint_load(blob))
    assert blob == again


def test_checkpoint_reproduces_logits_exactly():
    rng = np.random.default_rng(6)
    net = build(small_config()).eval_mode()
    x = rng.random((4, 1, 8, 8))
    with T.no_grad():
        want = net.forward(x).data
    loaded = checkpoint_load(checkpoint_save(net))
    assert loaded.mode == "eval"
    with T.no_grad():
        got = loaded.forward(x).data
    assert np.array_equal(want, got)


def test_checkpoint_truncation_rejected():
    blob = checkpoint_save(build(small_config()))
    with pytest.raises(CheckpointError):
        checkpoint_load(blob[:-20])


def test_checkpoint_corruption_rejected():
    blob = bytearray(checkpoint_save(build(small_config())))
    blob[200] ^= 0xFF
    with pytest.raises(CheckpointError):
        checkpoint_load(bytes(blob))


def test_checkpoint_bad_magic_rejected():
    blob = checkpoint_save(build(small_config()))
    with pytest.raises(CheckpointError):
        checkpoint_load(b"XXXXXXXX" + blob[8:])


def test_no_batchnorm_variant_has_conv_bias():
    net = build(small_config(use_batchnorm=False))
    names = [n for n, _ in net.parameters()]
    assert "block0.conv_b" in names
    assert not net.buffers()
    blob = checkpoint_save(net)
    assert checkpoint_save(checkpoint_load(blob)) == blob


def test_frozen_stats_context_blocks_updates():
    rng = np.random.default_rng(8)
    net = build(small_config()).train_mode()
    before = [rm.copy() for _, rm in net.buffers()]
    with net.frozen_stats(use_batch_stats=True), T.no_grad():
        net.features(rng.random((4, 1, 8, 8)))
    for (_, rm), old in zip(net.buffers(), before):
        assert np.array_equal(rm, old)
    # without the context, train mode moves the stats
    with T.no_grad():
        net.features(rng.random((4, 1, 8, 8)))
    moved = any(not np.array_equal(rm, old) for (_, rm), old in zip(net.buffers(), before))
    assert moved

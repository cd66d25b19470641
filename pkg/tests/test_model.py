import math
import struct

import numpy as np
import pytest

from attnbof.errors import (ChecksumError, ConfigError, DataFormatError,
                            ShapeError, VersionError)
from attnbof.model import (Model, ModelConfig, cross_entropy, frontend_conv,
                           load_checkpoint, loss_op, param_shapes,
                           save_checkpoint)
from attnbof.numerics import grad_check

from .oracles import loop_conv1d_relu, loop_cross_entropy

DESK = dict(feature_dim=4, classes=3, codewords=6, latent_dim=5, seq_len=8)


def desk_model(**overrides):
    cfg = ModelConfig(**{**DESK, **overrides})
    return Model.build(cfg)


# ---------------------------------------------------------------------------
# frontend


def test_conv_identity_kernel_passes_nonnegative_input():
    x = np.abs(np.random.default_rng(0).standard_normal((3, 6)))
    kernel = np.zeros((3, 3, 3))
    for c in range(3):
        kernel[c, c, 1] = 1.0  # center tap
    out = frontend_conv(x, kernel.reshape(3, 9), np.zeros((3, 1)))
    assert np.array_equal(out, x)


def test_conv_zero_input_gives_zero_output():
    kernel = np.random.default_rng(1).standard_normal((2, 3 * 5))
    out = frontend_conv(np.zeros((3, 7)), kernel, np.zeros((2, 1)))
    assert np.array_equal(out, np.zeros((2, 7)))


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 9))
    k3 = rng.standard_normal((4, 3, 5))
    bias = rng.standard_normal((4, 1))
    out = frontend_conv(x, k3.reshape(4, 15), bias)
    assert np.allclose(out, loop_conv1d_relu(x, k3, bias), rtol=0, atol=1e-12)


def test_conv_rejects_even_width():
    with pytest.raises(ShapeError, match="odd"):
        frontend_conv(np.zeros((2, 5)), np.zeros((1, 4)), np.zeros((1, 1)))


# ---------------------------------------------------------------------------
# loss


def test_cross_entropy_uniform_logits():
    assert math.isclose(cross_entropy(np.zeros(4), 1), math.log(4.0), rel_tol=1e-12)


def test_cross_entropy_saturated_margin():
    logits = np.zeros(3)
    logits[2] = 30.0
    assert cross_entropy(logits, 2) < 1e-12


def test_cross_entropy_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        logits = rng.standard_normal(5) * 2.0
        label = int(rng.integers(5))
        assert math.isclose(cross_entropy(logits, label),
                            loop_cross_entropy(logits, label), abs_tol=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy(np.zeros(3), 3)


# ---------------------------------------------------------------------------
# forward behaviour


def test_constant_columns_make_logits_length_invariant():
    net = desk_model(attention="none")
    col = np.random.default_rng(4).standard_normal(4)
    short = np.tile(col[:, None], 3)
    long = np.tile(col[:, None], 11)
    assert np.allclose(net.forward(short), net.forward(long), rtol=0, atol=1e-12)


def test_plain_model_ignores_timestamp_order():
    net = desk_model(attention="none")
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 10))
    perm = rng.permutation(10)
    assert np.allclose(net.forward(x), net.forward(x[:, perm]), rtol=0, atol=1e-12)


def test_tsa_model_logits_invariant_to_timestamp_order():
    net = desk_model(attention="tsa", heads=2)
    rng = np.random.default_rng(55)
    x = rng.standard_normal((4, 8))
    perm = rng.permutation(8)
    assert np.allclose(net.forward(x), net.forward(x[:, perm]), rtol=0, atol=1e-9)


def test_temporal_mask_model_is_position_sensitive():
    net = desk_model(attention="2da", mode="temporal")
    rng = np.random.default_rng(56)
    x = rng.standard_normal((4, 8))
    # swapping two timestamps must be able to move the logits
    worst = 0.0
    for _ in range(5):
        perm = rng.permutation(8)
        worst = max(worst, float(np.abs(net.forward(x) - net.forward(x[:, perm])).max()))
    assert worst > 1e-9


def test_eval_forward_is_bitwise_deterministic():
    net = desk_model(attention="ctsa", heads=2, dropout_rate=0.5)
    x = np.random.default_rng(6).standard_normal((4, 8))
    assert np.array_equal(net.forward(x), net.forward(x))


def test_training_dropout_changes_output_but_is_seeded():
    net = desk_model(attention="csa", dropout_rate=0.4)
    x = np.random.default_rng(7).standard_normal((4, 8))
    a = net.forward(x, training=True, seed=1)
    b = net.forward(x, training=True, seed=1)
    c = net.forward(x, training=True, seed=2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forward_reports_stage_on_bad_input():
    net = desk_model()
    with pytest.raises(ShapeError, match="stage input"):
        net.forward(np.zeros((5, 8)))


def test_forward_reports_stage_on_wrong_length():
    net = desk_model(attention="csa")
    with pytest.raises(ShapeError, match="stage attention"):
        net.forward(np.zeros((4, 9)))


def test_classifier_width_scales_with_heads():
    net = desk_model(attention="tsa", heads=3)
    assert net.params["classifier.weight"].shape == (3, 18)
    net2 = desk_model(attention="2da", mode="codeword")
    assert net2.params["classifier.weight"].shape == (3, 6)


def test_2da_diagonal_pinned_after_build_and_constrain():
    net = desk_model(attention="2da", mode="temporal")
    w = net.params["att.w"]
    assert np.allclose(np.diag(w), 1.0 / 8.0, atol=1e-15)
    w += 1.0  # simulate an unconstrained optimizer step
    net.constrain()
    assert np.allclose(np.diag(net.params["att.w"]), 1.0 / 8.0, atol=1e-15)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(feature_dim=0, classes=3).validate()
    with pytest.raises(ConfigError):
        ModelConfig(feature_dim=4, classes=3, attention="csa").validate()  # no seq_len
    with pytest.raises(ConfigError):
        ModelConfig(feature_dim=4, classes=3, frontend="conv", conv_width=4).validate()
    with pytest.raises(ConfigError):
        ModelConfig(feature_dim=4, classes=3, dropout_rate=1.0).validate()


# ---------------------------------------------------------------------------
# end-to-end gradients (the full sweep lives in the acceptance suite)


@pytest.mark.parametrize("kwargs", [
    dict(attention="none"),
    dict(attention="2da", mode="input"),
    dict(attention="ctsa", heads=2),
    dict(attention="none", frontend="conv", conv_width=3, conv_channels=5),
])
def test_loss_gradient_small_configs(kwargs):
    net = desk_model(**kwargs)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 8))
    op = loss_op(net, x, label=1)
    report = grad_check(op, list(net.params.values()))
    assert report.finite
    assert report.max_rel_err <= 1e-4


def test_loss_gradient_training_mode_with_dropout():
    net = desk_model(attention="tsa", dropout_rate=0.3)
    x = np.random.default_rng(9).standard_normal((4, 8))
    op = loss_op(net, x, label=2, training=True, seed=11)
    report = grad_check(op, list(net.params.values()))
    assert report.finite
    assert report.max_rel_err <= 1e-4


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bitwise(tmp_path):
    net = desk_model(attention="ctsa", heads=2, dropout_rate=0.2)
    path = str(tmp_path / "model.nbaf")
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    assert list(loaded.params) == list(net.params)
    for name in net.params:
        assert np.array_equal(loaded.params[name], net.params[name])
    x = np.random.default_rng(10).standard_normal((4, 8))
    assert np.array_equal(loaded.forward(x), net.forward(x))


def test_checkpoint_detects_corrupted_payload_byte(tmp_path):
    net = desk_model()
    path = str(tmp_path / "model.nbaf")
    save_checkpoint(net, path)
    blob = bytearray(open(path, "rb").read())
    header_len = struct.unpack_from("<I", blob, 8)[0]
    pos = 12 + header_len + 40  # somewhere inside the payload
    blob[pos] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_checkpoint_rejects_future_version(tmp_path):
    net = desk_model()
    path = str(tmp_path / "model.nbaf")
    save_checkpoint(net, path)
    blob = bytearray(open(path, "rb").read())
    struct.pack_into("<I", blob, 4, 99)
    open(path, "wb").write(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    net = desk_model()
    path = str(tmp_path / "model.nbaf")
    save_checkpoint(net, path)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:len(blob) // 2])
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = str(tmp_path / "model.nbaf")
    open(path, "wb").write(b"QQQQ" + b"\x00" * 20)
    with pytest.raises(DataFormatError, match="magic"):
        load_checkpoint(path)


def test_param_shapes_cover_every_variant():
    for kwargs in (dict(attention="none"), dict(attention="2da", mode="temporal"),
                   dict(attention="2da", mode="codeword"),
                   dict(attention="2da", mode="input"),
                   dict(attention="ctsa", heads=2), dict(attention="csa"),
                   dict(attention="tsa", heads=4),
                   dict(attention="none", frontend="conv", conv_channels=3)):
        cfg = ModelConfig(**{**DESK, **kwargs})
        net = Model.build(cfg)
        assert {k: v.shape for k, v in net.params.items()} == param_shapes(cfg)

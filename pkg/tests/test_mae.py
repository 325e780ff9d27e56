import math

import numpy as np
import pytest
from oracles import finite_difference_errors, smooth_mae_instance

from safe_ids.errors import ConfigError, DataError, NumericalError
from safe_ids.mae import (
    MaeConfig,
    MaeModel,
    adam_step,
    apply_masks,
    backward_and_step,
    encode,
    forward,
    init_mae,
    make_mask,
    make_masks,
    masked_mse,
    train,
)


def test_init_shapes_biases_and_glorot_bounds():
    m = init_mae(MaeConfig(seed=3))
    assert m.params["enc_w"].shape == (16, 256)
    assert all(not np.any(v) for k, v in m.params.items() if k.endswith("_b"))
    lim = math.sqrt(6 / (256 + 16))
    assert np.max(np.abs(m.params["enc_w"])) <= lim
    again = init_mae(MaeConfig(seed=3))
    assert all(np.array_equal(m.params[k], again.params[k]) for k in m.params)


def test_config_validation():
    for bad in (dict(mask_ratio=0.0), dict(mask_ratio=1.0), dict(latent_dim=0), dict(epochs=0), dict(grid_size=7),
                dict(mask_scope="some")):
        with pytest.raises(ConfigError):
            MaeConfig(**bad)


def test_zero_input_gives_zero_output():
    recon, latent = forward(init_mae(MaeConfig()), np.zeros((2, 8, 8)))
    assert not recon.any() and not latent.any()


@pytest.mark.parametrize("g", [8, 16])
def test_forward_shapes_and_repeatability(g):
    m = init_mae(MaeConfig(grid_size=g))
    x = np.random.default_rng(0).random((3, g, g))
    r1, z1 = forward(m, x)
    r2, z2 = forward(m, x)
    assert r1.shape == (3, g, g) and z1.shape == (3, 16)
    assert np.array_equal(r1, r2) and np.array_equal(z1, z2)
    with pytest.raises(DataError):
        forward(m, np.zeros((2, g + 2, g + 2)))


def test_mask_counts():
    rng = np.random.default_rng(0)
    assert make_mask(8, 0.75, rng).sum() == 48
    assert make_mask(8, 0.01, rng).sum() == 1
    masks = make_masks(100, 8, 0.75, rng, candidates=np.arange(10))
    assert np.all(masks.reshape(100, -1)[:, 10:] == 0) and np.all(masks.sum(axis=(1, 2)) == 8)


def test_masked_mse_examples():
    rng = np.random.default_rng(1)
    x = rng.random((8, 8))
    mask = make_mask(8, 0.75, rng)
    assert masked_mse(x, x, mask) == 0.0
    assert masked_mse(x + 1.0, x, mask) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        masked_mse(x, x, np.zeros_like(mask))


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    model, batch = smooth_mae_instance(seed)
    assert np.max(finite_difference_errors(model, batch)) < 1e-3


def test_zero_gradient_step_is_identity():
    m = init_mae(MaeConfig())
    before = {k: v.copy() for k, v in m.params.items()}
    adam_step(m, {k: np.zeros_like(v) for k, v in m.params.items()})
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_non_finite_gradient_aborts():
    m = init_mae(MaeConfig())
    grads = {k: np.zeros_like(v) for k, v in m.params.items()}
    grads["out_b"][0] = np.nan
    with pytest.raises(NumericalError, match="out_b"):
        adam_step(m, grads)


def test_backward_and_step_returns_pre_step_loss():
    from safe_ids.mae import loss_and_gradients

    rng = np.random.default_rng(2)
    m = init_mae(MaeConfig())
    batch = apply_masks(rng.random((4, 8, 8)), make_masks(4, 8, 0.75, rng))
    expected, _ = loss_and_gradients(m, batch)
    assert backward_and_step(m, batch) == expected
    assert m.step == 1


def _images(n, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.random((1, 8, 8))
    return np.clip((base + 0.1 * rng.normal(size=(n, 8, 8))) * 255, 0, 255).astype(np.uint8)


def test_training_reduces_loss_and_is_deterministic():
    imgs = _images(512)
    cfg = MaeConfig(epochs=20, batch_size=64, seed=4)
    m1, h1 = train(init_mae(cfg), imgs)
    m2, h2 = train(init_mae(cfg), imgs)
    assert h1[-1] < h1[0]
    assert h1 == h2 and all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_constant_images_fit_below_1e3():
    imgs = np.full((256, 8, 8), 153, dtype=np.uint8)
    _, hist = train(init_mae(MaeConfig(epochs=20, batch_size=32)), imgs)
    assert hist[-1] < 1e-3


def test_training_rejects_attack_rows_and_empty_input():
    with pytest.raises(DataError):
        train(init_mae(MaeConfig(epochs=1)), _images(4), labels=np.array([0, 1, 0, 0]))
    with pytest.raises(DataError):
        train(init_mae(MaeConfig(epochs=1)), np.zeros((0, 8, 8), dtype=np.uint8))


def test_occupied_scope_needs_map():
    cfg = MaeConfig(epochs=1, mask_scope="occupied")
    with pytest.raises(ConfigError):
        train(init_mae(cfg), _images(4))
    occ = np.zeros((8, 8), bool)
    occ[:2] = True
    m, hist = train(init_mae(cfg), _images(8), occupied=occ)
    assert len(hist) == 1


def test_encode_matches_forward_and_keeps_order():
    m = init_mae(MaeConfig(seed=9))
    x = np.random.default_rng(3).random((10, 8, 8))
    _, z = forward(m, x)
    assert np.array_equal(encode(m, x), z)
    assert np.array_equal(encode(m, x[::-1]), z[::-1])
    # other batch sizes may pick different BLAS kernels: last-bit noise only
    assert np.allclose(encode(m, x, batch_size=3), z, rtol=0, atol=1e-14)


def test_serialization_bit_exact(tmp_path):
    m, _ = train(init_mae(MaeConfig(epochs=1, batch_size=8)), _images(16))
    m.save(tmp_path / "m.json")
    back = MaeModel.load(tmp_path / "m.json")
    assert back.step == m.step and back.config == m.config
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k])
        assert np.array_equal(back.adam_v[k], m.adam_v[k])

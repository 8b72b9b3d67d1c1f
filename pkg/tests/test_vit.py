import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liqa import tensor as T
from liqa.losses import bce_with_logits
from liqa.model import ModelConfig, build_model
from liqa.nn import count_trainable
from liqa.optim import AdamW
from liqa.vit import EncoderConfig, ViTEncoder

SMALL = EncoderConfig(image_size=16, patch_size=4, embed_dim=16, depth=2, num_heads=2)


def images(n, size, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 1, size, size)).astype(np.float32)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(16, 4), (16, 8), (24, 4), (24, 6), (32, 8), (64, 8)]))
def test_token_count(geom):
    s, p = geom
    cfg = EncoderConfig(image_size=s, patch_size=p, embed_dim=8, depth=1, num_heads=2)
    assert cfg.num_tokens == (s // p) ** 2 + 1
    assert ViTEncoder(cfg).pos_embed.shape == (cfg.num_tokens, 8)


def test_toy_config_has_65_tokens():
    assert EncoderConfig().num_tokens == 65


@pytest.mark.parametrize("kw", [dict(image_size=30, patch_size=8), dict(embed_dim=30, num_heads=4),
                                dict(depth=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw)


def test_output_shapes_and_taps():
    enc = ViTEncoder(SMALL)
    out = enc(images(3, 16), taps=(1, 2))
    assert out.cls_embedding.shape == (3, 16)
    assert out.last_block_cls.shape == (3, 16)
    assert sorted(out.layer_tokens) == [1, 2]
    assert out.layer_tokens[2].shape == (3, 4, 4, 16)
    with pytest.raises(ValueError, match="tap"):
        enc(images(1, 16), taps=(3,))


def test_single_frame_accepted():
    enc = ViTEncoder(SMALL)
    x = images(1, 16)
    np.testing.assert_array_equal(enc(x[0]).cls_embedding.data, enc(x).cls_embedding.data)


def test_wrong_shape_names_op():
    with pytest.raises(T.ShapeError, match="encode"):
        ViTEncoder(SMALL)(images(2, 20))


def test_identical_images_identical_embeddings():
    enc = ViTEncoder(SMALL)
    x = images(1, 16)
    batch = np.concatenate([x, x])
    out = enc(batch).cls_embedding.data
    np.testing.assert_array_equal(out[0], out[1])
    # same config and seed -> same weights -> same embeddings
    np.testing.assert_array_equal(ViTEncoder(SMALL)(x).cls_embedding.data, enc(x).cls_embedding.data)


def test_row_permutation_changes_embedding():
    enc = ViTEncoder(SMALL)
    x = images(1, 16, seed=3)
    swapped = x.copy()
    swapped[0, 0, [2, 13]] = swapped[0, 0, [13, 2]]
    a, b = enc(x).cls_embedding.data, enc(swapped).cls_embedding.data
    assert np.abs(a - b).max() > 1e-6


def test_attention_rows_sum_to_one():
    enc = ViTEncoder(SMALL)
    enc(images(2, 16))
    for block in enc.blocks:
        np.testing.assert_allclose(block.last_attention.sum(-1), 1.0, atol=1e-6)


def test_frozen_encoder_has_no_trainable_parameters():
    enc = ViTEncoder(SMALL)
    enc.set_frozen(True)
    assert count_trainable(enc) == 0
    assert not enc.cls_token.requires_grad and not enc.pos_embed.requires_grad
    enc.set_frozen(False)
    assert all(p.requires_grad for _, p in enc.named_parameters())


def _one_step(strategy):
    model = build_model(ModelConfig(encoder=SMALL, head="classification", strategy=strategy))
    # Nonzero head so the encoder is on the gradient path from the first step.
    model.head.weight.data[:] = 0.5
    before = {n: p.data.copy() for n, p in model.encoder.named_parameters() if ".lora_" not in n}
    opt = AdamW([(n, p) for n, p in model.named_parameters() if p.requires_grad], lr=1e-3)
    opt.zero_grad()
    loss = bce_with_logits(model(T.Tensor(images(4, 16))), np.array([1, 0, 1, 0]))
    loss.backward()
    grads = {n: p.grad for n, p in model.encoder.named_parameters() if ".lora_" not in n}
    opt.step()
    return model, before, grads


def test_frozen_base_bitwise_unchanged_after_step():
    model, before, grads = _one_step("lora")
    for n, p in model.encoder.named_parameters():
        if ".lora_" not in n:
            assert p.data.tobytes() == before[n].tobytes(), n
            assert grads[n] is None


def test_unfrozen_base_receives_gradients():
    model, before, grads = _one_step("full_parameter")
    norms = {n: float(np.abs(g).sum()) for n, g in grads.items() if g is not None}
    assert set(norms) == set(before)
    assert norms["patch_embed.weight"] > 0 and norms["blocks.1.mlp_out.weight"] > 0
    assert any(p.data.tobytes() != before[n].tobytes() for n, p in model.encoder.named_parameters())

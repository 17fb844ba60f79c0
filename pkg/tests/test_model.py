import math

import numpy as np
import pytest

from delight.block import EncoderBlock
from delight.dextra import ConfigError
from delight.model import (BOS, EOS, PAD, LanguageModel, ModelConfig, build_model, greedy_decode,
                           sinusoidal_positions)
from delight.scaling import ScalingConfig


def _cfg(**kw):
    base = dict(vocab_size=16, d_m=32, scaling=ScalingConfig(2, 4, 2, B=4), embed_dim=32, g_max=2)
    base.update(kw)
    return ModelConfig(**base)


def test_sinusoidal_examples():
    assert sinusoidal_positions(3, 6)[0].tolist() == [0, 1, 0, 1, 0, 1]
    row = sinusoidal_positions(2, 4)[1]
    assert np.allclose(row, [math.sin(1), math.cos(1), math.sin(1e-2), math.cos(1e-2)], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        sinusoidal_positions(2, 5)


def test_projection_present_only_when_needed():
    assert build_model(_cfg(), 0).src_embed.proj is None
    assert build_model(_cfg(embed_dim=16), 0).src_embed.proj.weight.shape == (16, 32)


def test_lm_is_causal_throughout():
    model = build_model(_cfg(task="lm"), 0)
    assert isinstance(model, LanguageModel)
    assert all(isinstance(b, EncoderBlock) and b.attn.causal for b in model.blocks)
    ids = np.random.default_rng(0).integers(3, 16, size=(1, 6))
    base = model(ids).data
    ids2 = ids.copy()
    ids2[0, 4] = 3 if ids[0, 4] != 3 else 4
    assert np.array_equal(model(ids2).data[0, :4], base[0, :4])


def test_build_is_deterministic():
    a, b = build_model(_cfg(), 7), build_model(_cfg(), 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        _cfg(vocab_size=3)
    with pytest.raises(ConfigError):
        _cfg(task="mt")
    cfg = _cfg(r="1/4")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_zeroed_classifier_emits_pad_and_flags_truncation():
    model = build_model(_cfg(), 0)
    for p in model.classifier.parameters():
        p.data[:] = 0
    out = greedy_decode(model, [[3, 4, 5]], 4)
    assert out[0].tokens == [PAD] * 4 and out[0].truncated


def test_padding_does_not_change_encoding():
    model = build_model(_cfg(), 0)
    m1, _ = model.encode(np.array([[3, 4, 5]]))
    m2, _ = model.encode(np.array([[3, 4, 5, PAD, PAD]]))
    assert np.allclose(m1.data[0], m2.data[0, :3], atol=1e-12)


def test_special_token_ids():
    assert (PAD, BOS, EOS) == (0, 1, 2)

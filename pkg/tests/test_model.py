import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from wavlm_si.arena import Arena
from wavlm_si.config import CLASS_NAMES, ModelConfig, QuantPolicy, load_config, preset
from wavlm_si.errors import ConfigError, InputError
from wavlm_si.model import (
    ClipInput,
    Model,
    build_model,
    downmix,
    encoder_forward,
    frontend_forward,
    infer,
    random_clip,
    silent_clip,
    tensor_specs,
)


def perturbed(m, seed):
    """Same model with random layer-sum logits so the mixture is not uniform."""
    rng = np.random.default_rng(seed)
    tensors = dict(m.tensors)
    tensors["layer_sum.logits"] = rng.normal(0, 1, m.config.num_layers + 1).astype(np.float32)
    return Model(m.config, tensors)


def test_frame_count_for_five_seconds():
    assert preset("nano").num_frames == 249


def test_heads_default_to_hidden_over_48():
    assert preset("small_pos").heads == 12
    assert preset("nano").heads == 6


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        ModelConfig(conv_channels=8, hidden=50, heads=3)


def test_config_round_trips_through_dict():
    cfg = preset("nano_pos")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({**preset("nano").to_dict(), "dropout": 0.1})


def test_load_config_preset_with_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"preset": "nano", "num_layers": 4}')
    cfg = load_config(path)
    assert cfg.num_layers == 4 and cfg.hidden == 288
    assert load_config("micro_ws") == preset("micro_ws")


def test_tied_layer_map_groups_neighbours():
    cfg = preset("nano").with_(num_layers=7, weight_share_group=3)
    assert cfg.tied_layer_map == (0, 0, 0, 1, 1, 1, 2)
    assert cfg.unique_layers == 3


def test_build_is_deterministic(tiny_config):
    a, b = build_model(tiny_config, 5), build_model(tiny_config, 5)
    c = build_model(tiny_config, 6)
    for name in a.tensors:
        np.testing.assert_array_equal(a[name], b[name])
    assert not np.array_equal(a["proj.weight"], c["proj.weight"])


def test_tensor_values_independent_of_other_tensors(tiny_config):
    a = build_model(tiny_config, 1)
    b = build_model(tiny_config.with_(has_positional_conv=False, num_layers=5), 1)
    np.testing.assert_array_equal(a["layers.0.attn.q.weight"], b["layers.0.attn.q.weight"])


def test_init_bounds(tiny_config):
    m = build_model(tiny_config, 0)
    for name, spec in tensor_specs(tiny_config).items():
        v = m[name]
        if spec.init == "ones":
            assert np.all(v == 1)
        elif spec.init == "zeros":
            assert np.all(v == 0)
        else:
            gain = math.sqrt(2) if spec.init == "weight_gelu" else 1.0
            bound = 1 / math.sqrt(spec.fan_in) if spec.init == "bias" else gain * math.sqrt(3 / spec.fan_in)
            assert np.abs(v).max() <= bound * (1 + 1e-6), name


def test_model_tensors_are_read_only(tiny_model):
    with pytest.raises(ValueError):
        tiny_model["proj.weight"][0, 0] = 1.0
    with pytest.raises(TypeError):
        tiny_model.tensors["proj.weight"] = np.zeros(1)


def test_model_rejects_missing_or_misshaped_tensors(tiny_model):
    tensors = dict(tiny_model.tensors)
    del tensors["pool.vector"]
    with pytest.raises(ConfigError):
        Model(tiny_model.config, tensors)
    tensors = dict(tiny_model.tensors)
    tensors["pool.vector"] = np.zeros(3, np.float32)
    with pytest.raises(ConfigError):
        Model(tiny_model.config, tensors)


def test_clip_channels_must_match():
    with pytest.raises(InputError):
        ClipInput(np.zeros(10), np.zeros(11))


def test_downmix_is_channel_sum():
    clip = ClipInput(np.full(4, 0.25), np.full(4, 0.5))
    np.testing.assert_array_equal(downmix(clip), np.full(4, 0.75, np.float32))


def test_infer_outputs_distribution(tiny_model, tiny_clip):
    out = infer(tiny_model, tiny_clip)
    assert out.probs.shape == (4,)
    assert math.isclose(float(out.probs.sum()), 1.0, rel_tol=1e-6)
    assert out.embedding.shape == (tiny_model.config.hidden,)
    assert out.label in CLASS_NAMES


def test_silent_clip_is_finite(tiny_model, tiny_config):
    out = infer(tiny_model, silent_clip(tiny_config.num_samples))
    assert np.all(np.isfinite(out.logits))


def test_wrong_length_or_rate_rejected(tiny_model, tiny_config):
    with pytest.raises(InputError):
        infer(tiny_model, random_clip(0, tiny_config.num_samples - 1))
    with pytest.raises(InputError):
        infer(tiny_model, random_clip(0, tiny_config.num_samples, sample_rate_hz=8000))


def test_encoder_returns_all_hidden_states(tiny_model, tiny_clip):
    frames = frontend_forward(tiny_model, tiny_clip)
    states = encoder_forward(tiny_model, frames)
    assert len(states) == tiny_model.config.num_layers + 1
    assert frames.shape == (tiny_model.config.num_frames, tiny_model.config.hidden)


def test_zero_layer_encoder_runs(tiny_config, tiny_clip):
    m = build_model(tiny_config.with_(num_layers=0), 0)
    out = infer(m, tiny_clip)
    ref, _, _ = oracle.forward(m, tiny_clip)
    np.testing.assert_allclose(out.logits, ref, atol=1e-5)


@given(seed=st.integers(0, 10_000), clip_seed=st.integers(0, 10_000), pos=st.booleans(), group=st.sampled_from([1, 2, 3]))
def test_forward_matches_naive_oracle(tiny_config, seed, clip_seed, pos, group):
    cfg = tiny_config.with_(has_positional_conv=pos, weight_share_group=group)
    m = perturbed(build_model(cfg, seed), seed)
    clip = random_clip(clip_seed, cfg.num_samples)
    out = infer(m, clip)
    ref_logits, ref_pooled, _ = oracle.forward(m, clip)
    np.testing.assert_allclose(out.logits, ref_logits, atol=1e-5)
    np.testing.assert_allclose(out.embedding, ref_pooled, atol=1e-5)


def test_full_size_forward_matches_oracle():
    m = build_model(preset("nano_pos"), 11)
    clip = random_clip(12)
    ref, _, _ = oracle.forward(m, clip)
    np.testing.assert_allclose(infer(m, clip).logits, ref, atol=1e-5)


def test_arena_peak_is_positive_and_released(tiny_model, tiny_clip):
    arena = Arena()
    infer(tiny_model, tiny_clip, arena)
    assert arena.peak > 0
    assert arena.live <= arena.peak


def test_arena_without_reuse_peaks_higher(tiny_model, tiny_clip):
    reuse, keep = Arena(reuse=True), Arena(reuse=False)
    infer(tiny_model, tiny_clip, reuse)
    infer(tiny_model, tiny_clip, keep)
    assert keep.peak > reuse.peak


def test_quant_policy_none_is_empty():
    assert QuantPolicy.none().is_empty
    assert not QuantPolicy().is_empty

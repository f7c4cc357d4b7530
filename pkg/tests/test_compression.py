import warnings

import numpy as np
import pytest

from wavlm_si.analysis import count_params
from wavlm_si.compression import (
    CompressionWarning,
    LayerSelection,
    is_canonical_order,
    materialize_ties,
    remove_positional_conv,
    select_layers,
    tie_weights,
)
from wavlm_si.errors import SelectionError
from wavlm_si.model import TRANSFORMER, build_model, encoder_forward, frontend_forward, infer, transformer_block
from wavlm_si.quantization import QuantizedTensor, quantize_model


def hidden_states(m, clip):
    return encoder_forward(m, frontend_forward(m, clip))


def test_remove_positional_conv(tiny_model, tiny_clip):
    m = remove_positional_conv(tiny_model)
    assert not m.config.has_positional_conv
    assert not any(k.startswith("pos_conv.") for k in m.tensors)
    assert m.pipeline == ("drop-pos-conv",)
    assert count_params(m).total < count_params(tiny_model).total
    infer(m, tiny_clip)


def test_remove_positional_conv_twice_warns(tiny_model):
    m = remove_positional_conv(tiny_model)
    with pytest.warns(CompressionWarning):
        assert remove_positional_conv(m) is m


def test_identity_selection_preserves_every_layer(tiny_model, tiny_clip):
    n = tiny_model.config.num_layers
    m = select_layers(tiny_model, range(n))
    for a, b in zip(hidden_states(tiny_model, tiny_clip), hidden_states(m, tiny_clip)):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_selection_reorders_layers(tiny_model, tiny_clip):
    m = select_layers(tiny_model, LayerSelection.parse("2,0"))
    assert m.config.num_layers == 2
    assert m.pipeline == ("select-layers=2,0",)
    np.testing.assert_array_equal(m["layer_sum.logits"], np.zeros(3))
    cfg = tiny_model.config
    states = hidden_states(tiny_model, tiny_clip)
    x = states[0]
    for src in (2, 0):
        x = transformer_block(x, tiny_model.layer_tensors(src), cfg.heads, cfg.layer_norm_eps)
    np.testing.assert_allclose(hidden_states(m, tiny_clip)[-1], x, atol=1e-6)


@pytest.mark.parametrize("bad", ["0,0", "-1", "0,x"])
def test_bad_selections(bad):
    with pytest.raises(SelectionError):
        LayerSelection.parse(bad)


def test_selection_out_of_range(tiny_model):
    with pytest.raises(SelectionError, match="out of range"):
        select_layers(tiny_model, [0, 3])


def test_empty_selection_gives_zero_layer_model(tiny_model, tiny_clip):
    m = select_layers(tiny_model, [])
    assert m.config.num_layers == 0
    infer(m, tiny_clip)


def test_tie_shares_one_set_per_group(tiny_config):
    m = build_model(tiny_config.with_(num_layers=6), 0)
    t = tie_weights(m, 3)
    assert t.config.tied_layer_map == (0, 0, 0, 1, 1, 1)
    assert count_params(t).by_component[TRANSFORMER] * 3 == count_params(m).by_component[TRANSFORMER]
    # set k is seeded from layer k * group
    np.testing.assert_array_equal(t["layers.1.attn.q.weight"], m["layers.3.attn.q.weight"])
    assert t.layer_tensors(4)["ffn.fc1.weight"] is t.layer_tensors(3)["ffn.fc1.weight"]


def test_tie_with_short_final_group(tiny_config):
    m = tie_weights(build_model(tiny_config.with_(num_layers=7), 0), 3)
    assert m.config.unique_layers == 3
    assert m.config.tied_layer_map[-1] == 2


def test_tie_same_group_is_noop(tiny_model):
    assert tie_weights(tiny_model, 1) is tiny_model


def test_tie_rejects_zero_group(tiny_model):
    with pytest.raises(SelectionError):
        tie_weights(tiny_model, 0)


def test_tied_forward_equals_materialized(tiny_config, tiny_clip):
    tied = tie_weights(build_model(tiny_config.with_(num_layers=5), 3), 2)
    untied = materialize_ties(tied)
    assert untied.config.weight_share_group == 1
    assert untied.config.unique_layers == 5
    np.testing.assert_allclose(infer(tied, tiny_clip).logits, infer(untied, tiny_clip).logits, atol=1e-6)


def test_select_on_tied_model_reads_through_tie_map(tiny_config, tiny_clip):
    tied = tie_weights(build_model(tiny_config.with_(num_layers=6), 1), 3)
    a = select_layers(tied, [4, 1])
    b = select_layers(materialize_ties(tied), [4, 1])
    np.testing.assert_array_equal(a["layers.0.ffn.fc2.weight"], tied["layers.1.ffn.fc2.weight"])
    np.testing.assert_allclose(infer(a, tiny_clip).logits, infer(b, tiny_clip).logits, atol=1e-6)


def test_transforms_keep_quantized_tensors(tiny_model):
    q = quantize_model(tiny_model)
    t = tie_weights(q, 3)
    assert isinstance(t["layers.0.attn.q.weight"], QuantizedTensor)
    assert t.pipeline == ("quantize", "tie=3")


def test_param_stepping_depends_on_unique_sets(tiny_config):
    p4 = count_params(tiny_config.with_(num_layers=4, weight_share_group=3))
    p6 = count_params(tiny_config.with_(num_layers=6, weight_share_group=3))
    assert p4.by_component[TRANSFORMER] == p6.by_component[TRANSFORMER]
    # only the per-layer mixing logits differ
    assert p6.total - p4.total == 2


@pytest.mark.parametrize("steps, ok", [
    (["drop-pos-conv", "select-layers=0,1", "tie=3", "quantize"], True),
    (["tie=3", "quantize"], True),
    (["quantize", "tie=3"], False),
    (["select-layers=1", "drop-pos-conv"], False),
    ([], True),
])
def test_canonical_order(steps, ok):
    assert is_canonical_order(steps) is ok


def test_transforms_do_not_mutate_input(tiny_model):
    before = {k: np.array(v, copy=True) for k, v in tiny_model.tensors.items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        quantize_model(tie_weights(select_layers(remove_positional_conv(tiny_model), [2, 1]), 2))
    for k, v in tiny_model.tensors.items():
        np.testing.assert_array_equal(v, before[k])

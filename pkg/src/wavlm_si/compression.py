"""Model-shrinking transforms.  Each takes a Model and returns a new one.

Canonical pipeline order is prune -> select -> tie -> quantize; the steps
applied so far are recorded in ``Model.pipeline``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import SelectionError
from .model import LAYER_SUFFIXES, Model, layer_prefix

CANONICAL_ORDER = ("drop-pos-conv", "select-layers", "tie", "quantize")


class CompressionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LayerSelection:
    source_indices: tuple[int, ...]

    def __post_init__(self):
        indices = tuple(int(i) for i in self.source_indices)
        if len(set(indices)) != len(indices):
            raise SelectionError(f"duplicate layer indices in {list(indices)}")
        if any(i < 0 for i in indices):
            raise SelectionError(f"negative layer index in {list(indices)}")
        object.__setattr__(self, "source_indices", indices)

    @classmethod
    def parse(cls, text: str) -> "LayerSelection":
        try:
            return cls(tuple(int(tok) for tok in text.split(",") if tok.strip()))
        except ValueError:
            raise SelectionError(f"cannot parse layer selection {text!r}") from None

    def __str__(self):
        return ",".join(map(str, self.source_indices))


def _without_layers(tensors) -> dict:
    return {k: v for k, v in tensors.items() if not k.startswith("layers.")}


def _with_layer_sets(m: Model, sources: list[int], **config_changes):
    """(config, tensors) where unique weight set k is copied from source layer ``sources[k]``."""
    tensors = _without_layers(m.tensors)
    for k, src in enumerate(sources):
        weights = m.layer_tensors(src)
        for suffix in LAYER_SUFFIXES:
            tensors[layer_prefix(k) + suffix] = weights[suffix]
    config = replace(m.config, **config_changes)
    if config.num_layers != m.config.num_layers:
        tensors["layer_sum.logits"] = np.zeros(config.num_layers + 1, dtype=np.float32)
    return config, tensors


def remove_positional_conv(m: Model) -> Model:
    if not m.config.has_positional_conv:
        warnings.warn("model has no positional convolution; nothing removed", CompressionWarning, stacklevel=2)
        return m
    tensors = {k: v for k, v in m.tensors.items() if not k.startswith("pos_conv.")}
    config = replace(m.config, has_positional_conv=False)
    return Model(config, tensors, m.policy, m.pipeline + ("drop-pos-conv",))


def select_layers(m: Model, sel: LayerSelection | list[int] | tuple[int, ...]) -> Model:
    """Keep (and reorder) transformer layers; the result is always untied.

    Tied sources are read through their tie map, which is the same as
    materializing the ties first.  Layer-sum logits restart at zero.
    """
    if not isinstance(sel, LayerSelection):
        sel = LayerSelection(tuple(sel))
    n = m.config.num_layers
    bad = [i for i in sel.source_indices if i >= n]
    if bad:
        raise SelectionError(f"layer indices {bad} out of range for a {n}-layer model")
    config, tensors = _with_layer_sets(
        m, list(sel.source_indices), num_layers=len(sel.source_indices), weight_share_group=1
    )
    return Model(config, tensors, m.policy, m.pipeline + (f"select-layers={sel}",))


def tie_weights(m: Model, group: int) -> Model:
    """Share one weight set across each run of ``group`` neighbouring layers.

    Set k is seeded from source layer ``k * group``; a short final group is allowed.
    """
    if group < 1:
        raise SelectionError(f"tie group must be >= 1, got {group}")
    if group == m.config.weight_share_group:
        return m
    n = m.config.num_layers
    sources = list(range(0, n, group))
    config, tensors = _with_layer_sets(m, sources, weight_share_group=group)
    return Model(config, tensors, m.policy, m.pipeline + (f"tie={group}",))


def materialize_ties(m: Model) -> Model:
    """Untied copy of ``m`` with one explicit weight set per layer."""
    if m.config.weight_share_group == 1:
        return m
    config, tensors = _with_layer_sets(m, list(range(m.config.num_layers)), weight_share_group=1)
    return Model(config, tensors, m.policy, m.pipeline + ("materialize",))


def step_kind(step: str) -> str:
    return step.split("=", 1)[0]


def is_canonical_order(steps) -> bool:
    ranks = [CANONICAL_ORDER.index(step_kind(s)) for s in steps if step_kind(s) in CANONICAL_ORDER]
    return ranks == sorted(ranks)

"""Polarized scaling: norm-ratio coefficients at task, dimension, and layer level.

Every coefficient is a relative-magnitude ratio raised to a configurable
exponent: blocks whose norm sits above the group mean get amplified, blocks
below it get suppressed.  Variant transforms (reverse / noise- / signal+)
reshape the coefficients after exponentiation.
"""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class LayerType(enum.Enum):
    ATTN_QKV = "AttnQKV"
    ATTN_OUT = "AttnOut"
    MLP_UP = "MlpUp"
    MLP_DOWN = "MlpDown"
    OTHER = "Other"


class Variant(enum.Enum):
    """Coefficient transform applied after exponentiation."""

    FULL = "full"
    REVERSE = "reverse"
    NOISE_MINUS = "noise-"
    SIGNAL_PLUS = "signal+"
    NONE = "none"


_DEFAULT_RULES: tuple[tuple[str, LayerType], ...] = (
    (r"attn\.(in_proj_weight|in_proj\.weight|qkv\.weight)", LayerType.ATTN_QKV),
    (r"attn\.(out_proj\.weight|proj\.weight)", LayerType.ATTN_OUT),
    (r"mlp\.(c_fc|fc1|up_proj|lin1)\.weight", LayerType.MLP_UP),
    (r"mlp\.(c_proj|fc2|down_proj|lin2)\.weight", LayerType.MLP_DOWN),
)

_DEFAULT_INCLUDE: tuple[str, ...] = (r"weight$",)


@dataclass(frozen=True)
class LayerRules:
    """Name-based layer classification plus matrix-layer selection.

    ``rules`` is an ordered sequence of (regex, LayerType); the first
    pattern that matches (re.search) wins, unmatched names classify as
    Other.  ``include`` patterns decide which 2-D tensors count as matrix
    layers at all; everything else is treated as a non-matrix parameter.
    """

    rules: tuple[tuple[re.Pattern, LayerType], ...] = field(default=())
    include: tuple[re.Pattern, ...] = field(default=())

    @classmethod
    def compile(
        cls,
        rules: Sequence[tuple[str, LayerType]],
        include: Sequence[str],
    ) -> "LayerRules":
        try:
            compiled_rules = tuple((re.compile(p), t) for p, t in rules)
            compiled_include = tuple(re.compile(p) for p in include)
        except re.error as exc:
            raise ValueError(f"malformed layer-rule pattern: {exc}") from exc
        return cls(rules=compiled_rules, include=compiled_include)

    @classmethod
    def default(cls) -> "LayerRules":
        """Rules for the common transformer naming scheme."""
        return cls.compile(_DEFAULT_RULES, _DEFAULT_INCLUDE)

    @classmethod
    def from_file(cls, path) -> "LayerRules":
        """Parse a plain-text rules file.

        Two sections, ``[include]`` and ``[rules]``; include lines hold one
        regex each, rule lines hold ``pattern<TAB>type``.  Blank lines and
        ``#`` comments are ignored.
        """
        type_by_name = {t.value: t for t in LayerType}
        rules: list[tuple[str, LayerType]] = []
        include: list[str] = []
        section = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                if line.strip() in ("[include]", "[rules]"):
                    section = line.strip()
                    continue
                if section == "[include]":
                    include.append(line.strip())
                elif section == "[rules]":
                    if "\t" not in line:
                        raise ValueError(
                            f"{path}:{lineno}: rule line needs 'pattern<TAB>type'"
                        )
                    pattern, _, type_name = line.partition("\t")
                    type_name = type_name.strip()
                    if type_name not in type_by_name:
                        raise ValueError(
                            f"{path}:{lineno}: unknown layer type {type_name!r} "
                            f"(expected one of {sorted(type_by_name)})"
                        )
                    rules.append((pattern.strip(), type_by_name[type_name]))
                else:
                    raise ValueError(
                        f"{path}:{lineno}: line outside [include]/[rules] section"
                    )
        return cls.compile(rules, include)

    def classify(self, name: str) -> LayerType:
        for pattern, layer_type in self.rules:
            if pattern.search(name):
                return layer_type
        return LayerType.OTHER

    def is_matrix_layer(self, name: str, ndim: int) -> bool:
        return ndim == 2 and any(p.search(name) for p in self.include)


@dataclass(frozen=True)
class ScaleReport:
    """Coefficients actually applied during one merge run."""

    per_task: dict[tuple[str, int], float]
    per_dim: dict[str, np.ndarray]
    per_layer: dict[str, float]


def _ratio_coeffs(norms: np.ndarray, exponent: float) -> np.ndarray:
    """(norm / group mean) ** exponent, with exact identities preserved.

    Uniform groups (including all-zero) map to exact ones so that equal
    inputs are never perturbed by rounding in the mean.
    """
    if exponent < 0:
        raise ValueError(f"exponent must be >= 0, got {exponent}")
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        return np.ones(0)
    if np.all(norms == norms[0]):
        return np.ones(norms.size)
    mean = norms.mean()
    if mean == 0.0:
        return np.ones(norms.size)
    return (norms / mean) ** exponent


def inter_task_coeffs(coords: Sequence[np.ndarray], exponent: float = 2.0) -> np.ndarray:
    """Per-task coefficients from Frobenius norms of the coordinate blocks."""
    if len(coords) == 0:
        raise ValueError("inter_task_coeffs needs at least one coordinate matrix")
    norms = np.array([np.linalg.norm(np.asarray(a, dtype=np.float64)) for a in coords])
    return _ratio_coeffs(norms, exponent)


def inter_dim_coeffs(a_cat: np.ndarray, exponent: float = 2.0) -> np.ndarray:
    """Per-column coefficients from Euclidean norms of the stacked coordinates."""
    a_cat = np.asarray(a_cat, dtype=np.float64)
    if a_cat.size == 0:
        raise ValueError("inter_dim_coeffs needs a non-empty matrix")
    norms = np.linalg.norm(a_cat, axis=0)
    return _ratio_coeffs(norms, exponent)


def inter_layer_coeffs(
    merged: Mapping[str, np.ndarray],
    rules: LayerRules,
    exponent: float = 2.0,
) -> dict[str, float]:
    """Per-layer coefficients computed within same-type groups.

    Layers classified Other, and groups of size one, get coefficient 1.
    """
    coeffs = {name: 1.0 for name in merged}
    groups: dict[LayerType, list[str]] = {}
    for name in merged:
        layer_type = rules.classify(name)
        if layer_type is not LayerType.OTHER:
            groups.setdefault(layer_type, []).append(name)
    for members in groups.values():
        if len(members) < 2:
            continue
        norms = np.array(
            [np.linalg.norm(np.asarray(merged[m], dtype=np.float64)) for m in members]
        )
        for member, coeff in zip(members, _ratio_coeffs(norms, exponent)):
            coeffs[member] = float(coeff)
    return coeffs


def apply_variant(gamma, variant: Variant):
    """Transform a coefficient (scalar or array) per the chosen variant."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0):
        raise ValueError("scaling coefficients must be >= 0")
    if variant is Variant.FULL:
        out = gamma
    elif variant is Variant.REVERSE:
        if np.any(gamma == 0):
            raise ValueError("reverse variant undefined for zero coefficients")
        out = 1.0 / gamma
    elif variant is Variant.NOISE_MINUS:
        out = np.minimum(gamma, 1.0)
    elif variant is Variant.SIGNAL_PLUS:
        out = np.maximum(gamma, 1.0)
    elif variant is Variant.NONE:
        out = np.ones_like(gamma)
    else:
        raise ValueError(f"unknown variant: {variant!r}")
    return float(out) if out.ndim == 0 else out


def classify_layers(names: Sequence[str], rules: LayerRules) -> dict[str, LayerType]:
    return {name: rules.classify(name) for name in names}


def norm_order(
    matrices: Mapping[str, np.ndarray],
    direction: str = "descending",
    seed: int | None = None,
) -> list[str]:
    """Order keys by Frobenius norm; ties break lexicographically.

    ``random`` ignores the norms and applies a seeded shuffle to the
    lexicographically sorted keys.
    """
    if not matrices:
        raise ValueError("norm_order needs a non-empty map")
    keys = sorted(matrices)
    if direction == "random":
        rng = random.Random(seed)
        rng.shuffle(keys)
        return keys
    norms = {k: float(np.linalg.norm(np.asarray(matrices[k], dtype=np.float64))) for k in keys}
    if direction == "descending":
        return sorted(keys, key=lambda k: (-norms[k], k))
    if direction == "ascending":
        return sorted(keys, key=lambda k: (norms[k], k))
    raise ValueError(f"unknown direction: {direction!r}")

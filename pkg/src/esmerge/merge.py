"""The merging pipeline: decompose each task's layer update at a shared
rank budget, scale, concatenate, whiten both concatenated factors, and
reconstruct a single update per layer; then assemble base + alpha * beta *
merged into a complete checkpoint.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .decomp import esd, rank_budget, svd_truncate
from .linalg import whiten
from .scaling import (
    LayerRules,
    ScaleReport,
    Variant,
    apply_variant,
    inter_dim_coeffs,
    inter_layer_coeffs,
    inter_task_coeffs,
)
from .tensorstore import (
    TaskUpdate,
    TensorMap,
    average_non_matrix,
    compute_task_update,
    save_tensor_map,
)

TASK_THEN_DIM = "task-dim"
DIM_THEN_TASK = "dim-task"


@dataclass(frozen=True)
class FixedAlpha:
    value: float


@dataclass(frozen=True)
class AlphaSearch:
    """Search [lo, hi] for the alpha maximizing an external checkpoint score.

    The scorer receives a candidate checkpoint path and returns a real
    number; higher is better.
    """

    lo: float
    hi: float
    scorer: Callable[[str], float]


@dataclass(frozen=True)
class MergeConfig:
    rank: int | None = None  # None selects the per-layer budget rule
    rank_ratio: float = 1.0
    scale_tasks: bool = True
    scale_dims: bool = True
    scale_layers: bool = True
    variant: Variant = Variant.FULL
    exponent: float = 2.0
    order: str = TASK_THEN_DIM
    decomposition: str = "esd"
    centered: bool = False
    alpha: FixedAlpha | AlphaSearch = FixedAlpha(1.0)
    rules: LayerRules = field(default_factory=LayerRules.default)

    def __post_init__(self):
        if self.exponent < 0:
            raise ValueError(f"exponent must be >= 0, got {self.exponent}")
        if self.rank is not None and self.rank < 1:
            raise ValueError(f"fixed rank must be >= 1, got {self.rank}")
        if self.decomposition not in ("esd", "svd"):
            raise ValueError(f"unknown decomposition {self.decomposition!r}")
        if self.order not in (TASK_THEN_DIM, DIM_THEN_TASK):
            raise ValueError(f"unknown scaling order {self.order!r}")


@dataclass(frozen=True)
class MergedUpdate:
    """Per-layer merged matrices with their layer coefficients; the beta
    (and the global alpha) are multiplied in at assembly time."""

    layers: dict[str, np.ndarray]
    betas: dict[str, float]


@dataclass(frozen=True)
class MergeResult:
    checkpoint: TensorMap
    merged: MergedUpdate
    alpha: float
    scales: ScaleReport


def concat_factors(
    factors: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-task bases side by side and coordinates on top of each other."""
    if not factors:
        raise ValueError("concat_factors: empty task list")
    d_out = factors[0][0].shape[0]
    d_in = factors[0][1].shape[1]
    for i, (basis, coords) in enumerate(factors):
        if basis.shape[0] != d_out:
            raise ValueError(f"concat_factors: task {i} basis has {basis.shape[0]} rows, expected {d_out}")
        if coords.shape[1] != d_in:
            raise ValueError(f"concat_factors: task {i} coords have {coords.shape[1]} columns, expected {d_in}")
        if basis.shape[1] != coords.shape[0]:
            raise ValueError(f"concat_factors: task {i} basis/coords ranks differ")
    p_cat = np.hstack([b for b, _ in factors])
    a_cat = np.vstack([a for _, a in factors])
    return p_cat, a_cat


def orthogonalize_pair(p_cat: np.ndarray, a_cat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return whiten(p_cat), whiten(a_cat)


def reconstruct(p_tilde: np.ndarray, a_tilde: np.ndarray) -> np.ndarray:
    if p_tilde.shape[1] != a_tilde.shape[0]:
        raise ValueError(
            f"reconstruct: inner dimensions differ ({p_tilde.shape[1]} vs {a_tilde.shape[0]})"
        )
    return p_tilde @ a_tilde


def _layer_rank(cfg: MergeConfig, d_out: int, d_in: int, T: int) -> int:
    if cfg.rank is not None:
        return cfg.rank
    k = rank_budget(d_out, T, cfg.rank_ratio)
    if cfg.decomposition == "svd":
        k = min(k, d_in)
    return k


def _merge_layer(
    dWs: Sequence[np.ndarray],
    Xs: Sequence[np.ndarray] | None,
    cfg: MergeConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge one layer; returns (matrix, task coefficients, dim coefficients)."""
    if not dWs:
        raise ValueError("merge_layer: empty task list")
    dWs = [np.asarray(m, dtype=np.float64) for m in dWs]
    d_out, d_in = dWs[0].shape
    for i, m in enumerate(dWs):
        if m.shape != (d_out, d_in):
            raise ValueError(f"merge_layer: task {i} has shape {m.shape}, expected {(d_out, d_in)}")
    T = len(dWs)
    ones_t = np.ones(T)
    ones_d = np.ones(d_in)
    if not any(m.any() for m in dWs):
        return np.zeros((d_out, d_in)), ones_t, ones_d

    k = _layer_rank(cfg, d_out, d_in, T)
    if cfg.decomposition == "esd":
        if Xs is None or len(Xs) != T:
            raise ValueError("merge_layer: shift-aware decomposition needs one proxy matrix per task")
        factors = [esd(dW, X, k, centered=cfg.centered) for dW, X in zip(dWs, Xs)]
        pairs = [(f.basis, f.coords) for f in factors]
    else:
        pairs = [(f.left, f.coords) for f in (svd_truncate(dW, k) for dW in dWs)]

    bases = [b for b, _ in pairs]
    blocks = [a for _, a in pairs]
    s_coeffs, c_coeffs = ones_t, ones_d

    def scale_tasks(blocks):
        s = apply_variant(inter_task_coeffs(blocks, cfg.exponent), cfg.variant)
        return [s_t * block for s_t, block in zip(s, blocks)], np.asarray(s)

    def scale_dims(blocks):
        c = apply_variant(inter_dim_coeffs(np.vstack(blocks), cfg.exponent), cfg.variant)
        return [block * c[None, :] for block in blocks], np.asarray(c)

    steps = ("task", "dim") if cfg.order == TASK_THEN_DIM else ("dim", "task")
    for step in steps:
        if step == "task" and cfg.scale_tasks:
            blocks, s_coeffs = scale_tasks(blocks)
        elif step == "dim" and cfg.scale_dims:
            blocks, c_coeffs = scale_dims(blocks)

    p_cat, a_cat = concat_factors(list(zip(bases, blocks)))
    p_tilde, a_tilde = orthogonalize_pair(p_cat, a_cat)
    return reconstruct(p_tilde, a_tilde), s_coeffs, c_coeffs


def merge_layer(
    dWs: Sequence[np.ndarray],
    Xs: Sequence[np.ndarray] | None,
    cfg: MergeConfig,
) -> np.ndarray:
    """Merged update matrix for a single layer (before beta/alpha)."""
    merged, _, _ = _merge_layer(dWs, Xs, cfg)
    return merged


def merge_updates(
    updates: Sequence[TaskUpdate],
    proxies: Sequence[TensorMap] | None,
    cfg: MergeConfig,
    threads: int | None = None,
) -> tuple[MergedUpdate, ScaleReport]:
    """Merge every matrix layer across tasks and compute layer coefficients.

    Layers are processed in parallel; results are keyed by name so the
    outcome does not depend on the thread count.
    """
    if not updates:
        raise ValueError("merge_updates: no task updates given")
    layer_names = sorted(updates[0].matrix_layers)
    for i, update in enumerate(updates[1:], start=1):
        if sorted(update.matrix_layers) != layer_names:
            raise ValueError(f"merge_updates: task {i} has a different matrix-layer set")

    def proxy_for(task: int, name: str) -> np.ndarray:
        key = f"{name}.input"
        if proxies is None or task >= len(proxies):
            raise ValueError(f"merge_updates: no proxy container for task {task}")
        try:
            return proxies[task][key]
        except KeyError:
            raise ValueError(f"merge_updates: proxy key {key!r} missing for task {task}") from None

    def run(name: str):
        dWs = [u.matrix_layers[name] for u in updates]
        Xs = None
        if cfg.decomposition == "esd":
            Xs = [proxy_for(t, name) for t in range(len(updates))]
        return _merge_layer(dWs, Xs, cfg)

    if threads is None:
        threads = os.cpu_count() or 1
    if threads > 1 and len(layer_names) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(layer_names, pool.map(run, layer_names)))
    else:
        results = {name: run(name) for name in layer_names}

    layers = {name: results[name][0] for name in layer_names}
    per_task = {
        (name, t): float(results[name][1][t])
        for name in layer_names
        for t in range(len(updates))
    }
    per_dim = {name: results[name][2] for name in layer_names}

    betas = {name: 1.0 for name in layer_names}
    if cfg.scale_layers:
        nonzero = {name: m for name, m in layers.items() if m.any()}
        raw = inter_layer_coeffs(nonzero, cfg.rules, cfg.exponent)
        for name, gamma in raw.items():
            betas[name] = float(apply_variant(gamma, cfg.variant))
    merged = MergedUpdate(layers=layers, betas=betas)
    return merged, ScaleReport(per_task=per_task, per_dim=per_dim, per_layer=dict(betas))


def assemble_checkpoint(
    base: TensorMap,
    merged: MergedUpdate,
    non_matrix: Mapping[str, np.ndarray],
    alpha: float,
) -> TensorMap:
    """base + alpha * beta_l * merged layer, plus the averaged rest."""
    entries: dict[str, np.ndarray] = {}
    for name in base:
        if name in merged.layers:
            scale = alpha * merged.betas[name]
            if scale == 0.0:
                entries[name] = base[name]
            else:
                entries[name] = (
                    base[name].astype(np.float64) + scale * merged.layers[name]
                ).astype(np.float32)
        elif name in non_matrix:
            entries[name] = non_matrix[name]
        else:
            entries[name] = base[name]
    return TensorMap(entries)


def select_alpha(lo: float, hi: float, scorer: Callable[[float], float]) -> float:
    """Maximize the scorer over [lo, hi]: 0.05-step grid scan, then ternary
    refinement to width 0.01.  Ties break toward smaller alpha."""
    if not lo < hi:
        raise ValueError(f"select_alpha: need lo < hi, got [{lo}, {hi}]")

    best_alpha = None
    best_score = -np.inf

    def consider(a: float) -> float:
        nonlocal best_alpha, best_score
        s = float(scorer(a))
        if s > best_score or (s == best_score and a < best_alpha):
            best_alpha, best_score = a, s
        return s

    points = []
    i = 0
    while True:
        p = lo + i * 0.05
        if p >= hi - 1e-12:
            break
        points.append(p)
        i += 1
    points.append(hi)
    for p in points:
        consider(p)

    a = max(lo, best_alpha - 0.05)
    b = min(hi, best_alpha + 0.05)
    while b - a > 0.01:
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if consider(m1) >= consider(m2):
            b = m2
        else:
            a = m1
    return best_alpha


def merge_model(
    base: TensorMap,
    experts: Sequence[TensorMap],
    proxies: Sequence[TensorMap] | None,
    cfg: MergeConfig,
    threads: int | None = None,
) -> MergeResult:
    """Full pipeline: task updates, per-layer merge, non-matrix averaging,
    alpha resolution, and checkpoint assembly."""
    if not experts:
        raise ValueError("merge_model: no expert checkpoints given")
    updates = [compute_task_update(base, expert, cfg.rules) for expert in experts]
    merged, scales = merge_updates(updates, proxies, cfg, threads=threads)
    non_matrix = average_non_matrix(base, updates)

    if isinstance(cfg.alpha, FixedAlpha):
        alpha = cfg.alpha.value
    else:
        search = cfg.alpha

        def score_candidate(a: float) -> float:
            candidate = assemble_checkpoint(base, merged, non_matrix, a)
            with tempfile.TemporaryDirectory(prefix="esmerge-alpha-") as tmp:
                path = os.path.join(tmp, "candidate.safetensors")
                save_tensor_map(candidate, path)
                return float(search.scorer(path))

        alpha = select_alpha(search.lo, search.hi, score_candidate)

    checkpoint = assemble_checkpoint(base, merged, non_matrix, alpha)
    return MergeResult(checkpoint=checkpoint, merged=merged, alpha=alpha, scales=scales)

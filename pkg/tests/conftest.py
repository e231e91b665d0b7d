import numpy as np
import pytest

from esmerge import LayerRules, TensorMap


def random_tensor_map(rng: np.random.Generator, max_tensors: int = 6) -> TensorMap:
    """Random float32 map with mixed ranks and asymmetric shapes."""
    entries = {}
    for i in range(int(rng.integers(0, max_tensors + 1))):
        rank = int(rng.integers(0, 4))
        shape = tuple(int(rng.integers(1, 6)) for _ in range(rank))
        entries[f"t{i}.weight" if rank == 2 else f"t{i}.p"] = (
            rng.standard_normal(shape).astype(np.float32)
        )
    return TensorMap(entries)


def toy_checkpoint(rng: np.random.Generator, blocks: int = 2, d: int = 4) -> TensorMap:
    """Transformer-shaped checkpoint with the default naming scheme."""
    entries = {}
    h = 2 * d
    for b in range(blocks):
        entries[f"blk.{b}.attn.in_proj_weight"] = rng.standard_normal((3 * d, d)).astype(np.float32)
        entries[f"blk.{b}.attn.in_proj_bias"] = rng.standard_normal(3 * d).astype(np.float32)
        entries[f"blk.{b}.attn.out_proj.weight"] = rng.standard_normal((d, d)).astype(np.float32)
        entries[f"blk.{b}.attn.out_proj.bias"] = rng.standard_normal(d).astype(np.float32)
        entries[f"blk.{b}.mlp.c_fc.weight"] = rng.standard_normal((h, d)).astype(np.float32)
        entries[f"blk.{b}.mlp.c_fc.bias"] = rng.standard_normal(h).astype(np.float32)
        entries[f"blk.{b}.mlp.c_proj.weight"] = rng.standard_normal((d, h)).astype(np.float32)
        entries[f"blk.{b}.mlp.c_proj.bias"] = rng.standard_normal(d).astype(np.float32)
        entries[f"blk.{b}.ln_1.weight"] = np.ones(d, np.float32)
        entries[f"blk.{b}.ln_2.weight"] = np.ones(d, np.float32)
    return TensorMap(entries)


def toy_proxies(checkpoint: TensorMap, rules: LayerRules, rng: np.random.Generator, n: int = 12) -> TensorMap:
    """One proxy-activation matrix per matrix layer of the checkpoint."""
    entries = {}
    for name in checkpoint:
        arr = checkpoint[name]
        if rules.is_matrix_layer(name, arr.ndim):
            entries[f"{name}.input"] = rng.standard_normal((n, arr.shape[1])).astype(np.float32)
    return TensorMap(entries)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from esmcapture.container import write_tensors


def toy_transformer_tensors(rng: np.random.Generator, blocks: int = 2, d: int = 4,
                            hidden: int = 8, stem: bool = False) -> dict:
    tensors = {}
    for b in range(blocks):
        p = f"blk.{b}"
        tensors[f"{p}.ln_1.weight"] = np.ones(d, np.float32)
        tensors[f"{p}.ln_1.bias"] = np.zeros(d, np.float32)
        tensors[f"{p}.attn.in_proj_weight"] = (
            0.5 * rng.standard_normal((3 * d, d))
        ).astype(np.float32)
        tensors[f"{p}.attn.in_proj_bias"] = np.zeros(3 * d, np.float32)
        tensors[f"{p}.attn.out_proj.weight"] = (
            0.5 * rng.standard_normal((d, d))
        ).astype(np.float32)
        tensors[f"{p}.attn.out_proj.bias"] = np.zeros(d, np.float32)
        tensors[f"{p}.ln_2.weight"] = np.ones(d, np.float32)
        tensors[f"{p}.ln_2.bias"] = np.zeros(d, np.float32)
        tensors[f"{p}.mlp.c_fc.weight"] = (
            0.5 * rng.standard_normal((hidden, d))
        ).astype(np.float32)
        tensors[f"{p}.mlp.c_fc.bias"] = np.zeros(hidden, np.float32)
        tensors[f"{p}.mlp.c_proj.weight"] = (
            0.5 * rng.standard_normal((d, hidden))
        ).astype(np.float32)
        tensors[f"{p}.mlp.c_proj.bias"] = np.zeros(d, np.float32)
    if stem:
        tensors["conv1.weight"] = (0.1 * rng.standard_normal((d, 3, 2, 2))).astype(np.float32)
        tensors["class_embedding"] = np.zeros(d, np.float32)
    return tensors


@pytest.fixture
def rng():
    return np.random.default_rng(777)


@pytest.fixture
def model_file(tmp_path, rng):
    path = tmp_path / "model.safetensors"
    write_tensors(toy_transformer_tensors(rng), path)
    return path

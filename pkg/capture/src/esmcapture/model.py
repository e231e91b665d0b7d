"""Forward pass of a pre-LN transformer encoder rebuilt from checkpoint
tensors, with taps recording the input to every matched linear layer.

Expected tensor naming per block b:
    blk.{b}.ln_1.{weight,bias}          (optional, identity if absent)
    blk.{b}.attn.in_proj_weight/_bias   (3d x d / 3d)
    blk.{b}.attn.out_proj.weight/.bias  (d x d / d)
    blk.{b}.ln_2.{weight,bias}          (optional)
    blk.{b}.mlp.c_fc.weight/.bias       (h x d / h)
    blk.{b}.mlp.c_proj.weight/.bias     (d x h / d)
Optionally: conv1.weight (d x c x p x p) as the patch stem,
class_embedding (d,), positional_embedding (tokens x d).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ModelLoadError(Exception):
    pass


_BLOCK_RE = re.compile(r"^blk\.(\d+)\.")


def _layer_norm(x: np.ndarray, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    out = (x - mean) / np.sqrt(var + eps)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation, evaluated in float32 for determinism
    c = np.float32(np.sqrt(2.0 / np.pi))
    return 0.5 * x * (1.0 + np.tanh(c * (x + np.float32(0.044715) * x**3)))


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TransformerModel:
    """Weights grouped per block, all float32."""

    tensors: dict[str, np.ndarray]
    n_blocks: int
    d_model: int
    d_hidden: int
    heads: int

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], heads: int = 1) -> "TransformerModel":
        indices = sorted(
            {int(m.group(1)) for name in tensors if (m := _BLOCK_RE.match(name))}
        )
        if not indices:
            raise ModelLoadError("checkpoint contains no 'blk.<i>.' tensors")
        if indices != list(range(len(indices))):
            raise ModelLoadError(f"non-contiguous block indices: {indices}")
        n_blocks = len(indices)

        def need(name: str) -> np.ndarray:
            if name not in tensors:
                raise ModelLoadError(f"checkpoint is missing {name!r}")
            return tensors[name]

        w_in = need("blk.0.attn.in_proj_weight")
        if w_in.ndim != 2 or w_in.shape[0] != 3 * w_in.shape[1]:
            raise ModelLoadError(
                f"blk.0.attn.in_proj_weight has shape {w_in.shape}, expected (3d, d)"
            )
        d_model = w_in.shape[1]
        w_fc = need("blk.0.mlp.c_fc.weight")
        d_hidden = w_fc.shape[0]
        if heads < 1 or d_model % heads != 0:
            raise ModelLoadError(f"head count {heads} does not divide d_model {d_model}")

        for b in range(n_blocks):
            for name, shape in (
                (f"blk.{b}.attn.in_proj_weight", (3 * d_model, d_model)),
                (f"blk.{b}.attn.out_proj.weight", (d_model, d_model)),
                (f"blk.{b}.mlp.c_fc.weight", (d_hidden, d_model)),
                (f"blk.{b}.mlp.c_proj.weight", (d_model, d_hidden)),
            ):
                arr = need(name)
                if arr.shape != shape:
                    raise ModelLoadError(f"{name} has shape {arr.shape}, expected {shape}")
        return cls(
            tensors=tensors,
            n_blocks=n_blocks,
            d_model=d_model,
            d_hidden=d_hidden,
            heads=heads,
        )

    def _get(self, name: str):
        return self.tensors.get(name)

    def _attention(self, q, k, v):
        t, d = q.shape
        hd = d // self.heads
        q = q.reshape(t, self.heads, hd).transpose(1, 0, 2)
        k = k.reshape(t, self.heads, hd).transpose(1, 0, 2)
        v = v.reshape(t, self.heads, hd).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.float32(np.sqrt(hd))
        out = _softmax(scores) @ v
        return out.transpose(1, 0, 2).reshape(t, d)

    def forward(self, tokens: np.ndarray, tap) -> np.ndarray:
        """Run one sample (tokens x d_model); ``tap(weight_name, matrix)``
        receives the exact input of every linear operator."""
        x = np.asarray(tokens, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.d_model:
            raise ValueError(f"tokens have shape {x.shape}, expected (t, {self.d_model})")
        for b in range(self.n_blocks):
            p = f"blk.{b}"
            h = _layer_norm(x, self._get(f"{p}.ln_1.weight"), self._get(f"{p}.ln_1.bias"))
            tap(f"{p}.attn.in_proj_weight", h)
            qkv = h @ self.tensors[f"{p}.attn.in_proj_weight"].T
            bias = self._get(f"{p}.attn.in_proj_bias")
            if bias is not None:
                qkv = qkv + bias
            q, k, v = np.split(qkv, 3, axis=1)
            attn = self._attention(q, k, v)
            tap(f"{p}.attn.out_proj.weight", attn)
            proj = attn @ self.tensors[f"{p}.attn.out_proj.weight"].T
            out_bias = self._get(f"{p}.attn.out_proj.bias")
            if out_bias is not None:
                proj = proj + out_bias
            x = x + proj

            h2 = _layer_norm(x, self._get(f"{p}.ln_2.weight"), self._get(f"{p}.ln_2.bias"))
            tap(f"{p}.mlp.c_fc.weight", h2)
            u = h2 @ self.tensors[f"{p}.mlp.c_fc.weight"].T
            fc_bias = self._get(f"{p}.mlp.c_fc.bias")
            if fc_bias is not None:
                u = u + fc_bias
            u = _gelu(u)
            tap(f"{p}.mlp.c_proj.weight", u)
            d = u @ self.tensors[f"{p}.mlp.c_proj.weight"].T
            proj_bias = self._get(f"{p}.mlp.c_proj.bias")
            if proj_bias is not None:
                d = d + proj_bias
            x = x + d
        return x

    def patchify(self, image: np.ndarray, grid: int) -> np.ndarray:
        """Turn a (c, grid*p, grid*p) image into patch tokens via the conv
        stem, prepending the class token and adding positional embeddings
        when the checkpoint carries them."""
        stem = self._get("conv1.weight")
        if stem is None:
            raise ModelLoadError("checkpoint has no conv1.weight stem; cannot embed images")
        d, c, p, _ = stem.shape
        if image.shape != (c, grid * p, grid * p):
            raise ValueError(f"image has shape {image.shape}, expected {(c, grid * p, grid * p)}")
        flat = stem.reshape(d, c * p * p)
        patches = np.empty((grid * grid, c * p * p), dtype=np.float32)
        idx = 0
        for i in range(grid):
            for j in range(grid):
                patch = image[:, i * p : (i + 1) * p, j * p : (j + 1) * p]
                patches[idx] = patch.reshape(-1)
                idx += 1
        tokens = patches @ flat.T
        cls = self._get("class_embedding")
        if cls is not None:
            tokens = np.vstack([cls[None, :], tokens])
        pos = self._get("positional_embedding")
        if pos is not None and pos.shape == tokens.shape:
            tokens = tokens + pos
        return tokens.astype(np.float32)

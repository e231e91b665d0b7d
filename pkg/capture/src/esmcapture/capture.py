"""Record the inputs of matched linear layers over a proxy sample set and
write them as "<layer_key>.input" tensors in the shared container format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import ContainerError, read_tensors, write_tensors
from .model import ModelLoadError, TransformerModel

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class CaptureError(Exception):
    pass


@dataclass(frozen=True)
class SyntheticSource:
    """Seeded Gaussian token matrices: ``count`` samples of ``tokens`` rows."""

    count: int = 32
    tokens: int = 16
    seed: int = 0


@dataclass(frozen=True)
class DirectorySource:
    """Proxy samples from files: .npy token matrices or images (needs the
    checkpoint's patch stem).  Files are taken in sorted order."""

    path: str
    count: int = 32
    grid: int = 4  # patch grid for images


@dataclass(frozen=True)
class CaptureSpec:
    model_path: str
    source: SyntheticSource | DirectorySource
    output_path: str
    include: tuple[str, ...] = (r"weight$",)
    heads: int = 1


def _load_model(spec: CaptureSpec) -> TransformerModel:
    try:
        tensors = read_tensors(spec.model_path)
    except OSError as exc:
        raise CaptureError(f"cannot read model checkpoint: {exc}") from exc
    except ContainerError as exc:
        raise CaptureError(f"cannot parse model checkpoint: {exc}") from exc
    try:
        return TransformerModel.from_tensors(tensors, heads=spec.heads)
    except ModelLoadError as exc:
        raise CaptureError(str(exc)) from exc


def _load_image(path: Path, channels: int, side: int) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise CaptureError("image proxies need pillow installed") from exc
    with Image.open(path) as img:
        img = img.convert("RGB" if channels == 3 else "L")
        img = img.resize((side, side))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr - 0.5) / 0.5


def _iter_samples(model: TransformerModel, spec: CaptureSpec):
    source = spec.source
    if isinstance(source, SyntheticSource):
        if source.count < 1:
            raise CaptureError("synthetic source needs at least one sample")
        rng = np.random.default_rng(source.seed)
        for _ in range(source.count):
            yield rng.standard_normal((source.tokens, model.d_model)).astype(np.float32)
        return

    root = Path(source.path)
    if not root.is_dir():
        raise CaptureError(f"proxy directory not found: {root}")
    files = sorted(
        p for p in root.iterdir()
        if p.suffix.lower() in _IMAGE_SUFFIXES | {".npy"}
    )[: source.count]
    if not files:
        raise CaptureError(f"no .npy or image files in proxy directory {root}")
    stem = model.tensors.get("conv1.weight")
    for path in files:
        if path.suffix.lower() == ".npy":
            arr = np.load(path)
            if arr.ndim != 2 or arr.shape[1] != model.d_model:
                raise CaptureError(
                    f"{path.name}: token matrix has shape {arr.shape}, "
                    f"expected (t, {model.d_model})"
                )
            yield arr.astype(np.float32)
        else:
            if stem is None:
                raise CaptureError(
                    f"{path.name}: image proxies need a conv1.weight patch stem in the checkpoint"
                )
            channels, patch = stem.shape[1], stem.shape[2]
            image = _load_image(path, channels, source.grid * patch)
            yield model.patchify(image, source.grid)


def capture(spec: CaptureSpec) -> dict[str, np.ndarray]:
    """Run the proxy samples through the model and write one
    "<layer_key>.input" tensor per matched linear layer.

    Tokens from all samples are pooled row-wise; output is deterministic
    for a fixed spec.  Returns the captured map (also written to
    spec.output_path).
    """
    try:
        patterns = [re.compile(p) for p in spec.include]
    except re.error as exc:
        raise CaptureError(f"bad include pattern: {exc}") from exc
    model = _load_model(spec)

    matched = {
        name
        for name, arr in model.tensors.items()
        if arr.ndim == 2 and any(p.search(name) for p in patterns)
    }
    capturable = {
        f"blk.{b}.{tail}"
        for b in range(model.n_blocks)
        for tail in (
            "attn.in_proj_weight",
            "attn.out_proj.weight",
            "mlp.c_fc.weight",
            "mlp.c_proj.weight",
        )
    }
    targets = matched & capturable
    if not targets:
        raise CaptureError(
            f"include patterns {list(spec.include)} matched no capturable linear layer"
        )

    recorded: dict[str, list[np.ndarray]] = {name: [] for name in targets}

    def tap(name: str, value: np.ndarray) -> None:
        if name in recorded:
            recorded[name].append(np.asarray(value, dtype=np.float32).copy())

    for sample in _iter_samples(model, spec):
        model.forward(sample, tap)

    out = {f"{name}.input": np.vstack(chunks) for name, chunks in recorded.items()}
    write_tensors(out, spec.output_path)
    return out

"""Command-line front end: merge, verify, energy, inspect."""

from __future__ import annotations

import argparse
import os
import shlex
import subprocess
import sys

import numpy as np

from . import merge as merge_mod
from . import verify as verify_mod
from .decomp import activation_shift, energy_retention
from .linalg import pca_basis, thin_svd
from .scaling import LayerRules, Variant, norm_order
from .tensorstore import (
    ContainerError,
    StructureMismatchError,
    compute_task_update,
    load_tensor_map,
    save_tensor_map,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_VARIANTS = {v.value: v for v in Variant}


class UsageError(Exception):
    """Semantic flag validation failure (exit 1)."""


def _threads(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("ESM_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"ESM_THREADS must be an integer, got {env!r}") from None
    return None


def _load_rules(path: str | None) -> LayerRules:
    if path is None:
        return LayerRules.default()
    return LayerRules.from_file(path)


def _parse_scaling(spec: str) -> tuple[bool, bool, bool]:
    spec = spec.strip()
    if spec in ("", "none"):
        return False, False, False
    parts = {p.strip() for p in spec.split(",") if p.strip()}
    unknown = parts - {"task", "dim", "layer"}
    if unknown:
        raise UsageError(
            f"--scaling: unknown level(s) {sorted(unknown)}; expected subset of task,dim,layer"
        )
    return "task" in parts, "dim" in parts, "layer" in parts


def _command_scorer(command: str):
    argv = shlex.split(command)
    if not argv:
        raise UsageError("--scorer-cmd is empty")

    def scorer(candidate_path: str) -> float:
        proc = subprocess.run(
            argv + [candidate_path], capture_output=True, text=True, check=False
        )
        if proc.returncode != 0:
            raise RuntimeError(
                f"scorer command failed (exit {proc.returncode}): {proc.stderr.strip()}"
            )
        try:
            return float(proc.stdout.strip().split()[-1])
        except (IndexError, ValueError):
            raise RuntimeError(
                f"scorer command printed no score: {proc.stdout!r}"
            ) from None

    return scorer


def cmd_merge(args) -> int:
    if (args.alpha is None) == (args.alpha_search is None):
        raise UsageError("exactly one of --alpha or --alpha-search is required")
    if args.alpha_search is not None and not args.scorer_cmd:
        raise UsageError("--alpha-search requires --scorer-cmd")
    if args.decomp == "esd" and len(args.proxy) != len(args.expert):
        raise UsageError(
            f"--decomp esd needs one --proxy per --expert "
            f"(got {len(args.proxy)} proxies for {len(args.expert)} experts)"
        )

    scale_tasks, scale_dims, scale_layers = _parse_scaling(args.scaling)
    if args.rank == "auto":
        rank = None
    else:
        try:
            rank = int(args.rank)
        except ValueError:
            raise UsageError(f"--rank must be 'auto' or an integer, got {args.rank!r}") from None

    if args.alpha is not None:
        alpha_policy = merge_mod.FixedAlpha(args.alpha)
    else:
        lo, hi = args.alpha_search
        alpha_policy = merge_mod.AlphaSearch(lo=lo, hi=hi, scorer=_command_scorer(args.scorer_cmd))

    cfg = merge_mod.MergeConfig(
        rank=rank,
        rank_ratio=args.rank_ratio,
        scale_tasks=scale_tasks,
        scale_dims=scale_dims,
        scale_layers=scale_layers,
        variant=_VARIANTS[args.variant],
        exponent=args.exponent,
        order=args.order,
        decomposition=args.decomp,
        centered=args.centered,
        alpha=alpha_policy,
        rules=_load_rules(args.rules),
    )

    base = load_tensor_map(args.base)
    experts = [load_tensor_map(p) for p in args.expert]
    proxies = [load_tensor_map(p) for p in args.proxy] if args.decomp == "esd" else None

    result = merge_mod.merge_model(base, experts, proxies, cfg, threads=_threads(args.threads))
    save_tensor_map(result.checkpoint, args.out)

    print(f"alpha: {result.alpha:.6g}")
    for name in sorted(result.merged.betas):
        print(f"beta {name}: {result.merged.betas[name]:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = verify_mod.run_suite(
        suite=args.suite, seed=args.seed, trials=args.trials, dims=tuple(args.dims)
    )
    lines = [r.to_json() if args.json else r.summary() for r in reports]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VALIDATION


def cmd_energy(args) -> int:
    if args.mode == "esd" and args.proxy is None:
        raise UsageError("--mode esd requires --proxy")
    rules = _load_rules(args.rules)
    base = load_tensor_map(args.base)
    expert = load_tensor_map(args.expert)
    proxy = load_tensor_map(args.proxy) if args.proxy else None
    update = compute_task_update(base, expert, rules)

    rows = ["layer,fraction_retained,energy"]
    for name in sorted(update.matrix_layers):
        dW = update.matrix_layers[name].astype(np.float64)
        if args.mode == "svd":
            spectrum = thin_svd(dW).S
        else:
            key = f"{name}.input"
            if key not in proxy:
                raise UsageError(f"proxy container is missing {key!r}")
            spectrum = pca_basis(activation_shift(proxy[key], dW)).values
        if not spectrum.any():
            rows.append(f"{name},error,zero-update")
            continue
        curve = energy_retention(spectrum, args.mode)
        for i, energy in enumerate(curve, start=1):
            rows.append(f"{name},{i / len(curve):.10g},{energy:.10g}")
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    rules = _load_rules(args.rules)
    tensors = load_tensor_map(args.path)
    if not tensors:
        print("(empty container)")
        return EXIT_OK
    if args.order == "name":
        names = sorted(tensors)
    else:
        names = norm_order(dict(tensors), direction=args.order, seed=args.seed)
    for name in names:
        arr = tensors[name]
        shape = "x".join(str(d) for d in arr.shape) if arr.shape else "scalar"
        kind = rules.classify(name).value if rules.is_matrix_layer(name, arr.ndim) else "-"
        norm = float(np.linalg.norm(arr.astype(np.float64)))
        print(f"{name}\t{shape}\t{kind}\t{norm:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esmerge",
        description="Merge task-specific checkpoints in activation-aware principal subspaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge expert checkpoints into one")
    p.add_argument("--base", required=True, help="pre-trained base checkpoint")
    p.add_argument("--expert", action="append", default=[], required=True,
                   help="expert checkpoint (repeatable)")
    p.add_argument("--proxy", action="append", default=[],
                   help="proxy-activation container, paired positionally with --expert")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--alpha", type=float, default=None, help="fixed global coefficient")
    p.add_argument("--alpha-search", nargs=2, type=float, metavar=("LO", "HI"),
                   default=None, help="search range for the global coefficient")
    p.add_argument("--scorer-cmd", default=None,
                   help="command scoring a candidate checkpoint path (prints one real; higher wins)")
    p.add_argument("--rank", default="auto", help="'auto' (budget rule) or a fixed integer")
    p.add_argument("--rank-ratio", type=float, default=1.0,
                   help="retention ratio applied to the automatic rank budget")
    p.add_argument("--scaling", default="task,dim,layer",
                   help="comma subset of task,dim,layer (or 'none')")
    p.add_argument("--variant", choices=sorted(_VARIANTS), default="full",
                   help="coefficient transform")
    p.add_argument("--exponent", type=float, default=2.0, help="scaling exponent")
    p.add_argument("--order", choices=[merge_mod.TASK_THEN_DIM, merge_mod.DIM_THEN_TASK],
                   default=merge_mod.TASK_THEN_DIM, help="order of task/dimension scaling")
    p.add_argument("--decomp", choices=["esd", "svd"], default="esd",
                   help="decomposition route")
    p.add_argument("--centered", action="store_true",
                   help="center activation shifts before PCA")
    p.add_argument("--rules", default=None, help="layer-rules config file")
    p.add_argument("--threads", type=int, default=None,
                   help="layer-level parallelism (default: available parallelism)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("verify", help="run the numerical oracle suite")
    p.add_argument("--suite", choices=["all", "svd", "esd", "procrustes", "compare"],
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=None,
                   help="override the per-oracle default trial counts")
    p.add_argument("--dims", nargs=2, type=int, metavar=("LO", "HI"), default=[4, 64])
    p.add_argument("--json", action="store_true", help="emit one JSON object per report")
    p.add_argument("--out", default=None, help="write reports to a file instead of stdout")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy", help="emit energy-retention curves as CSV")
    p.add_argument("--base", required=True)
    p.add_argument("--expert", required=True)
    p.add_argument("--proxy", default=None, help="proxy container (required for esd mode)")
    p.add_argument("--mode", choices=["svd", "esd"], default="svd")
    p.add_argument("--rules", default=None)
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("inspect", help="list tensors with shapes, types, and norms")
    p.add_argument("path", help="container file")
    p.add_argument("--order", choices=["name", "descending", "ascending", "random"],
                   default="name")
    p.add_argument("--seed", type=int, default=None, help="seed for --order random")
    p.add_argument("--rules", default=None)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, StructureMismatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ContainerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Commands: preprocess, synth, train, eval, encode, decode, ablate,
sweep-k, export-errors. Configuration comes from a JSON file (--config)
with command-line overrides for seed and dtype; outputs land under
--out. Exit codes: 0 success, 2 configuration or input error, 3
numerical failure during training.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .experiment import (ABLATIONS, ConfigError, ExperimentConfig, build_model,
                         export_error_map, load_checkpoint_dir, neighbor_size_sweep,
                         resolve_dataset, run_experiment)
from .mesh import MeshError, build_neighbor_table, save_neighbor_table
from .meshio import load_mesh, save_mesh
from .model import MeshTopology
from .sampling import build_sampling_operator, save_sampling
from .synthetic import SyntheticSpec, generate_synthetic, load_dataset
from .train import TrainConfig, TrainingDiverged, evaluate, read_log, validation_split

DEFAULT_EXPERIMENT = {
    "dataset": {"synthetic": {"num_train": 200, "num_test": 50, "seed": 7}},
    "model": {"latent_dim": 8},
    "train": {"epochs": 10, "batch_size": 16},
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _experiment_config(args, default_out: str, *, extra_keys: tuple = ()) -> ExperimentConfig:
    raw = _load_config(args.config) or dict(DEFAULT_EXPERIMENT)
    raw = {k: v for k, v in raw.items() if k not in extra_keys}
    raw.setdefault("output_dir", default_out)
    if args.out:
        raw["output_dir"] = args.out
    config = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        config.train = {**config.train, "seed": args.seed}
        config.model = {**config.model, "seed": args.seed}
    if args.dtype is not None:
        config.train = {**config.train, "dtype": args.dtype}
        config.model = {**config.model, "dtype": args.dtype}
    if args.deterministic:
        config.deterministic = True
    return config


def _resolve_eval_data(args, manifest):
    if args.data:
        path = Path(args.data)
        if not path.exists():
            raise ConfigError(f"data path does not exist: {path}")
        return load_dataset(path)
    dataset_cfg = manifest.get("dataset") or {}
    if "path" in dataset_cfg:
        return load_dataset(dataset_cfg["path"])
    sibling = Path(args.checkpoint).parent / "dataset"
    if sibling.exists():
        return load_dataset(sibling)
    raise ConfigError("cannot locate the dataset; pass --data")


def _split(dataset, which: str, manifest=None):
    if which == "train":
        return dataset.train
    if which == "test":
        if dataset.test is None or len(dataset.test) == 0:
            raise ConfigError("dataset has no test split")
        return dataset.test
    if which == "val":
        if manifest is None or "train" not in manifest:
            raise ConfigError("val split needs a checkpoint trained by this tool")
        cfg = TrainConfig(**manifest["train"])
        val_idx, _ = validation_split(dataset.train.shape[0], cfg)
        if len(val_idx) == 0:
            return dataset.train
        return dataset.train[val_idx]
    raise ConfigError(f"unknown split {which!r}")


def _write_latents(path, z: np.ndarray) -> None:
    lines = [",".join(format(v, ".17g") for v in row) for row in np.atleast_2d(z)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_latents(path) -> np.ndarray:
    try:
        return np.atleast_2d(np.loadtxt(str(path), delimiter=",", dtype=np.float64))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read latents from {path}: {exc}") from exc


# -- commands ---------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    k = cfg.get("k", 9)
    factor = cfg.get("factor", 4)
    levels = cfg.get("levels", 4)
    order = cfg.get("neighbor_order", "by-index")
    seed = args.seed if args.seed is not None else cfg.get("neighbor_seed", 0)
    out = Path(args.out or "runs/preprocess")
    out.mkdir(parents=True, exist_ok=True)

    mesh = load_mesh(args.mesh)
    level_sizes = [mesh.num_vertices]
    current = mesh
    for level in range(levels):
        table = build_neighbor_table(current, k, order=order, seed=seed)
        save_neighbor_table(table, out / f"table_l{level}.bin")
        op = build_sampling_operator(current, factor)
        save_sampling(op, out / f"sampling_l{level}.bin")
        current = op.coarse
        level_sizes.append(current.num_vertices)
    with open(out / "preprocess.json", "w") as fh:
        json.dump({"mesh": str(args.mesh), "k": k, "factor": factor,
                   "levels": levels, "neighbor_order": order,
                   "neighbor_seed": seed, "level_sizes": level_sizes},
                  fh, indent=1, sort_keys=True)
    print(f"preprocessed {args.mesh}: levels {level_sizes} -> {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    cfg = cfg.get("synthetic", cfg)
    if args.seed is not None:
        cfg = {**cfg, "seed": args.seed}
    try:
        spec = SyntheticSpec(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    out = args.out or "runs/dataset"
    dataset = generate_synthetic(spec, out)
    print(f"wrote {dataset.train.shape[0]} train / "
          f"{0 if dataset.test is None else dataset.test.shape[0]} test samples "
          f"on {dataset.template.num_vertices} vertices -> {out}")
    return 0


def cmd_train(args) -> int:
    config = _experiment_config(args, "runs/train")
    report = run_experiment(config)
    print(json.dumps({key: report[key] for key in
                      ("model_test_error_mm", "pca_test_error_mm",
                       "best_epoch", "best_val_error_mm")}, indent=1))
    print(f"report -> {config.output_dir}/report.json")
    return 0


def cmd_eval(args) -> int:
    model, normalizer, manifest = load_checkpoint_dir(args.checkpoint)
    dataset = _resolve_eval_data(args, manifest)
    raw = _split(dataset, args.split, manifest)
    error = evaluate(model, normalizer, raw)
    result = {"split": args.split, "num_samples": int(raw.shape[0]),
              "error_mm": error}
    if args.split == "val" and "best_val_error_mm" in manifest:
        result["recorded_best_val_error_mm"] = manifest["best_val_error_mm"]
        result["matches_recorded"] = bool(
            abs(error - manifest["best_val_error_mm"]) <= 1e-9)
    text = json.dumps(result, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_encode(args) -> int:
    model, normalizer, manifest = load_checkpoint_dir(args.checkpoint)
    path = Path(args.data)
    if path.is_dir():
        dataset = load_dataset(path)
        raw = _split(dataset, args.split, manifest)
    else:
        raw = load_mesh(path).vertex_positions[None]
    z = model.encode(normalizer.normalize(raw).astype(model.dtype)).data
    if args.out:
        _write_latents(args.out, z)
        print(f"encoded {z.shape[0]} samples to latent dim {z.shape[1]} -> {args.out}")
    else:
        for row in np.atleast_2d(z):
            print(",".join(format(v, ".17g") for v in row))
    return 0


def cmd_decode(args) -> int:
    model, normalizer, _ = load_checkpoint_dir(args.checkpoint)
    z = _read_latents(args.latents)
    if z.shape[1] != model.latent_dim:
        raise ConfigError(f"latents have dim {z.shape[1]}, model expects "
                          f"{model.latent_dim}")
    out = Path(args.out or "runs/decoded")
    out.mkdir(parents=True, exist_ok=True)
    coords = normalizer.denormalize(model.decode(z.astype(model.dtype)))
    for i, shape in enumerate(coords):
        mesh = MeshTopology(model.template.num_vertices, model.template.faces,
                            vertex_positions=shape)
        save_mesh(mesh, out / f"shape_{i:04d}.obj")
    print(f"decoded {coords.shape[0]} shapes -> {out}")
    return 0


def cmd_ablate(args) -> int:
    # the ablations list is consumed here, not by ExperimentConfig
    config = _experiment_config(args, "runs/ablate", extra_keys=("ablations",))
    cfg_raw = _load_config(args.config)
    which = cfg_raw.get("ablations", list(ABLATIONS))
    unknown = sorted(set(which) - set(ABLATIONS))
    if unknown:
        raise ConfigError(f"unknown ablations: {unknown}")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for ablation in which:
        sub = ExperimentConfig(
            dataset=config.dataset, model=config.model, train=config.train,
            ablation=ablation, reshuffle_seed=config.reshuffle_seed,
            output_dir=str(out / ablation), deterministic=config.deterministic)
        report = run_experiment(sub)
        summary[ablation] = {
            "model_test_error_mm": report["model_test_error_mm"],
            "best_val_error_mm": report["best_val_error_mm"],
            "parameters": report["model_parameters"],
        }
        print(f"{ablation}: test error {report['model_test_error_mm']:.6g} mm")
    with open(out / "ablation.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"summary -> {out / 'ablation.json'}")
    return 0


def cmd_sweep_k(args) -> int:
    config = _experiment_config(args, "runs/sweep_k")
    try:
        ks = [int(part) for part in args.ks.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--ks must be comma-separated integers: {args.ks!r}") from exc
    rows = neighbor_size_sweep(config, ks)
    for row in rows:
        print(f"K={row['k']}: error {row['error_mm']:.6g} mm, "
              f"{row['param_count']} parameters")
    print(f"table -> {config.output_dir}/sweep.csv")
    return 0


def cmd_export_errors(args) -> int:
    model, normalizer, manifest = load_checkpoint_dir(args.checkpoint)
    dataset = _resolve_eval_data(args, manifest)
    raw = _split(dataset, args.split, manifest)
    pred = normalizer.denormalize(model(normalizer.normalize(raw).astype(model.dtype)))
    out = args.out or "errors.ply"
    errors = export_error_map(pred, raw, model.template.faces, out)
    print(f"mean per-vertex error {errors.mean():.6g} mm over "
          f"{raw.shape[0]} samples -> {out}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--deterministic", action="store_true",
                        help="force timing-free, byte-stable reports")
    common.add_argument("--dtype", choices=("f32", "f64"),
                        help="floating-point mode override")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="permconv",
        description="Mesh autoencoder with learnable neighbor soft-permutations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="build neighbor tables and sampling caches for a mesh")
    p.add_argument("mesh", help="template mesh (OBJ/OFF/PLY)")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", parents=[common],
                       help="train the autoencoder and PCA baseline")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("--data", help="dataset directory (defaults to the one recorded)")
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("encode", parents=[common], help="map shapes to latent vectors")
    p.add_argument("checkpoint")
    p.add_argument("data", help="mesh file or dataset directory")
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="map latent vectors to meshes")
    p.add_argument("checkpoint")
    p.add_argument("latents", help="CSV of latent rows (encode output)")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("ablate", parents=[common],
                       help="run the ablation suite on one configuration")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-k", parents=[common],
                       help="train once per neighborhood size")
    p.add_argument("--ks", default="5,9", help="comma-separated sizes")
    p.set_defaults(fn=cmd_sweep_k)

    p = sub.add_parser("export-errors", parents=[common],
                       help="write a per-vertex error map as PLY")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.set_defaults(fn=cmd_export_errors)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

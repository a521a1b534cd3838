"""Experiment drivers: full runs, ablations, neighbor-size sweeps, exports.

A run trains the autoencoder and a PCA baseline with the same latent
budget on identical splits and writes a JSON report with errors and
parameter counts (split by group for accounting audits), a CSV epoch
log, and a reloadable checkpoint directory. Ablations change exactly one
factor relative to the baseline configuration.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import load_parameters
from .mesh import MeshTopology
from .meshio import emit_ply, load_mesh, save_mesh
from .model import MeshAutoencoder, Normalizer, PCABaseline, reconstruction_error
from .synthetic import Dataset, SyntheticSpec, generate_synthetic, load_dataset
from .train import TrainConfig, TrainingLog, evaluate, save_checkpoint, train

ABLATIONS = ("none", "reshuffle", "random_init", "no_weighting_matrix")

CHECKPOINT_PARAMS = "params.bin"
CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_TEMPLATE = "template.obj"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    ablation: str = "none"
    reshuffle_seed: int = 1
    output_dir: str = "runs/experiment"
    deterministic: bool = True

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if not isinstance(self.dataset, dict):
            raise ConfigError("dataset must be a mapping")
        sources = [key for key in ("synthetic", "path") if key in self.dataset]
        if len(sources) != 1:
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'path'")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "train": self.train,
            "ablation": self.ablation,
            "reshuffle_seed": self.reshuffle_seed,
            "output_dir": str(self.output_dir),
            "deterministic": self.deterministic,
        }


def resolve_dataset(dataset_cfg: dict, out_dir: Path) -> Dataset:
    """Generate the configured synthetic set under out_dir, or load a path."""
    if "synthetic" in dataset_cfg:
        try:
            spec = SyntheticSpec(**dataset_cfg["synthetic"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
        return generate_synthetic(spec, Path(out_dir) / "dataset")
    path = Path(dataset_cfg["path"])
    if not path.exists():
        raise ConfigError(f"dataset path does not exist: {path}")
    return load_dataset(path)


def build_model(template: MeshTopology, model_cfg: dict, ablation: str = "none",
                reshuffle_seed: int = 1) -> MeshAutoencoder:
    """Construct the autoencoder, with the ablation changing one factor."""
    cfg = dict(model_cfg)
    cfg.pop("level_sizes", None)
    dtype = cfg.pop("dtype", "f64")
    cfg["dtype"] = np.float64 if dtype in ("f64", np.float64) else np.float32
    if ablation == "reshuffle":
        cfg["neighbor_order"] = "seeded-shuffle"
        cfg["neighbor_seed"] = reshuffle_seed
    elif ablation == "random_init":
        cfg["mixing_init"] = "random"
    elif ablation == "no_weighting_matrix":
        cfg["mixing_init"] = "identity"
        cfg["train_mixing"] = False
    try:
        return MeshAutoencoder(template, **cfg)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc


def _train_config(train_cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**train_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def save_checkpoint_dir(ckpt_dir, model: MeshAutoencoder, normalizer: Normalizer,
                        extra: dict | None = None) -> None:
    """Self-contained directory: weights, template mesh, and config manifest."""
    ckpt = Path(ckpt_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt / CHECKPOINT_PARAMS, model, normalizer)
    save_mesh(model.template, ckpt / CHECKPOINT_TEMPLATE)
    manifest = {"model": model.config(), "normalizer_mode": normalizer.mode}
    manifest.update(extra or {})
    with open(ckpt / CHECKPOINT_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint_dir(ckpt_dir) -> tuple[MeshAutoencoder, Normalizer, dict]:
    ckpt = Path(ckpt_dir)
    with open(ckpt / CHECKPOINT_MANIFEST) as fh:
        manifest = json.load(fh)
    template = load_mesh(ckpt / CHECKPOINT_TEMPLATE)
    model_cfg = dict(manifest["model"])
    saved_levels = model_cfg.pop("level_sizes", None)
    model = build_model(template, model_cfg)
    if saved_levels is not None and saved_levels != model.level_sizes:
        raise ConfigError(f"rebuilt hierarchy {model.level_sizes} does not match "
                          f"checkpoint {saved_levels}")
    params = load_parameters(ckpt / CHECKPOINT_PARAMS)
    model.load_state(params)
    normalizer = Normalizer.from_parameters(params, manifest.get("normalizer_mode",
                                                                 "per-vertex"))
    return model, normalizer, manifest


def run_experiment(config: ExperimentConfig) -> dict:
    """Train model and PCA on identical splits; write report, log, checkpoint."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    dataset = resolve_dataset(config.dataset, out)
    train_cfg = _train_config(config.train)
    model = build_model(dataset.template, config.model, config.ablation,
                        config.reshuffle_seed)

    log, normalizer = train(model, dataset.train, train_cfg, log_path=out / "log.csv")
    save_checkpoint_dir(out / "checkpoint", model, normalizer, {
        "train": config.train,
        "ablation": config.ablation,
        "best_epoch": log.best_epoch,
        "best_val_error_mm": log.best_val_error,
        "dataset": config.dataset,
    })

    test_is_train = dataset.test is None or len(dataset.test) == 0
    test_raw = dataset.train if test_is_train else dataset.test
    model_error = evaluate(model, normalizer, test_raw, train_cfg.batch_size)

    pca = PCABaseline(model.latent_dim).fit(dataset.train)
    pca_error = reconstruction_error(pca.reconstruct(test_raw), test_raw)

    groups = model.parameter_groups()
    report = {
        "ablation": config.ablation,
        "latent_dim": model.latent_dim,
        "epochs": train_cfg.epochs,
        "best_epoch": log.best_epoch,
        "best_val_error_mm": log.best_val_error,
        "model_test_error_mm": model_error,
        "pca_test_error_mm": pca_error,
        "model_parameters": {"total": model.parameter_count(), **groups},
        "pca_parameters": pca.parameter_count(),
        "level_sizes": model.level_sizes,
        "num_train": int(dataset.train.shape[0]),
        "num_test": int(test_raw.shape[0]),
        "test_is_train": test_is_train,
        "config": config.to_dict(),
    }
    if not config.deterministic:
        report["runtime_s"] = time.perf_counter() - started
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report


def neighbor_size_sweep(config: ExperimentConfig, ks: list[int]) -> list[dict]:
    """One full run per neighborhood size, shared seed; rows go to sweep.csv."""
    if not ks or min(ks) < 1:
        raise ConfigError("sweep needs neighbor sizes >= 1")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in ks:
        sub = ExperimentConfig(
            dataset=config.dataset,
            model={**config.model, "k": int(k)},
            train=config.train,
            ablation=config.ablation,
            reshuffle_seed=config.reshuffle_seed,
            output_dir=str(out / f"k{k}"),
            deterministic=config.deterministic,
        )
        report = run_experiment(sub)
        rows.append({
            "k": int(k),
            "error_mm": report["model_test_error_mm"],
            "param_count": report["model_parameters"]["total"],
        })
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "error_mm", "param_count"])
        for row in rows:
            writer.writerow([row["k"], format(row["error_mm"], ".17g"),
                             row["param_count"]])
    return rows


def export_error_map(pred, target, faces, path) -> np.ndarray:
    """Write a PLY whose per-vertex scalar is the Euclidean error in mm.

    Batched inputs are averaged over samples; vertex positions in the file
    are the (first) target sample so external tools can render the field
    on the true surface. Returns the per-vertex error values.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    errors = np.linalg.norm(pred - target, axis=-1).mean(axis=0)
    text = emit_ply(target[0], faces, {"error": errors})
    with open(str(path), "w") as fh:
        fh.write(text)
    return errors

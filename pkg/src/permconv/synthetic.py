"""Synthetic fixed-topology shape datasets for desk-scale experiments.

Samples deform a base mesh (icosphere or grid) by a bank of smooth
sinusoidal displacement fields whose phases are the per-sample latent
coefficients; each latent enters at two harmonics:

    disp(v) = sum_j a_j * [ (sin(t1_vj + c_j) - sin(t1_vj))
                          + (sin(t2_vj + 2 c_j) - sin(t2_vj)) ] * u_j
    t1_vj = w_j . p_v + psi_j,  t2_vj = w'_j . p_v + psi'_j

Expanding the sines, one coefficient c_j traces a closed curve through
four linear modes, so L true latents span 4L linear dimensions: linear
models at d = L are provably lossy while a nonlinear model with the same
budget is not. Zero coefficients leave the base mesh unchanged.

``direction_jitter`` optionally replaces the shared direction u_j with a
fixed per-vertex unit direction drawn around it, adding vertex-grained
structure to the otherwise spatially smooth field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .mesh import MeshError, MeshTopology
from .meshio import load_mesh, save_mesh

MANIFEST_NAME = "manifest.json"


# -- base meshes ---------------------------------------------------------

def icosahedron() -> MeshTopology:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return MeshTopology(12, faces, vertex_positions=verts)


def icosphere(subdivisions: int) -> MeshTopology:
    """Icosahedron with each face split 4-way per level, snapped to the sphere."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    mesh = icosahedron()
    verts = [v for v in mesh.vertex_positions]
    faces = mesh.faces
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces, dtype=np.int64)
    positions = np.array(verts)
    return MeshTopology(len(verts), faces, vertex_positions=positions)


def grid(width: int, height: int) -> MeshTopology:
    """Planar triangulated grid in [-1,1]^2; has an open boundary."""
    if width < 2 or height < 2:
        raise ValueError("grid needs width, height >= 2")
    xs = np.linspace(-1.0, 1.0, width)
    ys = np.linspace(-1.0, 1.0, height)
    positions = np.zeros((width * height, 3))
    positions[:, 0] = np.tile(xs, height)
    positions[:, 1] = np.repeat(ys, width)
    faces = []
    for y in range(height - 1):
        for x in range(width - 1):
            a = y * width + x
            b = a + 1
            c = b + width
            d = a + width
            faces += [[a, b, c], [a, c, d]]
    return MeshTopology(width * height, np.array(faces, dtype=np.int64),
                        vertex_positions=positions)


def base_mesh(name: str, *args) -> MeshTopology:
    if name == "icosahedron":
        return icosahedron()
    if name == "icosphere":
        return icosphere(int(args[0]))
    if name == "grid":
        return grid(int(args[0]), int(args[1]))
    raise ValueError(f"unknown base mesh {name!r}")


# -- deformation ---------------------------------------------------------

@dataclass
class SyntheticSpec:
    base: str = "icosphere"
    base_args: tuple = (2,)
    latent_dim_true: int = 8
    num_train: int = 2000
    num_test: int = 200
    noise_std: float = 0.0
    amplitude: float = 0.25
    frequency: float = 1.5
    direction_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim_true < 1:
            raise ValueError("latent_dim_true must be positive")
        if self.num_train < 1 or self.num_test < 0:
            raise ValueError("num_train must be >= 1 and num_test >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.direction_jitter < 0:
            raise ValueError("direction_jitter must be non-negative")
        self.base_args = tuple(self.base_args)


def make_basis(spec: SyntheticSpec, rng: np.random.Generator,
               num_vertices: int | None = None) -> dict:
    """Fixed per-dataset displacement bank: directions, frequencies, phases.

    With ``direction_jitter`` > 0 every vertex gets its own unit direction
    per latent, drawn once around the shared one. The field stays a
    sinusoidal function of the coefficients; the jitter adds fixed
    vertex-grained structure that per-vertex model parameters can absorb
    but globally shared filters cannot.
    """
    L = spec.latent_dim_true
    directions = rng.normal(size=(L, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    f = spec.frequency
    basis = {
        "directions": directions,
        "frequencies": rng.uniform(-f, f, size=(L, 3)),
        "phases": rng.uniform(-np.pi, np.pi, size=L),
        "frequencies2": rng.uniform(-2.0 * f, 2.0 * f, size=(L, 3)),
        "phases2": rng.uniform(-np.pi, np.pi, size=L),
        "amplitudes": spec.amplitude * rng.uniform(0.8, 1.2, size=L),
    }
    if spec.direction_jitter > 0:
        if num_vertices is None:
            raise ValueError("direction_jitter needs num_vertices")
        jitter = spec.direction_jitter * rng.normal(size=(num_vertices, L, 3))
        vdirs = directions[None, :, :] + jitter
        vdirs /= np.linalg.norm(vdirs, axis=2, keepdims=True)
        basis["vertex_directions"] = vdirs
    return basis


def deformation_field(positions: np.ndarray, basis: dict, coeffs: np.ndarray) -> np.ndarray:
    """Displacements for one coefficient vector; zero coefficients give zero."""
    t1 = positions @ np.asarray(basis["frequencies"]).T + np.asarray(basis["phases"])
    t2 = positions @ np.asarray(basis["frequencies2"]).T + np.asarray(basis["phases2"])
    modulation = (np.sin(t1 + coeffs) - np.sin(t1)
                  + np.sin(t2 + 2.0 * coeffs) - np.sin(t2))      # (N, L)
    weighted = modulation * np.asarray(basis["amplitudes"])
    if "vertex_directions" in basis:
        vdirs = np.asarray(basis["vertex_directions"])           # (N, L, 3)
        return np.einsum("nl,nlc->nc", weighted, vdirs)
    return weighted @ np.asarray(basis["directions"])


def sample_shapes(template: MeshTopology, basis: dict, coeffs: np.ndarray,
                  noise_std: float = 0.0,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    base = template.vertex_positions
    out = np.empty((coeffs.shape[0],) + base.shape)
    for s in range(coeffs.shape[0]):
        out[s] = base + deformation_field(base, basis, coeffs[s])
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise_std > 0 needs an rng")
        out += rng.normal(scale=noise_std, size=out.shape)
    return out


# -- dataset I/O -----------------------------------------------------------

@dataclass
class Dataset:
    template: MeshTopology
    train: np.ndarray
    test: np.ndarray | None
    manifest: dict
    train_coefficients: np.ndarray | None = None
    test_coefficients: np.ndarray | None = None


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Dataset:
    """Write template.obj, train/test archives, and the manifest; return them.

    Everything downstream of the seed is deterministic: the basis, the
    latent coefficients (uniform on (-pi, pi)), and any noise all come
    from one generator drawn in a fixed order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = base_mesh(spec.base, *spec.base_args)
    rng = np.random.default_rng(spec.seed)
    basis = make_basis(spec, rng, template.num_vertices)
    L = spec.latent_dim_true
    train_coeffs = rng.uniform(-np.pi, np.pi, size=(spec.num_train, L))
    test_coeffs = rng.uniform(-np.pi, np.pi, size=(spec.num_test, L))
    train = sample_shapes(template, basis, train_coeffs, spec.noise_std, rng)
    test = sample_shapes(template, basis, test_coeffs, spec.noise_std, rng)

    save_mesh(template, out / "template.obj")
    np.savez(out / "train.npz", positions=train, coefficients=train_coeffs)
    np.savez(out / "test.npz", positions=test, coefficients=test_coeffs)
    manifest = dict(asdict(spec))
    manifest["base_args"] = list(spec.base_args)
    manifest["num_vertices"] = template.num_vertices
    manifest["basis"] = {key: np.asarray(val).tolist() for key, val in basis.items()}
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return Dataset(template, train, test, manifest, train_coeffs, test_coeffs)


def load_mesh_directory(path) -> tuple[MeshTopology, np.ndarray]:
    """Stack every OBJ/OFF/PLY in a directory; all must share one topology."""
    files = sorted(p for p in Path(path).iterdir()
                   if p.suffix.lower() in (".obj", ".off", ".ply"))
    if not files:
        raise FileNotFoundError(f"no mesh files in {path}")
    template = load_mesh(files[0])
    stack = np.empty((len(files), template.num_vertices, 3))
    stack[0] = template.vertex_positions
    for i, f in enumerate(files[1:], start=1):
        mesh = load_mesh(f)
        if mesh.num_vertices != template.num_vertices or not np.array_equal(
                mesh.faces, template.faces):
            raise MeshError(f"{f}: topology differs from {files[0]}")
        stack[i] = mesh.vertex_positions
    return template, stack


def load_dataset(path) -> Dataset:
    """Load a generated dataset directory, or a plain directory of meshes.

    A directory with a manifest is read back as written by
    generate_synthetic. Without one, every mesh file becomes a training
    sample on the shared topology (test split empty), which is the entry
    point for externally supplied registered scan data.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        template = load_mesh(root / "template.obj")
        with np.load(root / "train.npz") as npz:
            train, train_c = npz["positions"], npz["coefficients"]
        test = test_c = None
        if (root / "test.npz").exists():
            with np.load(root / "test.npz") as npz:
                test, test_c = npz["positions"], npz["coefficients"]
        return Dataset(template, train, test, manifest, train_c, test_c)
    template, stack = load_mesh_directory(root)
    manifest = {"base": "external", "num_vertices": template.num_vertices,
                "num_train": int(stack.shape[0]), "num_test": 0}
    return Dataset(template, stack, None, manifest)

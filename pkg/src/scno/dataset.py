"""Paired (u0, uT) datasets: generation and the binary file format.

File layout (little-endian)::

    offset 0   4 bytes   magic b"SCNO"
    offset 4   uint32    format version (1)
    offset 8   uint32    m, points per function
    offset 12  uint32    n, sample count
    offset 16  n * (m float32 u0, m float32 uT)

Metadata (family, coefficients, grid, seed, split) lives in a JSON sidecar
with the same stem.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pde import FAMILIES, GridSpec, PdeFamily, sample_fourier_ic, solve_pde

MAGIC = b"SCNO"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_SPLIT_CODES = {"train": 0, "test": 1}


class DatasetError(ValueError):
    """Base class for dataset file problems."""


class DatasetMagicError(DatasetError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    pass


@dataclass
class Dataset:
    family: PdeFamily
    grid: GridSpec
    u0: np.ndarray  # [n, m] float32
    uT: np.ndarray  # [n, m] float32
    split: str
    seed: int

    def __post_init__(self):
        self.u0 = np.ascontiguousarray(self.u0, dtype="<f4")
        self.uT = np.ascontiguousarray(self.uT, dtype="<f4")
        if self.u0.shape != self.uT.shape or self.u0.ndim != 2 or self.u0.shape[1] != self.grid.m:
            raise DatasetError(f"sample arrays {self.u0.shape}/{self.uT.shape} do not match grid")

    def __len__(self) -> int:
        return self.u0.shape[0]

    def metadata(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "grid": {"m": self.grid.m, "length": self.grid.length, "dt": self.grid.dt,
                     "steps": self.grid.steps},
            "seed": self.seed,
            "split": self.split,
            "count": len(self),
            "format_version": VERSION,
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.u0.tobytes())
        h.update(self.uT.tobytes())
        return h.hexdigest()

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.family, self.grid, self.u0[:n], self.uT[:n], self.split, self.seed)


def sample_rng(seed: int, family: str, split: str, index: int) -> np.random.Generator:
    """Counter-derived stream: one independent generator per sample."""
    return np.random.default_rng([seed, FAMILIES.index(family), _SPLIT_CODES[split], index])


def make_samples(family: PdeFamily, n: int, seed: int, split: str,
                 grid: GridSpec = GridSpec(), chunk: int = 256) -> Dataset:
    if n <= 0:
        raise ValueError("sample count must be positive")
    u0 = np.stack([sample_fourier_ic(sample_rng(seed, family.tag, split, i), grid, family)
                   for i in range(n)])
    uT = np.concatenate([solve_pde(family, u0[i:i + chunk], grid) for i in range(0, n, chunk)])
    return Dataset(family, grid, u0, uT, split, seed)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.empty((len(ds), 2, ds.grid.m), dtype="<f4")
    payload[:, 0] = ds.u0
    payload[:, 1] = ds.uT
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ds.grid.m, len(ds)))
        fh.write(payload.tobytes())
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(ds.metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetTruncatedError(
            f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    magic, version, m, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetVersionError(f"{path}: format version {version}, expected {VERSION}")
    expected = _HEADER.size + n * 2 * m * 4
    if len(raw) != expected:
        raise DatasetTruncatedError(
            f"{path}: expected {expected} bytes for {n} samples of {m} points, got {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, 2, m)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    family = PdeFamily(**meta["family"]) if "family" in meta else PdeFamily("convection")
    g = meta.get("grid", {})
    grid = GridSpec(m=m, length=g.get("length", 1.0), dt=g.get("dt", 0.005),
                    steps=g.get("steps", 100))
    return Dataset(family, grid, payload[:, 0].copy(), payload[:, 1].copy(),
                   meta.get("split", "train"), int(meta.get("seed", 0)))


def generate_dataset(family: PdeFamily, n_train: int, n_test: int, seed: int, out_dir,
                     grid: GridSpec = GridSpec()) -> tuple[Path, Path]:
    """Generate and write ``train.scno`` / ``test.scno`` (plus sidecars) under ``out_dir``."""
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    out_dir = Path(out_dir)
    train = make_samples(family, n_train, seed, "train", grid)
    test = make_samples(family, n_test, seed, "test", grid)
    return write_dataset(train, out_dir / "train.scno"), write_dataset(test, out_dir / "test.scno")

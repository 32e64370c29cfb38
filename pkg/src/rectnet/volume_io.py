"""Volume data model and on-disk formats.

A volume is stored as a small JSON header plus a raw payload::

    <name>.json  {"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "dtype": "i16", "raw": "<name>.raw"}
    <name>.raw   little-endian int16, x fastest, then y, then z

Masks use the same header with ``"dtype": "u8"`` and values in {0, 1}.
Nodule annotations live in ``<name>.nodules.json`` as run-length encoded
voxel sets plus reader scores.

In memory, voxel arrays are indexed ``data[z, y, x]`` so that a C-order
flatten reproduces the payload order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

HU_MIN = -1024
HU_MAX = 3071

_DTYPES = {"i16": np.dtype("<i2"), "u8": np.dtype("u1")}


class FormatError(ValueError):
    """Raised when a header or payload is malformed."""


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise FormatError(f"dims must be three positive integers, got {dims}")
    return dims


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise FormatError(f"spacing must be three positive reals, got {spacing}")
    return spacing


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """CT volume in Hounsfield units, ``data[z, y, x]``."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self):
        dims = _check_dims(self.dims)
        spacing = _check_spacing(self.spacing)
        data = np.asarray(self.data)
        nx, ny, nz = dims
        if data.size != nx * ny * nz:
            raise FormatError(f"data has {data.size} values, dims require {nx * ny * nz}")
        data = data.reshape(nz, ny, nx)
        if data.size and (data.min() < HU_MIN or data.max() > HU_MAX):
            raise FormatError("HU values outside [-1024, 3071]")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", _frozen(data.astype(np.int16)))

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean voxel mask, ``data[z, y, x]``."""

    dims: tuple[int, int, int]
    data: np.ndarray

    def __post_init__(self):
        dims = _check_dims(self.dims)
        data = np.asarray(self.data)
        nx, ny, nz = dims
        if data.size != nx * ny * nz:
            raise FormatError(f"mask has {data.size} values, dims require {nx * ny * nz}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", _frozen(data.reshape(nz, ny, nx).astype(bool)))

    @classmethod
    def like(cls, volume: Volume, data) -> "BinaryMask":
        return cls(volume.dims, data)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)


SUBTLETY_CLASSES = ("difficult", "medium", "easy")
MALIGNANCY_CLASSES = ("low", "medium", "high")


def bin_score(mean_score: float, names: Sequence[str] = MALIGNANCY_CLASSES) -> str:
    """Three-way binning of a mean reader score; 2.5 and 3.5 both fall in the middle class."""
    if mean_score < 2.5:
        return names[0]
    if mean_score <= 3.5:
        return names[1]
    return names[2]


@dataclass(frozen=True, eq=False)
class NoduleAnnotation:
    id: int
    voxels: np.ndarray  # (n, 3) integer (x, y, z)
    subtlety: tuple[int, ...] = ()
    malignancy: tuple[int, ...] = ()
    agreement_level: int = 4

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        if len(vox) == 0:
            raise FormatError(f"nodule {self.id} has an empty voxel set")
        # canonical order: linear index with x fastest
        order = np.lexsort((vox[:, 0], vox[:, 1], vox[:, 2]))
        object.__setattr__(self, "voxels", _frozen(vox[order]))
        object.__setattr__(self, "subtlety", tuple(int(s) for s in self.subtlety))
        object.__setattr__(self, "malignancy", tuple(int(s) for s in self.malignancy))
        for s in self.subtlety + self.malignancy:
            if not 1 <= s <= 5:
                raise FormatError(f"reader score {s} outside 1..5")
        if not 1 <= int(self.agreement_level) <= 4:
            raise FormatError("agreement_level must be in 1..4")

    @property
    def subtlety_class(self) -> str | None:
        if not self.subtlety:
            return None
        return bin_score(float(np.mean(self.subtlety)), SUBTLETY_CLASSES)

    @property
    def malignancy_class(self) -> str | None:
        if not self.malignancy:
            return None
        return bin_score(float(np.mean(self.malignancy)), MALIGNANCY_CLASSES)

    def check_bounds(self, dims) -> None:
        nx, ny, nz = dims
        v = self.voxels
        if (v < 0).any() or (v[:, 0] >= nx).any() or (v[:, 1] >= ny).any() or (v[:, 2] >= nz).any():
            raise FormatError(f"nodule {self.id} has voxels outside the volume")

    def __eq__(self, other):
        if not isinstance(other, NoduleAnnotation):
            return NotImplemented
        return (self.id == other.id and np.array_equal(self.voxels, other.voxels)
                and self.subtlety == other.subtlety and self.malignancy == other.malignancy
                and self.agreement_level == other.agreement_level)


# -- paths -----------------------------------------------------------------

def _header_path(path) -> Path:
    path = Path(path)
    if path.suffix == ".raw":
        path = path.with_suffix("")
    return path if path.suffix == ".json" else Path(str(path) + ".json")


def _read_header(path) -> tuple[dict, Path]:
    hpath = _header_path(path)
    if not hpath.exists():
        raise FileNotFoundError(hpath)
    with open(hpath) as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"{hpath}: {err}") from None
    for key in ("dims", "dtype", "raw"):
        if key not in header:
            raise FormatError(f"{hpath}: header lacks '{key}'")
    if header["dtype"] not in _DTYPES:
        raise FormatError(f"{hpath}: unsupported dtype {header['dtype']!r}")
    raw = hpath.parent / header["raw"]
    if not raw.exists():
        raise FileNotFoundError(raw)
    return header, raw


def _read_payload(header: dict, raw: Path) -> np.ndarray:
    dims = _check_dims(header["dims"])
    dtype = _DTYPES[header["dtype"]]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    size = os.path.getsize(raw)
    if size != expected:
        raise FormatError(f"{raw}: payload is {size} bytes, header requires {expected}")
    return np.fromfile(raw, dtype=dtype).reshape(dims[2], dims[1], dims[0])


def _write_pair(path, header: dict, payload: np.ndarray) -> Path:
    hpath = _header_path(path)
    hpath.parent.mkdir(parents=True, exist_ok=True)
    raw_name = hpath.with_suffix(".raw").name
    header = dict(header, raw=raw_name)
    with open(hpath.with_suffix(".raw"), "wb") as fh:
        fh.write(np.ascontiguousarray(payload).tobytes())
    with open(hpath, "w") as fh:
        json.dump(header, fh)
        fh.write("\n")
    return hpath


def read_volume(path) -> Volume:
    """Read a header+raw volume pair. ``path`` may name the .json, the .raw or the stem."""
    header, raw = _read_header(path)
    if header["dtype"] != "i16":
        raise FormatError(f"expected an i16 volume, got {header['dtype']}")
    if "spacing" not in header:
        raise FormatError("volume header lacks 'spacing'")
    spacing = _check_spacing(header["spacing"])
    data = _read_payload(header, raw)
    return Volume(tuple(header["dims"]), spacing, data)


def write_volume(volume: Volume, path) -> Path:
    header = {"dims": list(volume.dims), "spacing": list(volume.spacing), "dtype": "i16"}
    return _write_pair(path, header, volume.data.astype("<i2"))


def read_mask(path) -> BinaryMask:
    header, raw = _read_header(path)
    if header["dtype"] != "u8":
        raise FormatError(f"expected a u8 mask, got {header['dtype']}")
    data = _read_payload(header, raw)
    if data.size and data.max() > 1:
        raise FormatError("mask values must be 0 or 1")
    return BinaryMask(tuple(header["dims"]), data)


def write_mask(mask: BinaryMask, path, spacing=None) -> Path:
    header = {"dims": list(mask.dims), "dtype": "u8"}
    if spacing is not None:
        header["spacing"] = list(_check_spacing(spacing))
    return _write_pair(path, header, mask.data.astype(np.uint8))


# -- annotations -------------------------------------------------------------

def rle_encode(voxels: np.ndarray, dims) -> list[list[int]]:
    """Run-length encode a voxel set as ``[[start, length], ...]`` over linear indices."""
    nx, ny, _ = dims
    v = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    lin = np.unique(v[:, 0] + nx * (v[:, 1] + ny * v[:, 2]))
    if lin.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(lin) != 1) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [lin.size]))
    return [[int(lin[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, dims) -> np.ndarray:
    nx, ny, _ = dims
    if not runs:
        return np.zeros((0, 3), dtype=np.int64)
    lin = np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])
    x = lin % nx
    y = (lin // nx) % ny
    z = lin // (nx * ny)
    return np.stack([x, y, z], axis=1)


def annotations_path(stem) -> Path:
    stem = Path(stem)
    name = stem.name
    for suffix in (".nodules.json", ".json", ".raw"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return stem.with_name(name + ".nodules.json")


def write_annotations(annotations: Sequence[NoduleAnnotation], dims, path) -> Path:
    dims = _check_dims(dims)
    doc = {
        "dims": list(dims),
        "nodules": [
            {
                "id": int(a.id),
                "runs": rle_encode(a.voxels, dims),
                "subtlety": list(a.subtlety),
                "malignancy": list(a.malignancy),
                "agreement_level": int(a.agreement_level),
            }
            for a in annotations
        ],
    }
    path = annotations_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
    return path


def read_annotations(path) -> list[NoduleAnnotation]:
    path = annotations_path(path)
    with open(path) as fh:
        doc = json.load(fh)
    dims = _check_dims(doc["dims"])
    out = []
    for item in doc["nodules"]:
        ann = NoduleAnnotation(
            id=int(item["id"]),
            voxels=rle_decode(item["runs"], dims),
            subtlety=tuple(item.get("subtlety", ())),
            malignancy=tuple(item.get("malignancy", ())),
            agreement_level=int(item.get("agreement_level", 4)),
        )
        ann.check_bounds(dims)
        out.append(ann)
    return out


def annotation_mask(annotations: Sequence[NoduleAnnotation], dims) -> np.ndarray:
    """Label array ``[z, y, x]`` holding ``id + 1`` of the nodule owning each voxel (0 = none)."""
    nx, ny, nz = dims
    labels = np.zeros((nz, ny, nx), dtype=np.int32)
    for a in annotations:
        v = a.voxels
        labels[v[:, 2], v[:, 1], v[:, 0]] = a.id + 1
    return labels

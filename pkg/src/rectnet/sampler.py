"""Voxel sampling, patch-stack extraction and augmentation."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .volume_io import BinaryMask, NoduleAnnotation, Volume, annotation_mask

log = logging.getLogger(__name__)

HU_WINDOW = (-1000.0, 400.0)
PAD_HU = -1000.0
AUGMENT_OPS = ("flip_h", "flip_v", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class GridSpec:
    step_multiplier: float = 25.0
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.step_multiplier > 0:
            raise ValueError("step_multiplier must be positive")

    @property
    def step(self) -> int:
        return max(1, int(round(self.step_multiplier)))


def normalize_hu(hu):
    """Clamp to the HU window and map linearly onto [0, 1]."""
    lo, hi = HU_WINDOW
    return (np.clip(np.asarray(hu, dtype=np.float32), lo, hi) - lo) / np.float32(hi - lo)


def sample_grid(lung_mask, spacing=None, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Grid points ``(x, y, z)`` inside the mask, every slice, sorted by (z, y, x).

    ``spacing`` is accepted for interface symmetry; the step is in pixels.
    """
    data = lung_mask.data if isinstance(lung_mask, BinaryMask) else np.asarray(lung_mask, bool)
    step = grid.step
    ox, oy = grid.offset
    sub = data[:, oy % step::step, ox % step::step]
    z, gy, gx = np.nonzero(sub)
    out = np.stack([gx * step + ox % step, gy * step + oy % step, z], axis=1)
    return out.astype(np.int64)


def sample_nodule_voxels(annotations: Sequence[NoduleAnnotation], rate: float, seed: int = 0,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform random subset of each nodule's voxels, ``round(rate * n)`` per nodule."""
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng(seed)
    picked = []
    for ann in annotations:
        v = ann.voxels
        n = len(v) if rate == 1 else int(round(rate * len(v)))
        if n == 0:
            continue
        idx = np.sort(rng.choice(len(v), size=n, replace=False))
        picked.append(v[idx])
    if not picked:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(picked).astype(np.int64)


@dataclass(frozen=True, eq=False)
class PatchStack:
    center: tuple[int, int, int]
    k: int
    patches: np.ndarray  # (2k+1, M, M), normalized
    label: int = 0
    scale: int = 50

    def __post_init__(self):
        p = np.asarray(self.patches)
        if p.ndim != 3 or p.shape[0] != 2 * self.k + 1 or p.shape[1] != p.shape[2]:
            raise ValueError(f"bad stack shape {p.shape} for k={self.k}")

    @property
    def M(self) -> int:
        return self.patches.shape[1]

    def with_patches(self, patches) -> "PatchStack":
        return PatchStack(self.center, self.k, patches, self.label, self.scale)


def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) interpolation weights, pixel-centre aligned, edge-clamped."""
    A = np.zeros((dst, src), dtype=np.float64)
    if src == dst:
        np.fill_diagonal(A, 1.0)
        return A
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, src - 1)
    w1 = pos - i0
    A[np.arange(dst), i0] += 1 - w1
    A[np.arange(dst), i1] += w1
    return A


class StackExtractor:
    """Vectorized stack extraction from one volume.

    The normalized volume is padded once with air so that fancy indexing never
    leaves the array; slice indices are clamped to replicate edge slices.
    """

    def __init__(self, volume: Volume, max_size: int = 80):
        self.volume = volume
        self.pad = max_size // 2 + 1
        norm = normalize_hu(volume.data)
        air = normalize_hu(PAD_HU)
        p = self.pad
        self.norm = np.pad(norm, ((0, 0), (p, p), (p, p)), constant_values=air)
        self._mats: dict[tuple[int, int], np.ndarray] = {}

    def _matrix(self, S: int, M: int) -> np.ndarray:
        key = (S, M)
        if key not in self._mats:
            self._mats[key] = bilinear_matrix(S, M).astype(np.float32)
        return self._mats[key]

    def extract(self, centers, k: int, M: int, scale_M: int | None = None) -> np.ndarray:
        """Stacks for ``centers`` (n, 3) as an array (n, 2k+1, M, M)."""
        S = scale_M or M
        if S // 2 + 1 > self.pad:
            raise ValueError(f"patch size {S} exceeds the extractor padding")
        c = np.asarray(centers, dtype=np.int64).reshape(-1, 3)
        nx, ny, nz = self.volume.dims
        if len(c) and ((c < 0).any() or (c[:, 0] >= nx).any() or (c[:, 1] >= ny).any()
                       or (c[:, 2] >= nz).any()):
            raise ValueError("stack center outside the volume")
        offs = np.arange(S) - S // 2
        zs = np.clip(c[:, 2:3] + np.arange(-k, k + 1), 0, nz - 1)
        ys = c[:, 1:2] + offs + self.pad
        xs = c[:, 0:1] + offs + self.pad
        out = self.norm[zs[:, :, None, None], ys[:, None, :, None], xs[:, None, None, :]]
        if S != M:
            A = self._matrix(S, M)
            out = np.einsum("ms,ntsu,vu->ntmv", A, out, A, optimize=True).astype(np.float32)
        return out


def extract_stack(volume: Volume, center, k: int = 3, M: int = 50, scale_M: int | None = None,
                  label: int = 0) -> PatchStack:
    scale_M = scale_M or M
    ex = StackExtractor(volume, max_size=max(scale_M, M))
    patches = ex.extract([center], k, M, scale_M)[0]
    return PatchStack(tuple(int(v) for v in center), k, patches, label, scale_M)


def augment_array(patches: np.ndarray, op: str) -> np.ndarray:
    """Apply one geometric op to the last two axes of ``patches``."""
    if op == "none":
        return patches
    if op == "flip_h":
        return patches[..., :, ::-1]
    if op == "flip_v":
        return patches[..., ::-1, :]
    if op == "rot90":
        return np.rot90(patches, 1, axes=(-2, -1))
    if op == "rot180":
        return np.rot90(patches, 2, axes=(-2, -1))
    if op == "rot270":
        return np.rot90(patches, 3, axes=(-2, -1))
    raise ValueError(f"unknown augmentation {op!r}")


def augment(stack: PatchStack, op: str) -> PatchStack:
    return stack.with_patches(np.ascontiguousarray(augment_array(stack.patches, op)))


# -- dataset manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    k: int = 3
    patch_size: int = 50
    scales: tuple[int, ...] = (50, 80)
    grid_mult: float = 25.0
    pos_rate: float = 0.5
    augment_ops: tuple[str, ...] = AUGMENT_OPS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "augment_ops", tuple(self.augment_ops))
        if self.k < 0 or self.patch_size <= 0:
            raise ValueError("k must be >= 0 and patch_size positive")
        if any(s < self.patch_size for s in self.scales):
            raise ValueError("scales must not be smaller than patch_size")
        for op in self.augment_ops:
            if op not in AUGMENT_OPS:
                raise ValueError(f"unknown augmentation {op!r}")


@dataclass(frozen=True)
class ManifestEntry:
    volume: str
    center: tuple[int, int, int]
    label: int
    aug: str = "none"
    scale: int = 50

    def to_json(self) -> dict:
        return {"volume": self.volume, "center": list(self.center), "label": self.label,
                "aug": self.aug, "scale": self.scale}


@dataclass
class DatasetManifest:
    config: DatasetConfig
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def counts(self) -> dict[int, int]:
        c = Counter(e.label for e in self.entries)
        return {0: c.get(0, 0), 1: c.get(1, 0)}

    def volumes(self) -> list[str]:
        return sorted({e.volume for e in self.entries})

    def subset(self, volumes: Iterable[str]) -> "DatasetManifest":
        keep = set(volumes)
        return DatasetManifest(self.config, [e for e in self.entries if e.volume in keep])

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cfg = asdict(self.config)
        cfg["scales"] = list(cfg["scales"])
        cfg["augment_ops"] = list(cfg["augment_ops"])
        header = {"header": {"config": cfg, "counts": {str(k): v for k, v in self.counts.items()}}}
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for e in self.entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or "header" not in lines[0]:
            raise ValueError(f"{path}: missing manifest header")
        header = lines[0]["header"]
        config = DatasetConfig(**header["config"])
        entries = [ManifestEntry(d["volume"], tuple(d["center"]), int(d["label"]), d["aug"], int(d["scale"]))
                   for d in lines[1:]]
        manifest = cls(config, entries)
        stated = {int(k): v for k, v in header["counts"].items()}
        if stated != manifest.counts:
            raise ValueError(f"{path}: header counts {stated} disagree with entries {manifest.counts}")
        return manifest


def build_dataset(volumes: Mapping[str, Volume], annotations: Mapping[str, Sequence[NoduleAnnotation]],
                  masks: Mapping[str, BinaryMask], config: DatasetConfig = DatasetConfig()) -> DatasetManifest:
    """Grid negatives plus densely sampled positives, both scales, positives augmented.

    A center is labelled 1 iff it lies in some annotation's voxel set.
    """
    rng = np.random.default_rng(config.seed)
    grid = GridSpec(config.grid_mult)
    entries: list[ManifestEntry] = []
    for vid in sorted(volumes):
        vol = volumes[vid]
        mask = masks[vid].data
        anns = list(annotations.get(vid, ()))
        owner = annotation_mask(anns, vol.dims)
        centers = [sample_grid(mask, vol.spacing, grid)]
        if anns:
            pos = sample_nodule_voxels(anns, config.pos_rate, rng=rng)
            centers.append(pos[mask[pos[:, 2], pos[:, 1], pos[:, 0]]])
        c = np.unique(np.concatenate(centers), axis=0)
        # order by (z, y, x)
        c = c[np.lexsort((c[:, 0], c[:, 1], c[:, 2]))]
        labels = (owner[c[:, 2], c[:, 1], c[:, 0]] > 0).astype(int)
        for (x, y, z), lab in zip(c.tolist(), labels.tolist()):
            ops = ("none",) + config.augment_ops if lab else ("none",)
            for scale in config.scales:
                for op in ops:
                    entries.append(ManifestEntry(vid, (x, y, z), lab, op, scale))
    manifest = DatasetManifest(config, entries)
    if manifest.counts[1] == 0:
        log.warning("dataset has no positive voxels")
    return manifest


class StackSource:
    """Materializes manifest entries as arrays, caching one extractor per volume."""

    def __init__(self, manifest: DatasetManifest, volumes: Mapping[str, Volume]):
        self.manifest = manifest
        self.config = manifest.config
        self.entries = manifest.entries
        self.labels = np.array([e.label for e in self.entries], dtype=np.int64)
        max_size = max(self.config.scales + (self.config.patch_size,))
        self._extractors = {vid: StackExtractor(volumes[vid], max_size) for vid in manifest.volumes()}

    def __len__(self):
        return len(self.entries)

    def stacks(self, indices) -> np.ndarray:
        """(n, 2k+1, M, M) float32 arrays for the given entry indices, in order."""
        return self._extract(indices, self.config.k)

    def center_patches(self, indices) -> np.ndarray:
        """(n, 1, M, M) centre-slice patches for CNN pretraining."""
        return self._extract(indices, 0)

    def _extract(self, indices, k: int) -> np.ndarray:
        cfg = self.config
        idx = np.asarray(indices, dtype=np.int64)
        out = np.empty((len(idx), 2 * k + 1, cfg.patch_size, cfg.patch_size), dtype=np.float32)
        groups: dict[tuple[str, int], list[int]] = {}
        for pos, i in enumerate(idx.tolist()):
            e = self.entries[i]
            groups.setdefault((e.volume, e.scale), []).append(pos)
        for (vid, scale), positions in sorted(groups.items()):
            centers = [self.entries[idx[p]].center for p in positions]
            arr = self._extractors[vid].extract(centers, k, cfg.patch_size, scale)
            for p, a in zip(positions, arr):
                out[p] = augment_array(a, self.entries[idx[p]].aug)
        return out


"""Nodule detection on an unseen volume.

Dense grid classification gives a probability map; points below 0.5 are
dropped, the rest are grown into 26-connected clusters on the sampling
grid, and each cluster is split into mean-shift modes. Modes whose average
probability exceeds ``accept_p`` are merged into one candidate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .lung_seg import SegmentationConfig, segment_lungs
from .sampler import GridSpec, StackExtractor, sample_grid
from .volume_io import BinaryMask, Volume

log = logging.getLogger(__name__)

DEFAULT_ACCEPT_P = 0.75
DEFAULT_BANDWIDTH = 1.5
MAP_CUTOFF = 0.5


@dataclass
class ProbabilityMap:
    """One entry per sampled voxel: voxel ``(x, y, z)``, grid index and nodule probability."""

    volume_id: str
    voxels: np.ndarray
    probs: np.ndarray
    step: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(self.voxels) != len(self.probs):
            raise ValueError("one probability per sampled voxel")
        if len(self.probs) and (self.probs.min() < 0 or self.probs.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.probs)

    @property
    def grid(self) -> np.ndarray:
        """Grid indices ``(gx, gy, slice)``."""
        g = self.voxels.copy()
        g[:, :2] //= self.step
        return g

    def subset(self, keep) -> "ProbabilityMap":
        return ProbabilityMap(self.volume_id, self.voxels[keep], self.probs[keep], self.step, self.spacing)

    def to_array(self, dims) -> np.ndarray:
        """Dense (nz, ny, nx) float array with probabilities at sampled voxels, zero elsewhere."""
        nx, ny, nz = dims
        out = np.zeros((nz, ny, nx), dtype=np.float64)
        v = self.voxels
        out[v[:, 2], v[:, 1], v[:, 0]] = self.probs
        return out


@dataclass
class Mode:
    """Members (indices into the map) converging to one mean-shift mode."""

    center: np.ndarray
    members: np.ndarray
    mean_prob: float
    converged: bool = True


@dataclass
class CandidateNodule:
    voxels: np.ndarray
    probs: np.ndarray
    spacing: tuple[float, float, float]
    cluster: int = -1

    @property
    def voxel_count(self) -> int:
        return len(self.voxels)

    @property
    def mean_probability(self) -> float:
        return float(self.probs.mean())

    @property
    def centroid_mm(self) -> tuple[float, float, float]:
        c = self.voxels.mean(axis=0) * np.asarray(self.spacing)
        return tuple(float(v) for v in c)

    @property
    def bbox(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        return tuple(int(v) for v in self.voxels.min(axis=0)), tuple(int(v) for v in self.voxels.max(axis=0))

    def to_json(self) -> dict:
        lo, hi = self.bbox
        return {"centroid_mm": [round(c, 6) for c in self.centroid_mm], "voxel_count": self.voxel_count,
                "mean_probability": round(self.mean_probability, 9), "bbox": [list(lo), list(hi)],
                "cluster": self.cluster, "voxels": self.voxels.tolist()}


def _stack_shape(model) -> tuple[int, int]:
    cfg = model.config
    return cfg.k, cfg.patch


def infer_map(model, volume: Volume, lung_mask: BinaryMask, grid_mult: float = 4, batch_size: int = 128,
              volume_id: str = "") -> ProbabilityMap:
    """Classify a stack centred on every grid point inside the lung mask."""
    grid = GridSpec(grid_mult)
    centers = sample_grid(lung_mask, volume.spacing, grid)
    if len(centers) == 0:
        return ProbabilityMap(volume_id, centers, np.zeros(0), grid.step, volume.spacing)
    k, M = _stack_shape(model)
    extractor = StackExtractor(volume, M)
    probs = np.empty(len(centers), dtype=np.float64)
    for s in range(0, len(centers), batch_size):
        stacks = extractor.extract(centers[s:s + batch_size], k, M)
        probs[s:s + batch_size] = model.forward(stacks)[:, 1]
    return ProbabilityMap(volume_id, centers, np.clip(probs, 0.0, 1.0), grid.step, volume.spacing)


def threshold_map(pmap: ProbabilityMap, cutoff: float = MAP_CUTOFF) -> ProbabilityMap:
    """Drop entries with probability below ``cutoff`` (ties kept)."""
    return pmap.subset(pmap.probs >= cutoff)


def grow_clusters(pmap: ProbabilityMap) -> list[np.ndarray]:
    """Maximal 26-connected groups of grid points, as index arrays into the map."""
    if len(pmap) == 0:
        return []
    labels = kernels.grow_regions(pmap.grid)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    return [np.sort(part) for part in np.split(order, splits)]


def cluster_modes(pmap: ProbabilityMap, members: np.ndarray, bandwidth: float = DEFAULT_BANDWIDTH,
                  max_iter: int = 500) -> list[Mode]:
    """Mean shift in grid-index space; modes closer than ``bandwidth / 2`` are merged."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    members = np.asarray(members, dtype=np.int64)
    if len(members) == 0:
        raise ValueError("empty cluster")
    pts = pmap.grid[members].astype(np.float64)
    modes, _, converged = kernels.mean_shift(pts, pts, bandwidth, 1e-3 * bandwidth, max_iter)
    if not converged.all():
        log.warning("mean shift did not converge for %d of %d points", int((~converged).sum()), len(pts))
    reps: list[np.ndarray] = []
    assign = np.full(len(pts), -1, dtype=np.int64)
    for i in np.flatnonzero(converged):
        for r, c in enumerate(reps):
            if np.linalg.norm(modes[i] - c) < bandwidth / 2:
                assign[i] = r
                break
        else:
            reps.append(modes[i])
            assign[i] = len(reps) - 1
    if not reps:
        reps.append(modes[0])
    for i in np.flatnonzero(~converged):
        assign[i] = int(np.argmin([np.linalg.norm(modes[i] - c) for c in reps]))
    out = []
    for r, c in enumerate(reps):
        idx = members[assign == r]
        if len(idx) == 0:
            continue
        out.append(Mode(np.asarray(c), idx, float(pmap.probs[idx].mean()), bool(converged[assign == r].all())))
    return out


def merge_modes(pmap: ProbabilityMap, modes: list[Mode], accept_p: float, cluster: int = -1) -> list[CandidateNodule]:
    """Merge every mode with average probability above ``accept_p`` into one candidate."""
    keep = [m.members for m in modes if m.mean_prob > accept_p]
    if not keep:
        return []
    idx = np.sort(np.concatenate(keep))
    return [CandidateNodule(pmap.voxels[idx], pmap.probs[idx], pmap.spacing, cluster)]


def meanshift_filter(pmap: ProbabilityMap, members: np.ndarray, bandwidth: float = DEFAULT_BANDWIDTH,
                     accept_p: float = DEFAULT_ACCEPT_P, cluster: int = -1) -> list[CandidateNodule]:
    if not 0 <= accept_p <= 1:
        raise ValueError("accept_p must lie in [0, 1]")
    return merge_modes(pmap, cluster_modes(pmap, members, bandwidth), accept_p, cluster)


@dataclass
class DetectConfig:
    grid_mult: float = 4.0
    accept_p: float = DEFAULT_ACCEPT_P
    bandwidth: float = DEFAULT_BANDWIDTH
    cutoff: float = MAP_CUTOFF
    batch_size: int = 128
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)

    def __post_init__(self):
        if not 0 <= self.accept_p <= 1:
            raise ValueError("accept_p must lie in [0, 1]")
        if self.bandwidth <= 0 or self.grid_mult <= 0:
            raise ValueError("bandwidth and grid_mult must be positive")


@dataclass
class DetectionResult:
    volume_id: str
    pmap: ProbabilityMap
    clusters: list[list[Mode]]
    candidates: list[CandidateNodule]
    config: DetectConfig
    full_map: ProbabilityMap | None = None

    def candidates_at(self, accept_p: float) -> list[CandidateNodule]:
        out = []
        for ci, modes in enumerate(self.clusters):
            out.extend(merge_modes(self.pmap, modes, accept_p, ci))
        return out

    def to_json(self) -> dict:
        """Candidates at the configured threshold plus every mode, so other thresholds can be re-derived."""
        pm = self.pmap
        clusters = [[{"center": [round(float(c), 9) for c in m.center], "mean_probability": round(m.mean_prob, 12),
                      "voxels": pm.voxels[m.members].tolist(), "probs": [round(float(p), 12) for p in pm.probs[m.members]]}
                     for m in modes] for modes in self.clusters]
        return {"volume": self.volume_id, "spacing": list(pm.spacing), "grid_step": pm.step,
                "accept_p": self.config.accept_p, "bandwidth": self.config.bandwidth,
                "n_sampled": len(pm), "candidates": [c.to_json() for c in self.candidates], "clusters": clusters}


def detect(model, volume: Volume, config: DetectConfig = DetectConfig(), lung_mask: BinaryMask | None = None,
           volume_id: str = "") -> DetectionResult:
    """Segment (unless a mask is given), map, threshold, cluster and filter."""
    mask = lung_mask if lung_mask is not None else segment_lungs(volume, config.segmentation)
    pmap = infer_map(model, volume, mask, config.grid_mult, config.batch_size, volume_id)
    kept = threshold_map(pmap, config.cutoff)
    clusters = [cluster_modes(kept, members, config.bandwidth) for members in grow_clusters(kept)]
    result = DetectionResult(volume_id, kept, clusters, [], config, pmap)
    result.candidates = result.candidates_at(config.accept_p)
    return result


def candidates_from_json(doc: dict, accept_p: float | None = None) -> list[CandidateNodule]:
    """Rebuild candidates from a saved detection, optionally at another threshold."""
    spacing = tuple(doc["spacing"])
    if accept_p is None:
        return [CandidateNodule(np.asarray(c["voxels"], dtype=np.int64).reshape(-1, 3),
                                np.full(c["voxel_count"], c["mean_probability"]), spacing, c["cluster"])
                for c in doc["candidates"]]
    out = []
    for ci, modes in enumerate(doc["clusters"]):
        keep = [m for m in modes if m["mean_probability"] > accept_p]
        if not keep:
            continue
        vox = np.concatenate([np.asarray(m["voxels"], dtype=np.int64).reshape(-1, 3) for m in keep])
        probs = np.concatenate([np.asarray(m["probs"], dtype=np.float64) for m in keep])
        order = np.lexsort((vox[:, 0], vox[:, 1], vox[:, 2]))
        vox, probs = vox[order], probs[order]
        out.append(CandidateNodule(vox, probs, spacing, ci))
    return out


def save_detection(result: DetectionResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_json(), sort_keys=True) + "\n")


def write_pgm_slices(pmap: ProbabilityMap, dims, out_dir, prefix: str = "pmap") -> list[Path]:
    """One 8-bit binary PGM per slice; probability 1 maps to 255."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = np.round(pmap.to_array(dims) * 255).astype(np.uint8)
    paths = []
    for z, sl in enumerate(arr):
        p = out_dir / f"{prefix}_{z:03d}.pgm"
        p.write_bytes(f"P5\n{sl.shape[1]} {sl.shape[0]}\n255\n".encode() + sl.tobytes())
        paths.append(p)
    return paths

"""Hit/false-positive scoring, FROC sweeps and stratified sensitivity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .detector import CandidateNodule
from .volume_io import MALIGNANCY_CLASSES, SUBTLETY_CLASSES, NoduleAnnotation

NA = "N/A"
STRATA = ("subtlety", "malignancy", "agreement")


@dataclass
class DetectionOutcome:
    """Per-volume matching result; ``assignment[i]`` is the nodule id hit by candidate i, or None."""

    volume_id: str
    nodule_ids: list[int]
    hit: dict[int, bool]
    assignment: list[int | None]

    @property
    def tp(self) -> int:
        return sum(a is not None for a in self.assignment)

    @property
    def fp(self) -> int:
        return sum(a is None for a in self.assignment)

    @property
    def hits(self) -> int:
        return sum(self.hit.values())

    @property
    def candidate_is_tp(self) -> list[bool]:
        return [a is not None for a in self.assignment]


def _dilated_keys(voxels: np.ndarray, step: int) -> set[tuple[int, int, int]]:
    """Voxel set grown by one grid step: +-step pixels in-plane, +-1 slice."""
    off = np.array([(dx, dy, dz) for dz in (-1, 0, 1) for dy in range(-step, step + 1)
                    for dx in range(-step, step + 1)], dtype=np.int64)
    grown = (voxels[:, None, :] + off[None]).reshape(-1, 3)
    return set(map(tuple, np.unique(grown, axis=0).tolist()))


def match_candidates(candidates: Sequence[CandidateNodule], annotations: Sequence[NoduleAnnotation],
                     grid_step: int = 4, volume_id: str = "") -> DetectionOutcome:
    """Assign each candidate to at most one nodule by largest dilated overlap (ties: smaller id)."""
    nodule_sets = {a.id: set(map(tuple, np.asarray(a.voxels).tolist())) for a in annotations}
    ids = sorted(nodule_sets)
    assignment: list[int | None] = []
    for cand in candidates:
        grown = _dilated_keys(np.asarray(cand.voxels, dtype=np.int64).reshape(-1, 3), grid_step)
        best, best_n = None, 0
        for nid in ids:
            n = len(grown & nodule_sets[nid])
            if n > best_n:
                best, best_n = nid, n
        assignment.append(best)
    hit = {nid: nid in assignment for nid in ids}
    return DetectionOutcome(volume_id, ids, hit, assignment)


@dataclass
class FrocCurve:
    """Operating points sorted by FPs/scan; ``accept_p`` recorded alongside."""

    accept_p: list[float] = field(default_factory=list)
    fps_per_scan: list[float] = field(default_factory=list)
    sensitivity: list[float] = field(default_factory=list)

    def sensitivity_at(self, max_fps: float) -> float:
        """Best sensitivity among points with at most ``max_fps`` FPs/scan (0 if none)."""
        ok = [s for f, s in zip(self.fps_per_scan, self.sensitivity) if f <= max_fps]
        return max(ok) if ok else 0.0

    def rows(self):
        return list(zip(self.accept_p, self.fps_per_scan, self.sensitivity))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["accept_p", "fps_per_scan", "sensitivity"])
            for p, f, s in self.rows():
                w.writerow([f"{p:.6g}", f"{f:.6g}", f"{s:.6g}"])


def aggregate(outcomes: Sequence[DetectionOutcome]) -> tuple[float, float]:
    """(sensitivity, FPs per scan) over a set of volumes."""
    if not outcomes:
        raise ValueError("no volumes")
    total = sum(len(o.nodule_ids) for o in outcomes)
    if total == 0:
        raise ValueError("empty annotation set")
    return sum(o.hits for o in outcomes) / total, sum(o.fp for o in outcomes) / len(outcomes)


def froc(candidates_at: Callable[[str, float], Sequence[CandidateNodule]], annotations: Mapping[str, Sequence[NoduleAnnotation]],
         accept_grid: Sequence[float], grid_step: int = 4) -> FrocCurve:
    """Sweep ``accept_p``; ``candidates_at(volume_id, p)`` yields that volume's candidates at threshold p."""
    if not annotations:
        raise ValueError("at least one volume is required")
    if sum(len(a) for a in annotations.values()) == 0:
        raise ValueError("empty annotation set")
    pts = []
    for p in sorted(set(float(p) for p in accept_grid)):
        outs = [match_candidates(candidates_at(vid, p), annotations[vid], grid_step, vid) for vid in sorted(annotations)]
        sens, fps = aggregate(outs)
        pts.append((fps, -p, sens, p))
    pts.sort()
    return FrocCurve([p for *_, p in pts], [f for f, *_ in pts], [s for _, _, s, _ in pts])


def stratum_class(ann: NoduleAnnotation, stratum: str):
    if stratum == "subtlety":
        return ann.subtlety_class
    if stratum == "malignancy":
        return ann.malignancy_class
    if stratum == "agreement":
        return ann.agreement_level
    raise ValueError(f"unknown stratum {stratum!r}")


def stratum_classes(stratum: str) -> tuple:
    classes = {"subtlety": SUBTLETY_CLASSES, "malignancy": MALIGNANCY_CLASSES, "agreement": (1, 2, 3, 4)}
    if stratum not in classes:
        raise ValueError(f"unknown stratum {stratum!r}")
    return classes[stratum]


def stratified_sensitivity(outcomes: Sequence[DetectionOutcome], annotations: Mapping[str, Sequence[NoduleAnnotation]],
                           stratum: str) -> dict:
    """Per-class ``{"n": count, "hits": h, "sensitivity": h / n or "N/A"}``."""
    table = {c: {"n": 0, "hits": 0} for c in stratum_classes(stratum)}
    for o in outcomes:
        for ann in annotations[o.volume_id]:
            cls = stratum_class(ann, stratum)
            if cls is None:
                continue
            table[cls]["n"] += 1
            table[cls]["hits"] += int(o.hit.get(ann.id, False))
    for row in table.values():
        row["sensitivity"] = row["hits"] / row["n"] if row["n"] else NA
    return table


def filter_agreement(annotations: Mapping[str, Sequence[NoduleAnnotation]], min_level: int) -> dict:
    """Keep nodules confirmed by at least ``min_level`` readers."""
    return {vid: [a for a in anns if a.agreement_level >= min_level] for vid, anns in annotations.items()}


def save_strata_csv(tables: Mapping[str, dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stratum", "class", "n", "hits", "sensitivity"])
        for stratum, table in tables.items():
            for cls, row in table.items():
                s = row["sensitivity"]
                w.writerow([stratum, cls, row["n"], row["hits"], s if s == NA else f"{s:.6g}"])


def sweep_grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded to suppress float drift."""
    if step <= 0 or stop < start:
        raise ValueError("sweep needs start <= stop and step > 0")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]

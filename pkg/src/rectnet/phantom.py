"""Synthetic thoracic phantoms with exact nodule ground truth.

The body is an elliptic cylinder of soft tissue in air, the lungs are
ellipsoids of low-density tissue inside it, nodules are solid ellipsoids
inside the lungs and vessels are thin tubes clipped to the lungs.  All
coordinates are in mm with voxel ``(i, j, k)`` centred at
``(i*sx, j*sy, k*sz)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .volume_io import HU_MAX, HU_MIN, BinaryMask, NoduleAnnotation, Volume


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]


@dataclass(frozen=True)
class NoduleSpec:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    hu: float = 40.0
    agreement_level: int = 4
    subtlety: tuple[int, ...] | None = None
    malignancy: tuple[int, ...] | None = None


@dataclass(frozen=True)
class VesselSpec:
    points: tuple[tuple[float, float, float], ...]
    radius: float = 1.0
    hu: float = 20.0


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    lungs: tuple[Ellipsoid, ...]
    body_center: tuple[float, float]
    body_radii: tuple[float, float]
    nodules: tuple[NoduleSpec, ...] = ()
    vessels: tuple[VesselSpec, ...] = ()
    air_hu: float = -1000.0
    lung_hu: float = -600.0
    body_hu: float = 40.0
    noise_sd: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise PhantomError(f"bad dims {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise PhantomError(f"bad spacing {self.spacing}")
        if not -600 <= self.lung_hu <= -400:
            raise PhantomError("lung HU must lie in [-600, -400]")
        if self.body_hu < -100:
            raise PhantomError("body HU must be >= -100")
        for n in self.nodules:
            if not -200 <= n.hu <= 200:
                raise PhantomError("nodule HU must lie in [-200, 200]")
        for v in self.vessels:
            if not -200 <= v.hu <= 200:
                raise PhantomError("vessel HU must lie in [-200, 200]")
        if self.noise_sd < 0:
            raise PhantomError("noise_sd must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise PhantomError("seed must be a 64-bit unsigned integer")


def _grid(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    z = (np.arange(nz) * sz)[:, None, None]
    y = (np.arange(ny) * sy)[None, :, None]
    x = (np.arange(nx) * sx)[None, None, :]
    return x, y, z


def _ellipsoid_box(spec: PhantomSpec, center, radii):
    """Index box ``(zslice, yslice, xslice)`` and the ellipsoid mask restricted to it."""
    box = []
    for c, r, s, n in zip(center, radii, spec.spacing, spec.dims):
        lo = max(int(np.floor((c - r) / s)), 0)
        hi = min(int(np.ceil((c + r) / s)) + 1, n)
        box.append((lo, max(hi, lo)))
    (x0, x1), (y0, y1), (z0, z1) = box
    sx, sy, sz = spec.spacing
    z = (np.arange(z0, z1) * sz)[:, None, None]
    y = (np.arange(y0, y1) * sy)[None, :, None]
    x = (np.arange(x0, x1) * sx)[None, None, :]
    cx, cy, cz = center
    rx, ry, rz = radii
    local = ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2 <= 1.0
    return (slice(z0, z1), slice(y0, y1), slice(x0, x1)), local


def ellipsoid_mask(spec: PhantomSpec, center, radii) -> np.ndarray:
    nx, ny, nz = spec.dims
    out = np.zeros((nz, ny, nx), dtype=bool)
    box, local = _ellipsoid_box(spec, center, radii)
    out[box] = local
    return out


def lung_mask(spec: PhantomSpec) -> np.ndarray:
    nx, ny, nz = spec.dims
    out = np.zeros((nz, ny, nx), dtype=bool)
    for lung in spec.lungs:
        out |= ellipsoid_mask(spec, lung.center, lung.radii)
    return out


def _body_mask(spec: PhantomSpec) -> np.ndarray:
    x, y, _ = _grid(spec)
    nz = spec.dims[2]
    cx, cy = spec.body_center
    rx, ry = spec.body_radii
    inside = ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0
    return np.broadcast_to(inside, (nz,) + inside.shape[1:])


def _tube_mask(spec: PhantomSpec, vessel: VesselSpec) -> np.ndarray:
    x, y, z = _grid(spec)
    nx, ny, nz = spec.dims
    out = np.zeros((nz, ny, nx), dtype=bool)
    pts = np.asarray(vessel.points, dtype=float)
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        L2 = float(d @ d)
        px, py, pz = x - a[0], y - a[1], z - a[2]
        t = (px * d[0] + py * d[1] + pz * d[2]) / L2 if L2 > 0 else 0.0 * px
        t = np.clip(t, 0.0, 1.0)
        dist2 = (px - t * d[0]) ** 2 + (py - t * d[1]) ** 2 + (pz - t * d[2]) ** 2
        out |= dist2 <= vessel.radius ** 2
    return out


SUBTLETY_CNR_RANGE = (20.0, 40.0)
MALIGNANCY_DIAMETER_RANGE = (4.0, 12.0)


def _proxy_score(value, lo, hi) -> float:
    return 1.0 + 4.0 * float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def subtlety_proxy(nodule_hu: float, lung_hu: float, noise_sd: float) -> float:
    """Contrast-to-noise ratio mapped linearly onto the 1..5 reader scale."""
    cnr = (nodule_hu - lung_hu) / max(noise_sd, 1e-6)
    return _proxy_score(cnr, *SUBTLETY_CNR_RANGE)


def _reader_scores(proxy: float, n: int, rng: np.random.Generator) -> tuple[int, ...]:
    jitter = rng.normal(0.0, 0.4, size=n)
    return tuple(int(s) for s in np.clip(np.rint(proxy + jitter), 1, 5))


def generate_phantom(spec: PhantomSpec):
    """Render a phantom. Returns ``(volume, lung_truth, annotations)``."""
    nx, ny, nz = spec.dims
    rng = np.random.default_rng(int(spec.seed))

    lungs = lung_mask(spec)
    hu = np.full((nz, ny, nx), spec.air_hu, dtype=np.float64)
    body = _body_mask(spec)
    if (lungs & ~body).any():
        raise PhantomError("lungs extend outside the body")
    hu[body] = spec.body_hu
    hu[lungs] = spec.lung_hu

    for vessel in spec.vessels:
        tube = _tube_mask(spec, vessel) & lungs
        hu[tube] = vessel.hu

    owner = np.zeros((nz, ny, nx), dtype=np.int32)
    annotations = []
    for idx, nod in enumerate(spec.nodules):
        m = ellipsoid_mask(spec, nod.center, nod.radii)
        if not m.any():
            raise PhantomError(f"nodule {idx} rasterizes to no voxels")
        if (m & ~lungs).any():
            raise PhantomError(f"nodule {idx} extends outside the lung")
        if (owner[m] != 0).any():
            raise PhantomError(f"nodule {idx} overlaps another nodule")
        owner[m] = idx + 1
        hu[m] = nod.hu
        zz, yy, xx = np.nonzero(m)
        diameter = 2.0 * float(np.mean(nod.radii))
        subtlety = nod.subtlety
        if subtlety is None:
            subtlety = _reader_scores(subtlety_proxy(nod.hu, spec.lung_hu, spec.noise_sd),
                                      nod.agreement_level, rng)
        malignancy = nod.malignancy
        if malignancy is None:
            malignancy = _reader_scores(_proxy_score(diameter, *MALIGNANCY_DIAMETER_RANGE),
                                        nod.agreement_level, rng)
        annotations.append(NoduleAnnotation(
            id=idx, voxels=np.stack([xx, yy, zz], axis=1), subtlety=subtlety,
            malignancy=malignancy, agreement_level=nod.agreement_level))

    if spec.noise_sd > 0:
        hu += rng.normal(0.0, spec.noise_sd, size=hu.shape)
    data = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)
    volume = Volume(spec.dims, spec.spacing, data)
    return volume, BinaryMask(spec.dims, lungs), annotations


# -- random phantom suites ------------------------------------------------------

PRESETS = {
    # small volumes for CPU training and detection
    "desk": dict(dims=(96, 96, 32), spacing=(1.0, 1.0, 1.5), nodule_radius=(2.5, 5.0),
                 n_vessels=4, vessel_radius=(0.8, 1.4),
                 body=(0.45, 0.38), lung_offset=0.2, lung=(0.16, 0.28, 0.75)),
    # LIDC-like in-plane geometry, few slices
    "full": dict(dims=(512, 512, 24), spacing=(0.7, 0.7, 1.25), nodule_radius=(3.0, 8.0),
                 n_vessels=8, vessel_radius=(1.0, 2.0),
                 body=(0.47, 0.43), lung_offset=0.22, lung=(0.2, 0.32, 1.3)),
}


def _anatomy(p):
    nx, ny, nz = p["dims"]
    sx, sy, sz = p["spacing"]
    W, H, D = nx * sx, ny * sy, nz * sz
    cx, cy, cz = (nx - 1) * sx / 2, (ny - 1) * sy / 2, (nz - 1) * sz / 2
    body_r = (p["body"][0] * W, p["body"][1] * H)
    fx, fy, fz = p["lung"]
    lungs = tuple(
        Ellipsoid((cx + side * p["lung_offset"] * W, cy, cz), (fx * W, fy * H, fz * D))
        for side in (-1, 1)
    )
    return (cx, cy), body_r, lungs


def _inside_lungs(spec_like, center, radii, lungs_mask, taken) -> bool:
    for c, r, s, n in zip(center, radii, spec_like.spacing, spec_like.dims):
        if c - r < 0 or c + r > (n - 1) * s:
            return False
    box, m = _ellipsoid_box(spec_like, center, radii)
    return bool(m.any()) and not (m & ~lungs_mask[box]).any() and not (m & taken[box]).any()


def random_phantom_spec(seed: int, preset: str = "desk", n_nodules=(1, 3), juxtapleural: bool = False,
                        nodule_hu=(-200.0, 200.0), noise_sd: float = 20.0,
                        juxtapleural_radius: float | None = None, pleural_gap: float = 0.0) -> PhantomSpec:
    """Draw a phantom layout. ``n_nodules`` is an inclusive (lo, hi) range or an int.

    With ``juxtapleural`` the first nodule touches the lung wall; its radius is
    ``juxtapleural_radius`` when given. A per-slice dilation of ``d`` pixels
    only recovers a wall-attached nodule whose contact zone is shallower than
    ``d``, roughly ``sqrt(2 * r_px) <= d``. ``pleural_gap`` is the nominal
    distance in voxels between the nodule surface and the lung boundary.
    """
    p = PRESETS[preset]
    rng = np.random.default_rng(int(seed))
    body_c, body_r, lungs = _anatomy(p)
    base = PhantomSpec(p["dims"], p["spacing"], lungs, body_c, body_r, noise_sd=noise_sd, seed=int(seed))
    lm = lung_mask(base)
    if isinstance(n_nodules, int):
        count = n_nodules
    else:
        count = int(rng.integers(n_nodules[0], n_nodules[1] + 1))

    nodules: list[NoduleSpec] = []
    taken = np.zeros_like(lm)
    lo, hi = p["nodule_radius"]
    for i in range(count):
        for _ in range(500):
            r = float(rng.uniform(lo, hi))
            if juxtapleural and i == 0 and juxtapleural_radius is not None:
                r = float(juxtapleural_radius)
            radii = (r, r, r)
            lung = lungs[int(rng.integers(len(lungs)))]
            if juxtapleural and i == 0:
                center = _pleural_center(base, lung, r, rng, lm, pleural_gap)
                if center is None:
                    continue
            else:
                u = rng.uniform(-1, 1, size=3) * 0.8
                center = tuple(float(c + ui * rr) for c, ui, rr in zip(lung.center, u, lung.radii))
            if not _inside_lungs(base, center, radii, lm, taken):
                continue
            far = all(
                np.linalg.norm(np.subtract(center, n.center)) >= r + n.radii[0] + 10.0 for n in nodules
            )
            if not far:
                continue
            box, m = _ellipsoid_box(base, center, radii)
            taken[box] |= m
            nodules.append(NoduleSpec(
                center=center, radii=radii, hu=float(rng.uniform(*nodule_hu)),
                agreement_level=int(rng.integers(1, 5))))
            break
        else:
            raise PhantomError("could not place nodule; lower the nodule count")

    vessels = []
    vlo, vhi = p["vessel_radius"]
    for _ in range(p["n_vessels"]):
        lung = lungs[int(rng.integers(len(lungs)))]
        pts = tuple(
            tuple(float(c + ui * rr) for c, ui, rr in zip(lung.center, rng.uniform(-0.9, 0.9, 3), lung.radii))
            for _ in range(3)
        )
        vessels.append(VesselSpec(pts, radius=float(rng.uniform(vlo, vhi)), hu=float(rng.uniform(0, 60))))

    return replace(base, nodules=tuple(nodules), vessels=tuple(vessels))


def _pleural_center(spec, lung: Ellipsoid, r: float, rng, lm, gap: float = 0.0):
    """Nodule centre just inside the lung wall so the nodule touches the pleura."""
    # in-plane direction so the nodule abuts the lateral wall on its own slices
    theta = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta), 0.0])
    c = np.asarray(lung.center, dtype=float)
    radii = np.asarray(lung.radii, dtype=float)
    # surface point along the direction
    t = 1.0 / np.sqrt(np.sum((direction / radii) ** 2))
    surface = c + t * direction
    normal = (surface - c) / radii ** 2
    normal /= np.linalg.norm(normal)
    step = min(spec.spacing) * 0.25
    offset = r + gap * min(spec.spacing)
    for _ in range(40):
        center = tuple(float(v) for v in surface - offset * normal)
        if _inside_lungs(spec, center, (r, r, r), lm, np.zeros_like(lm)):
            return center
        offset += step
    return None

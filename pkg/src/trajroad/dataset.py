"""Training triplets: augmentation, synthetic scenes, splits and on-disk layout.

Synthetic scenes stand in for real aerial/trajectory tiles.  Each one has
roads drawn as thick polylines, tree-like occluders covering roads in the
image only, track-like distractors that look like roads but carry no
traffic, noisy GPS fixes along the road centrelines with uneven volume per
road, parking-lot clusters of fixes off the road, and an optional blend of
the image toward white (fog).
"""
import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, EmptyInput, NonSquare
from .heatmap import RasterSpec, render_heatmap
from .rasters import read_pgm, read_rft, write_pgm, write_rft
from .trajectory import GeoBounds, TrajectorySample, build_store, write_samples

# geographic frame of synthetic tiles: ~1 m pixels near Beijing
ORIGIN_LON = 116.30
ORIGIN_LAT = 39.90
PIXEL_DEG = 1e-5


@dataclass
class SampleTriplet:
    image: np.ndarray    # H x W x 3, [0, 1]
    heatmap: np.ndarray  # H x W x 1, [0, 1]
    mask: np.ndarray     # H x W, {0, 1}

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.heatmap = np.asarray(self.heatmap, dtype=np.float32)
        if self.heatmap.ndim == 2:
            self.heatmap = self.heatmap[:, :, None]
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.ndim == 3:
            self.mask = self.mask[:, :, 0]
        hw = self.mask.shape
        if self.image.shape[:2] != hw or self.heatmap.shape[:2] != hw:
            raise ConfigError(f"triplet rasters disagree: {self.image.shape}, {self.heatmap.shape}, {hw}")

    @property
    def size(self):
        return self.mask.shape


# ------------------------------------------------------------- augmentation

def _resize(arr, top, left, size, out, mode):
    """Resample the square window [top:top+size, left:left+size] to out x out."""
    centers = (np.arange(out) + 0.5) * size / out - 0.5
    if mode == "nearest":
        idx = np.clip(np.floor(centers + 0.5).astype(int), 0, size - 1)
        return arr[top + idx][:, left + idx]
    lo = np.clip(np.floor(centers).astype(int), 0, size - 1)
    hi = np.clip(lo + 1, 0, size - 1)
    frac = np.clip(centers - lo, 0.0, 1.0)
    a = arr.astype(np.float64)
    rows_lo, rows_hi = a[top + lo], a[top + hi]
    fr = frac.reshape((-1,) + (1,) * (a.ndim - 1))
    rows = rows_lo + fr * (rows_hi - rows_lo)
    c_lo, c_hi = rows[:, left + lo], rows[:, left + hi]
    fc = frac.reshape((1, -1) + (1,) * (a.ndim - 2))
    return (c_lo + fc * (c_hi - c_lo)).astype(arr.dtype)


def apply_transform(triplet, tf):
    """Apply one geometric transform identically to all three rasters."""
    kind = tf[0]
    if kind == "hflip":
        f = lambda a: a[:, ::-1]
    elif kind == "vflip":
        f = lambda a: a[::-1]
    elif kind.startswith("rot"):
        k = int(kind[3:]) // 90
        f = lambda a: np.rot90(a, k, axes=(0, 1))
    elif kind == "crop":
        _, top, left, size = tf
        n = triplet.mask.shape[0]
        return SampleTriplet(_resize(triplet.image, top, left, size, n, "bilinear"),
                             _resize(triplet.heatmap, top, left, size, n, "bilinear"),
                             _resize(triplet.mask, top, left, size, n, "nearest"))
    else:
        raise ValueError(f"unknown transform {kind!r}")
    return SampleTriplet(np.ascontiguousarray(f(triplet.image)),
                         np.ascontiguousarray(f(triplet.heatmap)),
                         np.ascontiguousarray(f(triplet.mask)))


def augment_transforms(size, rng, n_crops=2, scale=(0.7, 0.9)):
    tfs = [("hflip",), ("vflip",), ("rot90",), ("rot180",), ("rot270",)]
    for _ in range(n_crops):
        crop = max(1, int(round(rng.uniform(*scale) * size)))
        top = int(rng.integers(0, size - crop + 1))
        left = int(rng.integers(0, size - crop + 1))
        tfs.append(("crop", top, left, crop))
    return tfs


def augment(triplet, rng):
    """Seven variants: flips, three rotations and two random crops resized back."""
    h, w = triplet.mask.shape
    if h != w:
        raise NonSquare(f"augmentation needs square tiles, got {h}x{w}")
    return [apply_transform(triplet, tf) for tf in augment_transforms(h, rng)]


def expand_with_augmentation(triplets, seed):
    """Originals followed by their seven variants each (8n items)."""
    rng = np.random.default_rng(seed)
    out = []
    for t in triplets:
        out.append(t)
        out.extend(augment(t, rng))
    return out


# ------------------------------------------------------------ scene synthesis

@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    road_count: int = 3
    road_width_px: tuple = (2, 5)
    occluder_count: int = 2
    occluder_radius_px: tuple = (2, 5)
    distractor_count: int = 1
    traj_density: float = 1.5
    traj_noise_px: float = 1.0
    spurious_cluster_count: int = 1
    fog_alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("size must be positive")
        if min(self.road_count, self.occluder_count, self.distractor_count,
               self.spurious_cluster_count) < 0:
            raise ConfigError("counts must be non-negative")
        if self.traj_density < 0 or self.traj_noise_px < 0:
            raise ConfigError("traj_density and traj_noise_px must be non-negative")
        if not 0.0 <= self.fog_alpha <= 1.0:
            raise ConfigError("fog_alpha must lie in [0, 1]")
        for name in ("road_width_px", "occluder_radius_px"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must be a range 0 < lo <= hi")

    def bounds(self):
        span = self.size * PIXEL_DEG
        return GeoBounds(ORIGIN_LON, ORIGIN_LAT, ORIGIN_LON + span, ORIGIN_LAT + span)

    def to_kv(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_kv(cls, pairs):
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in pairs.items():
            if key not in kinds:
                raise ConfigError(f"unknown scene key {key!r}")
            try:
                if key in ("road_width_px", "occluder_radius_px"):
                    kwargs[key] = tuple(float(v) for v in value.split(","))
                elif key in ("traj_density", "traj_noise_px", "fog_alpha"):
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return cls(**kwargs)


def _random_polyline(rng, n):
    """Edge-to-edge polyline with one or two interior bends, in pixel units."""
    def edge_point(side):
        t = rng.uniform(0, n)
        return [(t, 0.0), (t, float(n)), (0.0, t), (float(n), t)][side]

    s0 = int(rng.integers(4))
    s1 = (s0 + int(rng.integers(1, 4))) % 4
    pts = [edge_point(s0)]
    for _ in range(int(rng.integers(1, 3))):
        pts.append((rng.uniform(0.15 * n, 0.85 * n), rng.uniform(0.15 * n, 0.85 * n)))
    pts.append(edge_point(s1))
    return np.array(pts)  # (x, y) = (col, row)


def _segment_distance(px, py, poly):
    d = np.full(px.shape, np.inf)
    for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
        dx, dy = x1 - x0, y1 - y0
        L2 = dx * dx + dy * dy
        t = np.clip(((px - x0) * dx + (py - y0) * dy) / L2, 0, 1) if L2 > 0 else 0.0
        d = np.minimum(d, np.hypot(px - (x0 + t * dx), py - (y0 + t * dy)))
    return d


def _points_along(poly, count, rng):
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = rng.uniform(0, cum[-1], size=count)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[k]) / np.maximum(seg[k], 1e-12)
    p = poly[k] + t[:, None] * (poly[k + 1] - poly[k])
    tangent = (poly[k + 1] - poly[k]) / np.maximum(seg[k], 1e-12)[:, None]
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    return p, normal


def _smooth_noise(rng, n, cells=8):
    coarse = rng.random((cells + 1, cells + 1))
    return _resize(coarse, 0, 0, cells + 1, n, "bilinear")


def synth_scene(spec):
    """Return (SampleTriplet, raw trajectory samples) for one seeded scene."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    rows, cols = np.mgrid[0:n, 0:n]
    px, py = cols + 0.5, rows + 0.5

    # background: soil / vegetation texture
    tone = rng.uniform(0.25, 0.45)
    field = _smooth_noise(rng, n)
    image = np.stack([tone + 0.15 * field, tone + 0.10 + 0.2 * field, tone - 0.05 + 0.1 * field], axis=-1)
    image += rng.normal(0, 0.03, size=image.shape)

    mask = np.zeros((n, n), dtype=bool)
    roads = []
    road_gray = rng.uniform(0.6, 0.75)
    for _ in range(spec.road_count):
        poly = _random_polyline(rng, n)
        width = rng.uniform(*spec.road_width_px)
        band = _segment_distance(px, py, poly) <= width / 2
        mask |= band
        roads.append((poly, width, band))
    image[mask] = road_gray + rng.normal(0, 0.03, size=(int(mask.sum()), 3))

    for _ in range(spec.distractor_count):
        poly = _random_polyline(rng, n)
        d = _segment_distance(px, py, poly)
        band = (d <= 1.5) & ~mask
        rail = road_gray - 0.12 + 0.08 * (((px + py).astype(int) // 2) % 2)
        image[band] = rail[band][:, None] + rng.normal(0, 0.02, size=(int(band.sum()), 3))

    road_pix = np.argwhere(mask)
    for _ in range(spec.occluder_count):
        if len(road_pix) and rng.random() < 0.8:
            cy, cx = road_pix[rng.integers(len(road_pix))] + 0.5
        else:
            cy, cx = rng.uniform(0, n, size=2)
        r = rng.uniform(*spec.occluder_radius_px)
        blob = np.hypot(px - cx, py - cy) <= r
        green = np.array([0.12, 0.32, 0.10]) + rng.normal(0, 0.03, size=(int(blob.sum()), 3))
        image[blob] = green

    image = np.clip(image, 0.0, 1.0)
    image = image * (1.0 - spec.fog_alpha) + spec.fog_alpha

    # trajectories: uneven volume per road, lateral spread within the carriageway
    pts = []
    for poly, width, band in roads:
        volume = rng.lognormal(0.0, 0.6)
        count = int(rng.poisson(spec.traj_density * volume * band.sum()))
        if count == 0:
            continue
        p, normal = _points_along(poly, count, rng)
        lateral = rng.uniform(-width / 2, width / 2, size=count)
        p = p + lateral[:, None] * normal + rng.normal(0, spec.traj_noise_px, size=p.shape)
        pts.append(p)
    off_road = np.argwhere(~mask)
    for _ in range(spec.spurious_cluster_count):
        if not len(off_road):
            break
        cy, cx = off_road[rng.integers(len(off_road))] + 0.5
        count = int(rng.integers(40, 120))
        pts.append(np.array([cx, cy]) + rng.normal(0, 1.5, size=(count, 2)))

    samples = []
    if pts:
        allp = np.concatenate(pts)
        inside = (allp[:, 0] >= 0) & (allp[:, 0] < n) & (allp[:, 1] >= 0) & (allp[:, 1] < n)
        allp = allp[inside]
        lon = ORIGIN_LON + allp[:, 0] * PIXEL_DEG
        lat = ORIGIN_LAT + (n - allp[:, 1]) * PIXEL_DEG
        intervals = (10, 60, 180, 300)
        for k in range(len(allp)):
            samples.append(TrajectorySample(
                vid=f"v{int(rng.integers(0, 200))}",
                lon=float(lon[k]), lat=float(lat[k]),
                t=1500000000 + int(rng.integers(0, 86400)),
                sp=float(np.round(rng.uniform(0, 60), 2)),
                si=int(intervals[rng.integers(4)]),
            ))

    bounds = spec.bounds()
    store = build_store(samples, cell_deg=8 * PIXEL_DEG)
    heat = render_heatmap(store, RasterSpec(bounds, n, n))
    return SampleTriplet(image.astype(np.float32), heat, mask.astype(np.uint8)), samples


def scene_specs(count, base=None, seed=0):
    """``count`` scene specs differing only in their derived seeds."""
    base = SceneSpec() if base is None else base
    return [replace(base, seed=seed * 100003 + i) for i in range(count)]


def make_splits(items, train_frac, seed):
    """Seeded shuffle into ceil(n * train_frac) training items and the rest."""
    items = list(items)
    if not items:
        raise EmptyInput("cannot split an empty collection")
    if not 0.0 < train_frac < 1.0:
        raise ConfigError("train_frac must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(items))
    k = math.ceil(len(items) * train_frac)
    return [items[i] for i in order[:k]], [items[i] for i in order[k:]]


def to_batch(triplets):
    """Stack triplets into N x 3 x H x W image, N x 1 x H x W heat-map and mask arrays."""
    image = np.stack([t.image.transpose(2, 0, 1) for t in triplets]).astype(np.float32)
    heat = np.stack([t.heatmap.transpose(2, 0, 1) for t in triplets]).astype(np.float32)
    mask = np.stack([t.mask[None] for t in triplets]).astype(np.float32)
    return image, heat, mask


# ------------------------------------------------------------------- storage

def save_triplet(triplet, directory, tid, samples=None):
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, tid)
    write_rft(triplet.image, base + ".img.rft")
    write_rft(triplet.heatmap, base + ".trj.rft")
    write_pgm(triplet.mask, base + ".msk.pgm")
    if samples is not None:
        write_samples(samples, base + ".csv")


def load_triplet(directory, tid):
    base = os.path.join(directory, tid)
    return SampleTriplet(read_rft(base + ".img.rft"), read_rft(base + ".trj.rft"), read_pgm(base + ".msk.pgm"))


def list_triplets(directory):
    return sorted(f[:-len(".img.rft")] for f in os.listdir(directory) if f.endswith(".img.rft"))


def load_dataset(directory):
    return [load_triplet(directory, tid) for tid in list_triplets(directory)]

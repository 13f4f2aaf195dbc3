"""Trajectory heat-maps: project, log-normalise, smooth."""
from dataclasses import dataclass

import numpy as np

from .errors import SampleOutOfBounds, ShapeMismatch
from .trajectory import GeoBounds, query_bbox

GAUSS3 = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0


@dataclass(frozen=True)
class RasterSpec:
    bounds: GeoBounds
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ShapeMismatch(f"raster size must be positive, got {self.height}x{self.width}")


def pixel_of(lon, lat, spec):
    """Row/col arrays for lon/lat arrays; north-up, linear in degrees, clamped."""
    b = spec.bounds
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    col = np.floor((lon - b.lon_l) / (b.lon_u - b.lon_l) * spec.width).astype(np.int64)
    row = np.floor((b.lat_u - lat) / (b.lat_u - b.lat_l) * spec.height).astype(np.int64)
    return np.clip(row, 0, spec.height - 1), np.clip(col, 0, spec.width - 1)


def project_counts(samples, spec):
    """Per-pixel sample counts as an (H, W, 1) float32 tile."""
    b = spec.bounds
    lon = np.array([s.lon for s in samples], dtype=np.float64)
    lat = np.array([s.lat for s in samples], dtype=np.float64)
    outside = (lon < b.lon_l) | (lon > b.lon_u) | (lat < b.lat_l) | (lat > b.lat_u)
    if outside.any():
        raise SampleOutOfBounds(f"{int(outside.sum())} samples fall outside {b}")
    row, col = pixel_of(lon, lat, spec)
    counts = np.zeros(spec.height * spec.width, dtype=np.float64)
    np.add.at(counts, row * spec.width + col, 1.0)
    return counts.reshape(spec.height, spec.width, 1).astype(np.float32)


def log_normalize(counts):
    """ln(1 + c) / ln(1 + c_max); an all-zero tile stays zero."""
    c = np.asarray(counts, dtype=np.float64)
    cmax = c.max() if c.size else 0.0
    if cmax <= 0:
        return np.zeros(c.shape, dtype=np.float32)
    return (np.log1p(c) / np.log1p(cmax)).astype(np.float32)


def gaussian_smooth3(tile):
    """Binomial 3x3 smoothing with replicate padding."""
    t = np.asarray(tile)
    squeeze = t.ndim == 3
    if squeeze:
        if t.shape[2] != 1:
            raise ShapeMismatch(f"gaussian_smooth3 needs one channel, got {t.shape[2]}")
        t = t[:, :, 0]
    h, w = t.shape
    p = np.pad(t.astype(np.float64), 1, mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            out += GAUSS3[i, j] * p[i:i + h, j:j + w]
    out = out.astype(np.float32)
    return out[:, :, None] if squeeze else out


def render_heatmap(store, spec):
    samples = query_bbox(store, spec.bounds)
    return gaussian_smooth3(log_normalize(project_counts(samples, spec)))

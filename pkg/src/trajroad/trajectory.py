"""GPS trajectory samples: CSV parsing and a uniform-grid bounding-box index."""
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBounds, InvalidCellSize, MalformedRow, RangeError

HEADER = "vid,lon,lat,t,sp,si"


@dataclass(frozen=True)
class TrajectorySample:
    vid: str
    lon: float
    lat: float
    t: int
    sp: float
    si: int


@dataclass(frozen=True)
class GeoBounds:
    lon_l: float
    lat_l: float
    lon_u: float
    lat_u: float

    def __post_init__(self):
        if not (self.lon_l < self.lon_u and self.lat_l < self.lat_u):
            raise InvalidBounds(f"empty or inverted bounds {self}")

    def contains(self, lon, lat):
        """Half-open membership, so adjacent tiles never share a sample."""
        return self.lon_l <= lon < self.lon_u and self.lat_l <= lat < self.lat_u

    @classmethod
    def parse(cls, text):
        parts = text.split(",")
        if len(parts) != 4:
            raise InvalidBounds(f"expected lonl,latl,lonu,latu, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            raise InvalidBounds(str(exc)) from exc


def _parse_row(fields, lineno):
    if len(fields) != 6:
        raise MalformedRow(lineno, f"expected 6 fields, got {len(fields)}")
    vid, lon, lat, t, sp, si = fields
    try:
        lon, lat, sp = float(lon), float(lat), float(sp)
        t, si = int(t), int(si)
    except ValueError as exc:
        raise MalformedRow(lineno, str(exc)) from exc
    if not all(map(math.isfinite, (lon, lat, sp))):
        raise MalformedRow(lineno, "non-finite number")
    if not -180.0 <= lon <= 180.0:
        raise RangeError(lineno, f"lon {lon}")
    if not -90.0 <= lat <= 90.0:
        raise RangeError(lineno, f"lat {lat}")
    if si <= 0:
        raise RangeError(lineno, f"si {si}")
    if sp < 0:
        raise RangeError(lineno, f"sp {sp}")
    return TrajectorySample(vid, lon, lat, t, sp, si)


def parse_samples(data):
    """Parse trajectory CSV (bytes or str).  An empty stream yields no samples."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if not text or lines == [""]:
        return []
    header = lines[0].rstrip("\r")
    if header != HEADER:
        raise MalformedRow(1, f"header must be {HEADER!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], 2):
        line = line.rstrip("\r")
        if not line:
            if lineno == len(lines):
                break
            raise MalformedRow(lineno, "empty row")
        samples.append(_parse_row(line.split(","), lineno))
    return samples


def read_samples(path):
    with open(path, "rb") as fh:
        return parse_samples(fh.read())


def _dec(x):
    # shortest round-tripping digits, never exponent notation
    return np.format_float_positional(x, unique=True, trim="0")


def serialize_samples(samples):
    rows = [HEADER]
    rows += [f"{s.vid},{_dec(s.lon)},{_dec(s.lat)},{s.t},{_dec(s.sp)},{s.si}" for s in samples]
    return "\n".join(rows) + "\n"


def write_samples(samples, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_samples(samples))


class TrajectoryStore:
    """Immutable sample collection indexed by a uniform lon/lat grid."""

    def __init__(self, samples, cell_deg):
        if not cell_deg > 0:
            raise InvalidCellSize(f"cell_deg must be positive, got {cell_deg}")
        self.samples = tuple(samples)
        self.cell_deg = float(cell_deg)
        cells = defaultdict(list)
        for i, s in enumerate(self.samples):
            cells[self.cell_of(s.lon, s.lat)].append(i)
        self.cells = {k: tuple(v) for k, v in cells.items()}

    def cell_of(self, lon, lat):
        return (math.floor(lon / self.cell_deg), math.floor(lat / self.cell_deg))

    def __len__(self):
        return len(self.samples)

    def indexed_count(self):
        return sum(len(v) for v in self.cells.values())

    def query(self, bounds):
        cx0, cy0 = self.cell_of(bounds.lon_l, bounds.lat_l)
        cx1, cy1 = self.cell_of(bounds.lon_u, bounds.lat_u)
        n_cells = (cx1 - cx0 + 1) * (cy1 - cy0 + 1)
        hits = []
        if n_cells > len(self.cells):
            candidates = (i for key, idx in self.cells.items()
                          if cx0 <= key[0] <= cx1 and cy0 <= key[1] <= cy1 for i in idx)
        else:
            candidates = (i for cx in range(cx0, cx1 + 1) for cy in range(cy0, cy1 + 1)
                          for i in self.cells.get((cx, cy), ()))
        for i in candidates:
            s = self.samples[i]
            if bounds.contains(s.lon, s.lat):
                hits.append(i)
        hits.sort()
        return [self.samples[i] for i in hits]


def build_store(samples, cell_deg):
    return TrajectoryStore(samples, cell_deg)


def query_bbox(store, bounds):
    """Samples with lon_l <= lon < lon_u and lat_l <= lat < lat_u, in input order."""
    return store.query(bounds)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajroad.errors import InvalidBounds, InvalidCellSize, MalformedRow, RangeError
from trajroad.trajectory import (
    HEADER,
    GeoBounds,
    TrajectorySample,
    build_store,
    parse_samples,
    query_bbox,
    serialize_samples,
)


def random_samples(rng, n, lon=(116.0, 116.1), lat=(39.9, 40.0)):
    return [
        TrajectorySample(
            vid=f"v{rng.integers(1000)}",
            lon=float(rng.uniform(*lon)),
            lat=float(rng.uniform(*lat)),
            t=int(rng.integers(1_400_000_000, 1_600_000_000)),
            sp=float(rng.uniform(0, 120)),
            si=int(rng.choice([10, 60, 180, 300])),
        )
        for _ in range(n)
    ]


def test_header_only_is_empty():
    assert parse_samples(HEADER + "\n") == []
    assert parse_samples(b"") == []


def test_single_row_maps_fields():
    (s,) = parse_samples(f"{HEADER}\nv1,116.30,39.98,1500000000,12.5,60\n".encode())
    assert s == TrajectorySample("v1", 116.30, 39.98, 1500000000, 12.5, 60)


def test_crlf_accepted():
    text = f"{HEADER}\r\nv1,116.30,39.98,1500000000,12.5,60\r\nv2,116.31,39.97,1500000001,0,10\r\n"
    assert [s.vid for s in parse_samples(text)] == ["v1", "v2"]


@pytest.mark.parametrize("row,line", [
    ("v1,116.3,39.9,15,1.0", 2),
    ("v1,116.3,abc,15,1.0,60", 2),
    ("v1,116.3,39.9,1.5,1.0,60", 2),
])
def test_malformed_rows(row, line):
    with pytest.raises(MalformedRow) as exc:
        parse_samples(f"{HEADER}\n{row}\n")
    assert exc.value.line == line


def test_range_errors_report_line():
    text = f"{HEADER}\nv1,116.3,39.9,15,1.0,60\nv2,181.0,39.9,15,1.0,60\n"
    with pytest.raises(RangeError) as exc:
        parse_samples(text)
    assert exc.value.line == 3
    with pytest.raises(RangeError):
        parse_samples(f"{HEADER}\nv1,116.3,-90.5,15,1.0,60\n")


def test_round_trip_1000_rows():
    samples = random_samples(np.random.default_rng(1), 1000)
    assert parse_samples(serialize_samples(samples).encode()) == samples


coords = st.tuples(st.floats(-180, 180), st.floats(-90, 90), st.floats(0, 1e4))


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, max_size=20))
def test_round_trip_property(rows):
    samples = [TrajectorySample(f"id{i}", lon, lat, i, sp, 1 + i) for i, (lon, lat, sp) in enumerate(rows)]
    assert parse_samples(serialize_samples(samples)) == samples


def test_build_store_invalid_cell():
    with pytest.raises(InvalidCellSize):
        build_store([], 0)
    with pytest.raises(InvalidCellSize):
        build_store([], -1.0)


def test_empty_store():
    assert build_store([], 0.01).indexed_count() == 0


def test_colocated_samples_share_a_cell():
    s = TrajectorySample("v", 116.3, 39.9, 0, 1.0, 60)
    store = build_store([s, s, s], 0.01)
    assert len(store.cells) == 1 and store.indexed_count() == 3


@pytest.mark.parametrize("cell_deg", [1e-4, 3e-3, 0.05, 10.0])
def test_store_is_count_preserving(cell_deg):
    samples = random_samples(np.random.default_rng(2), 10_000)
    store = build_store(samples, cell_deg)
    assert store.indexed_count() == 10_000
    seen = sorted(i for idx in store.cells.values() for i in idx)
    assert seen == list(range(10_000))
    for key, idx in store.cells.items():
        for i in idx[:5]:
            assert store.cell_of(samples[i].lon, samples[i].lat) == key


def test_disjoint_query_is_empty():
    store = build_store(random_samples(np.random.default_rng(3), 100), 0.01)
    assert query_bbox(store, GeoBounds(0.0, 0.0, 1.0, 1.0)) == []


def test_half_open_upper_edge():
    on_edge = TrajectorySample("a", 116.5, 39.95, 0, 0.0, 1)
    on_lower = TrajectorySample("b", 116.4, 39.95, 0, 0.0, 1)
    store = build_store([on_edge, on_lower], 0.05)
    assert query_bbox(store, GeoBounds(116.4, 39.9, 116.5, 40.0)) == [on_lower]


def test_adjacent_tiles_partition_samples():
    samples = random_samples(np.random.default_rng(4), 2000, lon=(0, 1), lat=(0, 1))
    samples.append(TrajectorySample("edge", 0.5, 0.5, 0, 0.0, 1))
    store = build_store(samples, 0.07)
    total = 0
    for i in range(2):
        for j in range(2):
            total += len(query_bbox(store, GeoBounds(i * 0.5, j * 0.5, i * 0.5 + 0.5, j * 0.5 + 0.5)))
    assert total == len(samples)


def test_query_matches_linear_scan():
    rng = np.random.default_rng(5)
    samples = random_samples(rng, 5000)
    samples += samples[:50]  # duplicates count with multiplicity
    store = build_store(samples, 0.004)
    for _ in range(100):
        lon = np.sort(rng.uniform(115.98, 116.12, 2))
        lat = np.sort(rng.uniform(39.88, 40.02, 2))
        b = GeoBounds(lon[0], lat[0], lon[1], lat[1])
        expect = [s for s in samples if b.lon_l <= s.lon < b.lon_u and b.lat_l <= s.lat < b.lat_u]
        assert query_bbox(store, b) == expect


def test_invalid_bounds():
    with pytest.raises(InvalidBounds):
        GeoBounds(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(InvalidBounds):
        GeoBounds.parse("1,2,3")

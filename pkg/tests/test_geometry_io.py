import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pcwm import geometry_io as g
from pcwm.errors import (
    CountMismatch,
    DataError,
    DegenerateCloud,
    IndexOutOfRange,
    MalformedHeader,
    MalformedRecord,
    NonFiniteCoordinate,
    UnsupportedEncoding,
    ZeroAreaMesh,
)

FIXTURES = Path(__file__).parent / "fixtures"

TRIANGLE_OFF = b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
TRIANGLE_PLY = b"""ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
3 0 1 2
"""

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
clouds = hnp.arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)), elements=finite)


def test_parse_off_minimal():
    mesh = g.parse_off(TRIANGLE_OFF)
    assert mesh.vertices.shape == (3, 3)
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_parse_off_comments_and_quads_are_fan_triangulated():
    raw = b"# a comment\nOFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0 # trailing\n0 1 0\n4 0 1 2 3\n"
    mesh = g.parse_off(raw)
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_parse_off_header_glued_to_counts():
    raw = b"OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
    assert len(g.parse_off(raw).faces) == 1


def test_parse_off_without_keyword():
    assert len(g.parse_off(b"3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").vertices) == 3


@pytest.mark.parametrize("raw, error", [
    (b"OFF\n3 1 0\n0 0 0\n1 0 0\n3 0 1 2\n", CountMismatch),
    (b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n", IndexOutOfRange),
    (b"OFF\n3 1 0\n0 0 0\n1 0 nan\n0 1 0\n3 0 1 2\n", NonFiniteCoordinate),
    (b"OFF\nthree 1 0\n", MalformedHeader),
    (b"", MalformedHeader),
    (b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n5 0 1 2\n", MalformedRecord),
])
def test_parse_off_errors(raw, error):
    with pytest.raises(error):
        g.parse_off(raw)


def test_modelnet_style_fixture_counts_match_header():
    raw = (FIXTURES / "chair_0001.off").read_bytes()
    header = raw.split(b"\n", 1)[0].decode()
    n_v, n_f = (int(t) for t in header[3:].split()[:2])
    assert (n_v, n_f) == (48, 36)  # pinned from the fixture header
    mesh = g.parse_off(raw)
    assert len(mesh.vertices) == n_v
    # Every face in the fixture is a quad, so fan triangulation doubles them.
    assert len(mesh.faces) == 2 * n_f


def test_parse_ply_minimal():
    mesh = g.parse_ply(TRIANGLE_PLY)
    assert mesh.vertices.shape == (3, 3)
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_parse_ply_binary_rejected():
    raw = TRIANGLE_PLY.replace(b"ascii", b"binary_little_endian")
    with pytest.raises(UnsupportedEncoding):
        g.parse_ply(raw)


def test_parse_ply_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        g.parse_ply(TRIANGLE_PLY.replace(b"3 0 1 2", b"3 0 1 3"))


def test_parse_ply_missing_end_header():
    with pytest.raises(MalformedHeader):
        g.parse_ply(b"ply\nformat ascii 1.0\nelement vertex 0\n")


def test_bunny_style_fixture_vertex_count_matches_header():
    raw = (FIXTURES / "bunny_style.ply").read_bytes()
    declared = next(int(line.split()[2]) for line in raw.decode().splitlines()
                    if line.startswith("element vertex"))
    assert declared == 146  # pinned from the fixture header
    mesh = g.parse_ply(raw)
    assert len(mesh.vertices) == declared


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_parsers_only_raise_typed_errors(raw):
    for parse in (g.parse_off, g.parse_ply):
        try:
            parse(raw)
        except DataError:
            pass


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([b"OFF", b"ply", b"3 1 0", b"0 0 0", b"1 0 0", b"3 0 1 2",
                                 b"format ascii 1.0", b"element vertex 3", b"property float x",
                                 b"end_header", b"#", b"nan", b"-1", b"4 0 1 2 3"]), max_size=12))
def test_parsers_total_on_structured_garbage(chunks):
    raw = b"\n".join(chunks)
    for parse in (g.parse_off, g.parse_ply):
        try:
            parse(raw)
        except DataError:
            pass


def test_load_mesh_dispatch(tmp_path):
    (tmp_path / "t.off").write_bytes(TRIANGLE_OFF)
    (tmp_path / "t.ply").write_bytes(TRIANGLE_PLY)
    assert len(g.load_mesh(tmp_path / "t.off").faces) == 1
    assert len(g.load_mesh(tmp_path / "t.ply").faces) == 1
    (tmp_path / "t.stl").write_bytes(b"")
    with pytest.raises(UnsupportedEncoding):
        g.load_mesh(tmp_path / "t.stl")


# -- sampling ------------------------------------------------------------------

def test_samples_lie_on_the_triangle():
    mesh = g.parse_off(TRIANGLE_OFF)
    pts = g.sample_surface(mesh, 100, seed=5)
    # Barycentric coordinates w.r.t. A=(0,0,0), B=(1,0,0), C=(0,1,0).
    b, c = pts[:, 0], pts[:, 1]
    a = 1.0 - b - c
    assert np.all(pts[:, 2] == 0.0)
    assert np.all(np.stack([a, b, c]) >= -1e-12)
    assert np.allclose(a + b + c, 1.0, atol=1e-9)


def test_area_weighting_binomial_bound():
    # Two disjoint triangles with areas 2 and 0.5 (ratio 4:1).
    v = [(0, 0, 0), (2, 0, 0), (0, 2, 0), (5, 0, 0), (6, 0, 0), (5, 1, 0)]
    mesh = g.TriangleMesh(np.array(v, float), np.array([[0, 1, 2], [3, 4, 5]]))
    n = 10_000
    pts = g.sample_surface(mesh, n, seed=1)
    frac = np.mean(pts[:, 0] < 4.0)
    sigma = math.sqrt(0.8 * 0.2 / n)
    assert abs(frac - 0.8) <= 3 * sigma


def test_zero_area_mesh():
    v = np.array([(0, 0, 0), (1, 1, 1), (2, 2, 2)], float)
    with pytest.raises(ZeroAreaMesh):
        g.sample_surface(g.TriangleMesh(v, np.array([[0, 1, 2]])), 10, seed=0)


def test_sampling_is_deterministic_and_stream_dependent():
    mesh = g.parse_off((FIXTURES / "chair_0001.off").read_bytes())
    a = g.sample_surface(mesh, 256, 7, "x")
    b = g.sample_surface(mesh, 256, 7, "x")
    c = g.sample_surface(mesh, 256, 7, "y")
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


# -- normalization ----------------------------------------------------------------

def test_normalize_two_points():
    cloud, rec = g.normalize([(2, 0, 0), (0, 2, 0)])
    s = 1 / math.sqrt(2)
    assert np.allclose(cloud, [(s, -s, 0), (-s, s, 0)], atol=1e-15)
    assert np.allclose(rec.centroid, (1, 1, 0))
    assert math.isclose(rec.scale, math.sqrt(2))


def test_normalize_degenerate():
    with pytest.raises(DegenerateCloud):
        g.normalize([(5, 5, 5)] * 4)


@settings(max_examples=100, deadline=None)
@given(clouds)
def test_normalize_postconditions_idempotence_and_inverse(pts):
    if np.ptp(pts, axis=0).max() < 1e-3:
        return
    out, rec = g.normalize(pts)
    assert np.abs(out.mean(axis=0)).max() <= 1e-12 * len(pts)
    assert abs(np.linalg.norm(out, axis=1).max() - 1.0) <= 1e-12
    again, rec2 = g.normalize(out)
    assert np.abs(rec2.centroid).max() <= 1e-12 and abs(rec2.scale - 1.0) <= 1e-12
    assert np.allclose(again, out, atol=1e-12)
    back = rec.invert(out)
    assert np.abs(back - pts).max() <= 1e-9 * max(1.0, np.abs(pts).max())


@settings(max_examples=50, deadline=None)
@given(clouds, st.randoms())
def test_normalize_is_permutation_equivariant(pts, rnd):
    if np.ptp(pts, axis=0).max() < 1e-3:
        return
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    a, _ = g.normalize(pts)
    b, _ = g.normalize(pts[perm])
    assert a[perm].tobytes() == b.tobytes()


# -- cloud files ---------------------------------------------------------------

def test_pcb_round_trip_is_bit_exact(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    g.write_cloud(pts, tmp_path / "c.pcb")
    raw = (tmp_path / "c.pcb").read_bytes()
    assert raw[:4] == b"PCB1" and int.from_bytes(raw[4:8], "little") == 50
    assert g.read_cloud(tmp_path / "c.pcb").tobytes() == pts.tobytes()


def test_xyz_round_trip_within_printed_precision(tmp_path):
    pts = np.random.default_rng(1).normal(size=(30, 3))
    g.write_cloud(pts, tmp_path / "c.xyz")
    back = g.read_cloud(tmp_path / "c.xyz")
    assert np.allclose(back, pts, rtol=1e-8, atol=0)


def test_xyz_line():
    assert g.decode_xyz("0.1 0.2 0.3\n").tolist() == [[0.1, 0.2, 0.3]]


def test_truncated_pcb(tmp_path):
    raw = g.encode_pcb(np.zeros((4, 3)))
    (tmp_path / "t.pcb").write_bytes(raw[:-5])
    with pytest.raises(MalformedRecord):
        g.read_cloud(tmp_path / "t.pcb")


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        g.read_cloud(tmp_path / "absent.pcb")

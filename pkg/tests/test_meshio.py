import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spinmesh import meshio as mio
from spinmesh.flows import CurvatureMap
from spinmesh.synth import icosahedron

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(P=arrays(np.float64, (12, 3), elements=finite), fmt=st.sampled_from(["obj", "off", "ply"]),
       binary=st.booleans())
def test_roundtrip_exact(tmp_path, P, fmt, binary):
    _, F = icosahedron()
    path = tmp_path / f"m.{fmt}"
    mio.write_mesh(path, P, F, binary=binary)
    md = mio.read_mesh(path)
    assert np.array_equal(md.positions, P)
    assert np.array_equal(md.faces, F)


@pytest.mark.parametrize("binary", [False, True])
def test_ply_face_properties(tmp_path, rng, binary):
    V, F = icosahedron()
    props = {"h_star": rng.normal(size=len(F)), "A_star": rng.random(len(F)) + 0.1}
    mio.write_ply(tmp_path / "m.ply", V, F, props, binary=binary)
    md = mio.read_ply(tmp_path / "m.ply")
    assert set(md.face_properties) == set(props)
    for k, v in props.items():
        assert np.array_equal(md.face_properties[k], v)
    with pytest.raises(ValueError):
        mio.write_ply(tmp_path / "bad.ply", V, F, {"x": np.zeros(3)})


def test_ply_big_endian(tmp_path):
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    F = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    head = (b"ply\nformat binary_big_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
            b"property float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n")
    body = V.astype(">f4").tobytes()
    for f in F:
        body += np.uint8(3).tobytes() + f.astype(">i4").tobytes()
    (tmp_path / "be.ply").write_bytes(head + body)
    md = mio.read_ply(tmp_path / "be.ply")
    assert np.array_equal(md.positions, V) and np.array_equal(md.faces, F)


def test_obj_slashes_and_negative_indices(tmp_path):
    (tmp_path / "a.obj").write_text(
        "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nvn 0 0 1\n"
        "f 1/1/1 3//1 2\nf -4 -3 -1\nf 1 4 3\nf 2/5 3/6 4/7\n")
    md = mio.read_obj(tmp_path / "a.obj")
    assert md.faces.tolist() == [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]


def test_off_ignores_face_colours(tmp_path):
    (tmp_path / "a.off").write_text("OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
                                    "3 0 2 1 255 0 0\n3 0 1 3\n3 0 3 2\n3 1 2 3\n")
    assert mio.read_off(tmp_path / "a.off").faces.shape == (4, 3)


@pytest.mark.parametrize("name,text", [
    ("quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"),
    ("range.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n"),
    ("junk.obj", "v 0 zero 0\n"),
    ("short.off", "OFF\n4 4 6\n0 0 0\n1 0 0\n"),
    ("nohead.off", "4 4 6\n"),
    ("quad.off", "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"),
    ("trunc.ply", "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                  "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n"),
    ("noxyz.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float u\nelement face 0\n"
                  "property list uchar int vertex_indices\nend_header\n0\n"),
    ("magic.ply", "plx\n"),
    ("mesh.stl", "solid\n"),
])
def test_malformed_files_rejected(tmp_path, name, text):
    (tmp_path / name).write_text(text)
    with pytest.raises(mio.MeshFormatError):
        mio.read_mesh(tmp_path / name)


def test_truncated_binary_ply(tmp_path):
    V, F = icosahedron()
    mio.write_ply(tmp_path / "m.ply", V, F, binary=True)
    data = (tmp_path / "m.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-10])
    with pytest.raises(mio.MeshFormatError, match="truncated"):
        mio.read_ply(tmp_path / "t.ply")


def test_missing_file(tmp_path):
    with pytest.raises(mio.MeshFormatError):
        mio.read_mesh(tmp_path / "none.obj")


def test_sidecar_roundtrip_lossless(tmp_path, bumpy):
    cm = CurvatureMap.from_net(bumpy, "bumpy")
    mio.write_sidecar(tmp_path / "c.json", cm)
    back = mio.read_sidecar(tmp_path / "c.json")
    assert np.array_equal(back.h_star, cm.h_star)
    assert np.array_equal(back.A_star, cm.A_star)
    assert back.total_area == cm.total_area and back.provenance == "bumpy"


def _doc(**over):
    d = {"format_version": 1, "face_count": 2, "total_area": 2.0, "source_id": "s",
         "h_star": [0.1, 0.2], "A_star": [1.0, 1.0]}
    d.update(over)
    return d


@pytest.mark.parametrize("doc", [
    [1, 2], _doc(format_version=2), _doc(face_count=0), _doc(h_star=[0.1]), _doc(A_star=[1.0, -1.0]),
    _doc(h_star=["a", "b"]), _doc(A_star=[1.0, float("nan")]),
    {k: v for k, v in _doc().items() if k != "A_star"},
])
def test_sidecar_validation(doc):
    with pytest.raises(mio.SidecarError):
        mio.sidecar_from_dict(doc)


def test_sidecar_valid_dict():
    cm = mio.sidecar_from_dict(_doc())
    assert cm.face_count == 2


def test_sidecar_malformed_json(tmp_path):
    cm = CurvatureMap(np.zeros(2), np.ones(2), 2.0, 2)
    mio.write_sidecar(tmp_path / "c.json", cm)
    text = (tmp_path / "c.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(mio.SidecarError, match="malformed"):
        mio.read_sidecar(tmp_path / "t.json")
    assert json.loads(text)["format_version"] == 1

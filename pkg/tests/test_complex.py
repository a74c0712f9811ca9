import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodgelab.complex import (
    MAX_ICOSPHERE_LEVEL,
    boundary_matrix,
    circumcenters,
    complex_from_dict,
    complex_to_dict,
    euler_characteristic,
    generate_flat_torus,
    generate_icosphere,
    is_well_centered,
    load_complex,
    save_complex,
    simplex_volumes,
    validate,
)


def test_ring_counts():
    c = generate_flat_torus(1, 8)
    assert c.counts == (8, 8)
    assert math.isclose(c.metadata.volume, 2 * np.pi)
    assert euler_characteristic(c) == 0


def test_torus2_counts():
    c = generate_flat_torus(2, 4)
    assert c.counts == (16, 48, 32)
    assert euler_characteristic(c) == 0


def test_torus3_counts():
    # Freudenthal split: 6 tets and 7 edges per cube, faces from chi = 0
    c = generate_flat_torus(3, 4)
    assert c.counts == (64, 448, 768, 384)
    assert euler_characteristic(c) == 0


@pytest.mark.parametrize("level, nv", [(0, 12), (1, 42), (3, 642)])
def test_icosphere_vertex_count(level, nv):
    c = generate_icosphere(level)
    assert c.num_vertices == nv == 10 * 4**level + 2
    assert euler_characteristic(c) == 2
    assert c.metadata.curvature_bound == 1


def test_icosahedron():
    assert generate_icosphere(0).counts == (12, 30, 20)


def test_icosphere_area_level5():
    c = generate_icosphere(5)
    assert abs(c.metadata.volume - 4 * np.pi) < 1e-3 * 4 * np.pi
    assert np.allclose(np.linalg.norm(c.vertices, axis=1), 1.0)


@pytest.mark.parametrize("dim, res", [(1, 5), (2, 6), (2, 5), (3, 3)])
def test_torus_volume_matches_simplices(dim, res):
    c = generate_flat_torus(dim, res, period=3.0)
    vol = simplex_volumes(c.local_points(dim)).sum()
    assert abs(vol - 3.0**dim) <= 1e-12 * 3.0**dim
    assert c.metadata.volume == 3.0**dim
    assert c.metadata.curvature_bound == 0


def test_generator_errors():
    with pytest.raises(ValueError):
        generate_flat_torus(2, 2)
    with pytest.raises(ValueError):
        generate_flat_torus(4, 8)
    with pytest.raises(ValueError):
        generate_flat_torus(2, 5, split="zigzag")
    with pytest.raises(ValueError):
        generate_icosphere(MAX_ICOSPHERE_LEVEL + 1)
    with pytest.raises(ValueError):
        generate_icosphere(-1)


def test_deterministic_construction():
    a, b = generate_flat_torus(3, 5), generate_flat_torus(3, 5)
    assert np.array_equal(a.vertices, b.vertices)
    for p in range(4):
        assert np.array_equal(a.simplices[p], b.simplices[p])
        assert np.array_equal(a.orientation[p], b.orientation[p])


def test_ring_boundary_pattern(ring16):
    b = boundary_matrix(ring16, 1).matrix.toarray()
    assert b.shape == (16, 16)
    assert np.all(np.sort(b, axis=0)[[0, -1]] == np.array([[-1], [1]]))
    assert np.all((b != 0).sum(axis=0) == 2)


def test_single_triangle_boundary():
    doc = {
        "dim": 2,
        "metadata": {"name": "triangle", "volume": 0.5, "diameter": 1.5, "curvature_bound": 0},
        "vertices": [[0, 0], [1, 0], [0, 1]],
        "simplices": {"1": [[0, 1], [1, 2], [2, 0]], "2": [[0, 1, 2]]},
    }
    c = complex_from_dict(doc)
    # edge (2,0) is stored sorted with a negative sign
    assert c.orientation[1].tolist() == [1, 1, -1]
    assert c.simplices[1][2].tolist() == [0, 2]
    assert boundary_matrix(c, 2).matrix.toarray()[:, 0].tolist() == [1, 1, 1]


@pytest.mark.parametrize("make", [
    lambda: generate_flat_torus(1, 7),
    lambda: generate_flat_torus(2, 6),
    lambda: generate_flat_torus(2, 7),
    lambda: generate_flat_torus(3, 4),
    lambda: generate_icosphere(2),
])
def test_dd_zero_exact(make):
    c = make()
    for p in range(1, c.dim):
        prod = boundary_matrix(c, p).matrix @ boundary_matrix(c, p + 1).matrix
        assert prod.dtype.kind == "i"
        assert prod.count_nonzero() == 0


def test_boundary_degree_range(torus2):
    with pytest.raises(ValueError):
        boundary_matrix(torus2, 0)
    with pytest.raises(ValueError):
        boundary_matrix(torus2, 3)


def test_validate_good_meshes(torus2, sphere2):
    for c in (torus2, sphere2):
        rep = validate(c)
        assert rep.passed and rep.dd_zero and rep.closed
        assert rep.violations == ()
    assert validate(sphere2).well_centered


def test_validate_flipped_triangle(torus2):
    orient = list(torus2.orientation)
    top = orient[2].copy()
    top[5] = -top[5]
    orient[2] = top
    bad = dataclasses.replace(torus2, orientation=tuple(orient), _cache={})
    rep = validate(bad)
    assert not rep.passed
    assert not rep.dd_zero
    assert any(v.degree == 2 for v in rep.violations)


def test_validate_reports_open_mesh():
    doc = {
        "dim": 2,
        "metadata": {"name": "triangle", "volume": 0.5, "diameter": 1.5, "curvature_bound": 0},
        "vertices": [[0, 0], [1, 0], [0, 1]],
        "simplices": {"1": [[0, 1], [1, 2], [2, 0]], "2": [[0, 1, 2]]},
    }
    rep = validate(complex_from_dict(doc))
    assert not rep.passed and not rep.closed
    assert json.dumps(rep.to_dict())


def test_well_centered_flags():
    assert is_well_centered(generate_flat_torus(2, 8))[0]
    assert not is_well_centered(generate_flat_torus(2, 7))[0]  # right triangles
    assert not is_well_centered(generate_flat_torus(3, 4))[0]


def test_circumcenter_equidistant(rng):
    pts = rng.standard_normal((20, 4, 3))
    centers, bary = circumcenters(pts)
    d = np.linalg.norm(pts - centers[:, None, :], axis=2)
    assert np.allclose(d, d[:, :1])
    assert np.allclose(bary.sum(axis=1), 1.0)


def test_roundtrip(tmp_path, torus3, sphere2):
    for c in (torus3, sphere2):
        path = tmp_path / "mesh.json"
        save_complex(c, path)
        back = load_complex(path)
        assert back.metadata == c.metadata
        assert np.array_equal(back.vertices, c.vertices)
        for p in range(c.dim + 1):
            assert np.array_equal(back.simplices[p], c.simplices[p])
            assert np.array_equal(back.orientation[p], c.orientation[p])
        doc = json.loads(path.read_text())
        assert set(doc) == {"dim", "metadata", "vertices", "simplices"}
        assert sorted(doc["simplices"]) == [str(p) for p in range(1, c.dim + 1)]


def test_to_dict_roundtrip_keeps_orientation(torus2):
    back = complex_from_dict(complex_to_dict(torus2))
    assert np.array_equal(back.orientation[2], torus2.orientation[2])


@settings(max_examples=15, deadline=None)
@given(dim=st.integers(1, 3), res=st.integers(3, 6))
def test_chain_complex_property(dim, res):
    c = generate_flat_torus(dim, res)
    assert euler_characteristic(c) == 0
    for p in range(1, dim):
        assert (boundary_matrix(c, p).matrix @ boundary_matrix(c, p + 1).matrix).count_nonzero() == 0
    # each codimension-1 face bounds exactly two top simplices
    top = abs(boundary_matrix(c, dim).matrix)
    assert np.all(np.asarray(top.sum(axis=1)).ravel() == 2)

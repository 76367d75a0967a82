import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softplan import meshes
from softplan.losses import embed_points, random_material_points
from softplan.tetmesh import (WEIGHT_QUANTUM, DisconnectedMeshError, MeshError, TetMesh,
                              barycentric, geodesic, geodesic_table, inside_mask, load_mesh,
                              locate_tet, locate_tets, save_mesh)

from .oracles import floyd_warshall, point_in_tet, random_polycube

UNIT_TET = ([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def chain3():
    """Three tets in a strip; 0-1 and 1-2 share faces, 0-2 only an edge."""
    pts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1], [1.5, 0.2, 1.8]]
    return TetMesh.from_arrays(pts, [[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5]])


def test_single_tet_basics():
    m = TetMesh.from_arrays(*UNIT_TET)
    t = geodesic_table(m)
    assert t.dist.tolist() == [[0.0]]
    c = m.vertices.mean(axis=0)
    assert locate_tet(m, m.vertices, c) == 0
    assert locate_tet(m, m.vertices, c + 10 * m.bbox_diagonal) is None


def test_adjacency_symmetric_and_weights_positive(box_mesh):
    for i, adj in enumerate(box_mesh.adjacency):
        for j in adj:
            assert i in box_mesh.adjacency[j]
            assert box_mesh.weight(i, j) == box_mesh.weight(j, i) > 0
    w = box_mesh.edge_weights
    assert np.all(np.round(w / WEIGHT_QUANTUM) * WEIGHT_QUANTUM == w)


def test_chain_path_sum():
    m = chain3()
    assert set(m.adjacency[0]) == {1} and set(m.adjacency[2]) == {1}
    t = geodesic_table(m)
    assert t.dist[0, 2] == m.weight(0, 1) + m.weight(1, 2)


def test_invalid_tets_all_reported():
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    with pytest.raises(MeshError) as exc:
        TetMesh.from_arrays(verts, [[0, 1, 2, 9], [0, 1, 1, 2]])
    assert len(exc.value.problems) == 2
    assert "tets[0]" in exc.value.problems[0] and "tets[1]" in exc.value.problems[1]


def test_disconnected_mesh_lists_components():
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
             [5, 0, 0], [6, 0, 0], [5, 1, 0], [5, 0, 1]]
    m = TetMesh.from_arrays(verts, [[0, 1, 2, 3], [4, 5, 6, 7]])
    with pytest.raises(DisconnectedMeshError) as exc:
        geodesic_table(m)
    assert exc.value.components == [[0], [1]]


def test_load_mesh_lists_defects(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vertices": [[0, 0], [1, 0, 0]], "tets": [[0, 1, 2]]}))
    with pytest.raises(MeshError) as exc:
        load_mesh(p)
    assert exc.value.problems == ["vertices[0]: expected [x, y, z]",
                                  "tets[0]: expected four integer indices"]


def test_save_load_round_trip(tmp_path, box_mesh):
    p = tmp_path / "box.json"
    save_mesh(box_mesh, p)
    back = load_mesh(p)
    assert back.mesh_id == box_mesh.mesh_id
    assert np.array_equal(back.edge_weights, box_mesh.edge_weights)


def test_table_matches_floyd_warshall_on_polycubes():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m = random_polycube(rng)
        fw = floyd_warshall(m.n_tets, m.edge_pairs, m.edge_weights)
        assert np.array_equal(geodesic_table(m).dist, fw)


def test_two_tet_location_matches_brute_force():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.0]])
    m = TetMesh.from_arrays(verts, [[0, 1, 2, 3], [1, 2, 3, 4]])
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.2, 1.2, (400, 3))
    got = locate_tets(m, verts, pts, snap_radius=-1.0)
    for p, g in zip(pts, got):
        hits = [t for t in range(2) if point_in_tet(p, verts[m.tets[t]])]
        if not hits:
            assert g == -1
        else:
            assert g in hits


def test_inside_mask_matches_brute_force_on_deformed_box(box_mesh):
    rng = np.random.default_rng(5)
    pos = box_mesh.vertices + rng.normal(0, 0.004, box_mesh.vertices.shape)
    pts = rng.uniform(pos.min(0) - 0.02, pos.max(0) + 0.02, (300, 3))
    got = inside_mask(box_mesh, pos, pts)
    want = [any(point_in_tet(p, pos[t]) for t in box_mesh.tets) for p in pts]
    assert got.tolist() == want


def test_barycentric_reconstructs_points(box_mesh):
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.1, 0.1, (5, 3))
    lam = barycentric(box_mesh.vertices, box_mesh.tets, pts)
    assert np.allclose(lam.sum(axis=-1), 1.0)
    rebuilt = np.einsum("ntk,tkd->ntd", lam, box_mesh.vertices[box_mesh.tets])
    assert np.allclose(rebuilt, pts[:, None, :])


def test_geodesic_examples(box_mesh):
    table = geodesic_table(box_mesh)
    pos = box_mesh.vertices
    c = pos[box_mesh.tets].mean(axis=1)
    assert geodesic(box_mesh, table, pos, c[0], c[0]) == 0.0
    i, j = box_mesh.edge_pairs[0]
    assert geodesic(box_mesh, table, pos, c[i], c[j]) == box_mesh.weight(i, j)
    with pytest.raises(ValueError):
        geodesic(box_mesh, table, pos, c[0], c[0] + 10.0)


def test_geodesic_unchanged_by_deformation(box_mesh):
    table = geodesic_table(box_mesh)
    rng = np.random.default_rng(8)
    t, b = random_material_points(box_mesh, rng, 40)
    # keep points strictly inside their tets so location is unambiguous
    b = 0.6 * b + 0.1
    bent = box_mesh.vertices.copy()
    bent[:, 2] += 0.3 * bent[:, 0] ** 2
    for pos in (box_mesh.vertices, bent):
        pts = embed_points(box_mesh, pos, t, b)
        assert np.array_equal(locate_tets(box_mesh, pos, pts), t)
    d0 = [geodesic(box_mesh, table, box_mesh.vertices, p, q)
          for p, q in zip(embed_points(box_mesh, box_mesh.vertices, t[:20], b[:20]),
                          embed_points(box_mesh, box_mesh.vertices, t[20:], b[20:]))]
    d1 = [geodesic(box_mesh, table, bent, p, q)
          for p, q in zip(embed_points(box_mesh, bent, t[:20], b[:20]),
                          embed_points(box_mesh, bent, t[20:], b[20:]))]
    assert d0 == d1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_table_metric_properties(seed):
    m = random_polycube(np.random.default_rng(seed), max_voxels=4)
    d = geodesic_table(m).dist
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    # triangle inequality for every triple
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :])


def test_folded_chain_ends(chain_mesh, chain_table):
    """Ends of the bent chain nearly touch in space yet are far along the body."""
    m, d = chain_mesh, chain_table.dist
    c = m.vertices[m.tets].mean(axis=1)
    ang = np.mod(np.arctan2(c[:, 1], c[:, 0]), 2 * np.pi)
    first, last = np.argmin(ang), np.argmax(ang)
    length = np.ptp(ang) * np.linalg.norm(c[:, :2], axis=1).mean()
    e = m.edges()
    shortest_edge = np.linalg.norm(m.vertices[e[:, 0]] - m.vertices[e[:, 1]], axis=1).min()
    assert d[first, last] >= length
    assert np.linalg.norm(c[first] - c[last]) < shortest_edge
    assert chain_table.diameter == d.max()


def test_builtin_meshes_connected():
    for name in meshes.BUILTIN:
        m = meshes.builtin(name)
        assert 50 <= m.n_tets <= 400
        geodesic_table(m)
    with pytest.raises(ValueError):
        meshes.builtin("teapot")

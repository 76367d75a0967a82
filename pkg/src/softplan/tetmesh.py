"""Tetrahedral objects with point location and tet-graph geodesics."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

# Edge weights are snapped to this grid so every path sum is exact in float64;
# Dijkstra, Floyd-Warshall and reversed paths then agree bit for bit.
WEIGHT_QUANTUM = 2.0 ** -30
BARY_EPS = 1e-9
SNAP_FRACTION = 0.05

_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class MeshError(ValueError):
    """Raised for invalid meshes; `problems` holds one message per defect."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DisconnectedMeshError(MeshError):
    def __init__(self, components):
        self.components = components
        shown = ", ".join(
            "[" + ", ".join(map(str, c[:8])) + (", ..." if len(c) > 8 else "") + "]"
            for c in components
        )
        super().__init__(f"tet graph has {len(components)} components: {shown}")


def quantize(w):
    return np.round(np.asarray(w, dtype=np.float64) / WEIGHT_QUANTUM) * WEIGHT_QUANTUM


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    adjacency: tuple
    edge_pairs: np.ndarray
    edge_weights: np.ndarray
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, vertices, tets, name=""):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        problems = validate_arrays(vertices, tets)
        if problems:
            raise MeshError(problems)
        pairs = _face_pairs(tets)
        centroids = vertices[tets].mean(axis=1)
        if len(pairs):
            w = quantize(np.linalg.norm(centroids[pairs[:, 0]] - centroids[pairs[:, 1]], axis=1))
        else:
            w = np.zeros(0)
        if np.any(w <= 0):
            bad = pairs[w <= 0][0]
            raise MeshError(f"tets {bad[0]} and {bad[1]} have coincident centroids")
        adj = [[] for _ in range(len(tets))]
        for a, b in pairs:
            adj[a].append(int(b))
            adj[b].append(int(a))
        adjacency = tuple(tuple(sorted(a)) for a in adj)
        for arr in (vertices, tets, pairs, w):
            arr.setflags(write=False)
        return cls(vertices, tets, adjacency, pairs, w, name)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def mesh_id(self):
        if "id" not in self._cache:
            h = hashlib.sha256()
            h.update(self.vertices.tobytes())
            h.update(self.tets.tobytes())
            self._cache["id"] = h.hexdigest()[:16]
        return self._cache["id"]

    @property
    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @property
    def snap_radius(self):
        return SNAP_FRACTION * self.bbox_diagonal

    def weight(self, i, j):
        """Edge weight between face-adjacent tets i and j."""
        lo, hi = min(i, j), max(i, j)
        idx = self._pair_index().get((lo, hi))
        if idx is None:
            raise KeyError(f"tets {i} and {j} are not face-adjacent")
        return float(self.edge_weights[idx])

    def _pair_index(self):
        if "pair_index" not in self._cache:
            self._cache["pair_index"] = {
                (int(a), int(b)): k for k, (a, b) in enumerate(self.edge_pairs)
            }
        return self._cache["pair_index"]

    def boundary_faces(self):
        """Triangles (k, 3) that belong to exactly one tet, oriented outward."""
        if "boundary" not in self._cache:
            faces = {}
            for t, tet in enumerate(self.tets):
                for f in _TET_FACES:
                    tri = tuple(int(tet[i]) for i in f)
                    faces.setdefault(tuple(sorted(tri)), []).append(tri)
            tris = [v[0] for v in faces.values() if len(v) == 1]
            tris = np.array(sorted(tris), dtype=np.int64).reshape(-1, 3)
            self._cache["boundary"] = _orient_outward(self.vertices, self.tets, tris)
        return self._cache["boundary"]

    def surface_vertices(self):
        if "surface" not in self._cache:
            self._cache["surface"] = np.unique(self.boundary_faces())
        return self._cache["surface"]

    def edges(self):
        """Unique undirected vertex edges of all tets, sorted."""
        if "edges" not in self._cache:
            t = self.tets
            e = np.concatenate([t[:, [a, b]] for a in range(4) for b in range(a + 1, 4)])
            e.sort(axis=1)
            self._cache["edges"] = np.unique(e, axis=0)
        return self._cache["edges"]

    def to_json(self):
        return {"vertices": self.vertices.tolist(), "tets": self.tets.tolist()}


def validate_arrays(vertices, tets):
    problems = []
    if not np.all(np.isfinite(vertices)):
        problems.append("vertices: non-finite coordinate")
    n = len(vertices)
    for k, tet in enumerate(tets):
        if np.any(tet < 0) or np.any(tet >= n):
            problems.append(f"tets[{k}]: index out of range 0..{n - 1}")
        elif len(set(tet.tolist())) != 4:
            problems.append(f"tets[{k}]: repeated vertex index")
    return problems


def _face_pairs(tets):
    owner = {}
    pairs = []
    for t, tet in enumerate(tets):
        for f in _TET_FACES:
            key = tuple(sorted(int(tet[i]) for i in f))
            if key in owner:
                other = owner[key]
                if other < 0:
                    raise MeshError(f"face {key} shared by more than two tets")
                pairs.append((other, t))
                owner[key] = -1
            else:
                owner[key] = t
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def _orient_outward(vertices, tets, tris):
    # Each boundary triangle is flipped so its normal points away from the
    # fourth vertex of its owning tet.
    if len(tris) == 0:
        return tris
    owner = {}
    for tet in tets:
        s = set(tet.tolist())
        for f in _TET_FACES:
            key = tuple(sorted(int(tet[i]) for i in f))
            owner.setdefault(key, (s - set(key)).pop())
    out = tris.copy()
    for k, tri in enumerate(tris):
        a, b, c = vertices[tri]
        opp = vertices[owner[tuple(sorted(tri.tolist()))]]
        if np.dot(np.cross(b - a, c - a), opp - a) > 0:
            out[k] = tri[[0, 2, 1]]
    return out


def load_mesh(path):
    """Load a JSON mesh file; raise MeshError listing every defect found."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: invalid JSON ({exc})") from exc
    problems = []
    if not isinstance(data, dict):
        raise MeshError(f"{path}: top level must be an object")
    for key in ("vertices", "tets"):
        if key not in data:
            problems.append(f"{key}: missing")
    if problems:
        raise MeshError(problems)
    verts, tets = data["vertices"], data["tets"]
    for k, v in enumerate(verts):
        if not (isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) for x in v)):
            problems.append(f"vertices[{k}]: expected [x, y, z]")
    for k, t in enumerate(tets):
        if not (isinstance(t, list) and len(t) == 4 and all(isinstance(x, int) for x in t)):
            problems.append(f"tets[{k}]: expected four integer indices")
    if problems:
        raise MeshError(problems)
    return TetMesh.from_arrays(verts, tets, name=data.get("name", path.stem))


def save_mesh(mesh, path):
    payload = {"name": mesh.name, **mesh.to_json()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


# -- point location ----------------------------------------------------------

def _tet_inverses(positions, tets):
    a = positions[tets[:, 0]]
    m = np.stack([positions[tets[:, k]] - a for k in (1, 2, 3)], axis=-1)
    det = np.linalg.det(m)
    scale = np.max(np.abs(m), axis=(1, 2)) ** 3
    ok = np.abs(det) > 1e-12 * np.maximum(scale, 1e-300)
    inv = np.zeros_like(m)
    inv[ok] = np.linalg.inv(m[ok])
    return a, inv, ok


def barycentric(positions, tets, points):
    """Barycentric coordinates (n_points, n_tets, 4); NaN rows for degenerate tets."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a, inv, ok = _tet_inverses(positions, tets)
    rel = points[:, None, :] - a[None, :, :]
    lam = np.einsum("tij,ntj->nti", inv, rel)
    out = np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
    out[:, ~ok, :] = np.nan
    return out


def locate_tets(mesh, positions, points, snap_radius=None, chunk=2048):
    """Vectorised locate_tet; returns int array with -1 where nothing is found."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != mesh.vertices.shape:
        raise ValueError("positions must have one row per mesh vertex")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if snap_radius is None:
        snap_radius = mesh.snap_radius
    a, inv, ok = _tet_inverses(positions, mesh.tets)
    nt = len(inv)
    # lam[n, t] = inv[t] @ (p[n] - a[t]) as one matrix product
    lin = inv.transpose(2, 0, 1).reshape(3, nt * 3)
    off = np.einsum("tij,tj->ti", inv, a).reshape(nt * 3)
    centroids = positions[mesh.tets].mean(axis=1)
    result = np.full(len(points), -1, dtype=np.int64)
    for s in range(0, len(points), chunk):
        pts = points[s:s + chunk]
        lam = (pts @ lin - off).reshape(len(pts), nt, 3)
        l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
        lmin = np.minimum(np.minimum(1.0 - (l1 + l2 + l3), l1), np.minimum(l2, l3))
        lmin[:, ~ok] = -np.inf
        best = np.argmax(lmin, axis=1)
        inside = lmin[np.arange(len(pts)), best] >= -BARY_EPS
        out = np.where(inside, best, -1)
        miss = np.nonzero(~inside)[0]
        if len(miss) and snap_radius >= 0:
            d = np.linalg.norm(pts[miss, None, :] - centroids[None], axis=-1)
            near = np.argmin(d, axis=1)
            snapped = d[np.arange(len(miss)), near] <= snap_radius
            out[miss] = np.where(snapped, near, -1)
        result[s:s + chunk] = out
    return result


def locate_tet(mesh, positions, p, snap_radius=None):
    """Index of the tet containing p in the current pose, or None.

    Among several containing tets the one whose smallest barycentric
    coordinate is largest wins (lowest index on ties). Points outside every
    tet snap to the nearest centroid when it lies within `snap_radius`.
    """
    idx = int(locate_tets(mesh, positions, np.asarray(p)[None], snap_radius)[0])
    return None if idx < 0 else idx


def inside_mask(mesh, positions, points, chunk=2048):
    """Strict membership test: True where a point lies in some tet."""
    positions = np.asarray(positions, dtype=np.float64)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    # points outside the padded bounding box cannot be inside any tet
    pad = 1e-6 * max(mesh.bbox_diagonal, 1.0)
    lo, hi = positions.min(axis=0) - pad, positions.max(axis=0) + pad
    cand = np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))
    out = np.zeros(len(points), dtype=bool)
    if len(cand):
        out[cand] = locate_tets(mesh, positions, points[cand], snap_radius=-1.0, chunk=chunk) >= 0
    return out


# -- geodesics ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeodesicTable:
    dist: np.ndarray
    mesh_id: str

    @property
    def diameter(self):
        return float(self.dist.max())


def tet_graph(mesh):
    n = mesh.n_tets
    p = mesh.edge_pairs
    rows = np.concatenate([p[:, 0], p[:, 1]])
    cols = np.concatenate([p[:, 1], p[:, 0]])
    w = np.concatenate([mesh.edge_weights, mesh.edge_weights])
    return coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()


def geodesic_table(mesh):
    """All-pairs shortest paths over the face-adjacency graph (Dijkstra per source)."""
    graph = tet_graph(mesh)
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        comps = [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]
        raise DisconnectedMeshError(comps)
    dist = dijkstra(graph, directed=False)
    dist.setflags(write=False)
    return GeodesicTable(dist, mesh.mesh_id)


def geodesic(mesh, table, positions, p, q):
    """Deformation-consistent distance between points p and q (meters)."""
    tp = locate_tet(mesh, positions, p)
    tq = locate_tet(mesh, positions, q)
    if tp is None or tq is None:
        which = "p" if tp is None else "q"
        raise ValueError(f"point {which} cannot be located on mesh {mesh.name!r}")
    return float(table.dist[tp, tq])

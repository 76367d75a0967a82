"""Desk-scale soft-body scene simulator.

A tet body is stepped with position-based dynamics (edge-length and
per-tet volume constraints, Gauss-Seidel order) under gravity. The scene
holds a frictional floor at z = 0 plus axis-aligned box obstacles, and a
kinematic gripper pins the vertices it holds. An action grasps, moves the
grip in a straight line, then releases.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .tetmesh import TetMesh

log = logging.getLogger(__name__)


class SimulationDiverged(RuntimeError):
    def __init__(self, vertex, time):
        self.vertex = vertex
        super().__init__(f"simulation diverged: vertex {vertex} non-finite at t={time:.4f}s")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 150.0
    gravity: float = 9.81
    damping: float = 0.98
    iterations: int = 10
    friction_static: float = 0.8
    friction_kinetic: float = 0.6
    grasp_radius: float = 0.03
    grasp_k: int = 8
    gripper_speed: float = 0.5
    settle_speed: float = 1e-4
    settle_cap: float = 2.0
    contact_tol: float = 1e-3
    # displacement sampling in spherical coordinates (polar angle from +z)
    r_mean: float = 0.24
    r_std: float = 0.08
    theta_mean: float = np.pi / 4
    theta_std: float = np.pi / 6
    reset_every: int = 15
    max_obstacles: int = 2

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Camera:
    """Orthographic camera looking along `direction` at `center`."""

    direction: tuple = (0.6, 0.45, -0.66)
    up: tuple = (0.0, 0.0, 1.0)
    center: tuple = (0.0, 0.0, 0.05)
    pixel_size: float = 0.01
    width: int = 112
    height: int = 112

    def basis(self):
        d = np.asarray(self.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        right = np.cross(d, np.asarray(self.up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(d, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, d)
        return right, up, d

    def project(self, points):
        """(u, v, depth) with u, v in pixel units; smaller depth is nearer."""
        right, up, d = self.basis()
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        u = rel @ right / self.pixel_size + self.width / 2
        v = rel @ up / self.pixel_size + self.height / 2
        return np.stack([u, v, rel @ d], axis=-1)

    def to_json(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


DEFAULT_CAMERA = Camera()


def tracking_camera(points, base=DEFAULT_CAMERA):
    """`base` re-aimed at the horizontal centroid of `points`."""
    c = np.asarray(points, dtype=np.float64).mean(axis=0)
    return replace(base, center=(float(c[0]), float(c[1]), base.center[2]))


@dataclass(frozen=True)
class Gripper:
    held: np.ndarray
    position: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True)
class SceneState:
    positions: np.ndarray
    velocities: np.ndarray
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    gripper: Gripper | None = None
    time: float = 0.0

    def copy(self):
        return replace(self, positions=self.positions.copy(), velocities=self.velocities.copy())


@dataclass(frozen=True)
class Action:
    p_g: np.ndarray
    p_r: np.ndarray

    def to_json(self):
        return {"p_g": self.p_g.tolist(), "p_r": self.p_r.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["p_g"], dtype=np.float64), np.asarray(d["p_r"], dtype=np.float64))


@dataclass(frozen=True)
class PartialObservation:
    points: np.ndarray
    vertex_ids: np.ndarray
    camera: Camera
    empty: bool = False

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ExecResult:
    state: SceneState
    flow: np.ndarray
    missed: bool = False
    settled: bool = True


class SoftBody:
    """Constraint set of a tet mesh; immutable after construction."""

    def __init__(self, rest, edges, tets, surface=None, faces=None):
        self.faces = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces)
        rest = np.asarray(rest, dtype=np.float64)
        self.rest = rest
        self.edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
        self.rest_len = np.linalg.norm(rest[self.edges[:, 1]] - rest[self.edges[:, 0]], axis=1)
        if len(self.tets):
            a = rest[self.tets[:, 0]]
            self.rest_vol = np.einsum(
                "ij,ij->i", rest[self.tets[:, 1]] - a,
                np.cross(rest[self.tets[:, 2]] - a, rest[self.tets[:, 3]] - a)) / 6.0
        else:
            self.rest_vol = np.zeros(0)
        self.surface = np.arange(len(rest)) if surface is None else np.asarray(surface)

    @classmethod
    def from_mesh(cls, mesh: TetMesh):
        return cls(mesh.vertices, mesh.edges(), mesh.tets, mesh.surface_vertices(),
                   mesh.boundary_faces())

    @property
    def n_vertices(self):
        return len(self.rest)


def _boxes(state):
    return np.ascontiguousarray(state.obstacles, dtype=np.float64).reshape(-1, 6)


def _args(body, cfg):
    return (body.edges, body.rest_len, body.tets, body.rest_vol)


def _phys(cfg):
    return (cfg.dt, cfg.gravity, cfg.damping, cfg.iterations,
            cfg.friction_static, cfg.friction_kinetic)


def _check_finite(state):
    bad = np.flatnonzero(~np.isfinite(state.positions).all(axis=1))
    if len(bad):
        raise SimulationDiverged(int(bad[0]), state.time)


def step(body, state, dt=None, cfg=SimConfig(), gripper_position=None):
    """One position-based dynamics step; returns a new SceneState."""
    dt = cfg.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_finite(state)
    x = state.positions.copy()
    v = state.velocities.copy()
    w = np.ones(len(x))
    grip = state.gripper
    if grip is not None:
        pos = grip.position if gripper_position is None else np.asarray(gripper_position, float)
        held = grip.held
        held_pos = pos + grip.offsets
        w[held] = 0.0
        grip = replace(grip, position=pos)
    else:
        held = np.zeros(0, dtype=np.int64)
        held_pos = np.zeros((0, 3))
    bad = _kernels.pbd_step(x, v, w, *_args(body, cfg), held, held_pos, _boxes(state),
                            dt, cfg.gravity, cfg.damping, cfg.iterations,
                            cfg.friction_static, cfg.friction_kinetic)
    if bad >= 0:
        raise SimulationDiverged(int(bad), state.time + dt)
    return replace(state, positions=x, velocities=v, gripper=grip, time=state.time + dt)


def settle(body, state, cfg=SimConfig(), max_time=None):
    """Free-run until every vertex is slower than cfg.settle_speed (or the cap)."""
    max_steps = int(round((cfg.settle_cap if max_time is None else max_time) / cfg.dt))
    _check_finite(state)
    x = state.positions.copy()
    v = state.velocities.copy()
    w = np.ones(len(x))
    n, bad = _kernels.run_settle(x, v, w, *_args(body, cfg), _boxes(state), *_phys(cfg),
                                 max_steps, cfg.settle_speed)
    if bad >= 0:
        raise SimulationDiverged(int(bad), state.time + n * cfg.dt)
    settled = bool(np.sqrt((v ** 2).sum(axis=1)).max() < cfg.settle_speed) if len(v) else True
    return replace(state, positions=x, velocities=v, gripper=None,
                   time=state.time + n * cfg.dt), settled


def surface_distance(body, positions, points):
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if len(body.faces) == 0:
        surf = positions[body.surface]
        return np.linalg.norm(points[:, None] - surf[None], axis=-1).min(axis=1)
    return _kernels.surface_distance(points, np.ascontiguousarray(positions), body.faces)


def grasp(body, state, p_g, cfg=SimConfig()):
    """Pin the k surface vertices nearest p_g; None when p_g misses the surface."""
    p_g = np.asarray(p_g, dtype=np.float64)
    surf = body.surface
    if len(surf) == 0 or surface_distance(body, state.positions, p_g)[0] > cfg.grasp_radius:
        return None
    d = np.linalg.norm(state.positions[surf] - p_g, axis=1)
    order = np.lexsort((surf, d))[: cfg.grasp_k]
    held = np.sort(surf[order])
    return Gripper(held, p_g.copy(), state.positions[held] - p_g)


def execute(body, state, action, cfg=SimConfig()):
    """Grasp at p_g, move the gripper to p_r at constant speed, release, settle."""
    pre = state.positions
    _check_finite(state)
    grip = grasp(body, state, action.p_g, cfg)
    if grip is None:
        log.debug("missed grasp at %s", action.p_g)
        return ExecResult(state, np.zeros_like(pre), missed=True)
    target = np.asarray(action.p_r, dtype=np.float64).copy()
    # the gripper cannot drive held vertices through the floor
    target[2] = max(target[2], -grip.offsets[:, 2].min())
    disp = target - grip.position
    dist = float(np.linalg.norm(disp))
    n_steps = int(np.ceil(dist / (cfg.gripper_speed * cfg.dt) - 1e-9))
    x = pre.copy()
    v = state.velocities.copy()
    w = np.ones(len(x))
    w[grip.held] = 0.0
    t = state.time
    if n_steps > 0:
        frac = np.arange(1, n_steps + 1, dtype=np.float64)[:, None] / n_steps
        path = grip.position + frac * disp
        n, bad = _kernels.run_move(x, v, w, *_args(body, cfg), grip.held, grip.offsets,
                                   path, _boxes(state), *_phys(cfg))
        t += n * cfg.dt
        if bad >= 0:
            raise SimulationDiverged(int(bad), t)
    # gripper is at rest when it opens
    v[grip.held] = 0.0
    moved = replace(state, positions=x, velocities=v, gripper=None, time=t)
    post, settled = settle(body, moved, cfg)
    return ExecResult(post, post.positions - pre, missed=False, settled=settled)


# -- observation -------------------------------------------------------------

def observe(mesh, positions, camera=DEFAULT_CAMERA):
    """Front-most surface point per pixel of an orthographic z-buffer render."""
    tris = mesh.boundary_faces()
    uvd = camera.project(positions)
    depth, tri_id, bary = _kernels.rasterize(np.ascontiguousarray(uvd), tris,
                                             camera.width, camera.height)
    jj, ii = np.nonzero(tri_id >= 0)
    if len(jj) == 0:
        log.warning("empty observation: object out of frame")
        return PartialObservation(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), camera, True)
    t = tri_id[jj, ii]
    b = bary[jj, ii]
    corners = positions[tris[t]]
    points = np.einsum("nk,nkd->nd", b, corners)
    vid = tris[t, np.argmax(b, axis=1)]
    return PartialObservation(points, vid, camera)


def project_points(points, camera=DEFAULT_CAMERA):
    """Keep the front-most point per pixel; returns indices into `points`."""
    uvd = camera.project(points)
    i = np.floor(uvd[:, 0]).astype(np.int64)
    j = np.floor(uvd[:, 1]).astype(np.int64)
    ok = (i >= 0) & (i < camera.width) & (j >= 0) & (j < camera.height)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return idx
    pix = j[idx] * camera.width + i[idx]
    order = np.lexsort((idx, uvd[idx, 2], pix))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    return np.sort(idx[order][first])


def pseudo_observation(points, camera=DEFAULT_CAMERA):
    keep = project_points(points, camera)
    return PartialObservation(np.asarray(points)[keep], keep, camera, len(keep) == 0)


def visible_mask(mesh, positions, samples, camera=DEFAULT_CAMERA, tol=None):
    """Which surface samples survive the z-buffer test of the mesh render."""
    tris = mesh.boundary_faces()
    depth, _, _ = _kernels.rasterize(np.ascontiguousarray(camera.project(positions)), tris,
                                     camera.width, camera.height)
    uvd = camera.project(samples)
    i = np.floor(uvd[:, 0]).astype(np.int64)
    j = np.floor(uvd[:, 1]).astype(np.int64)
    ok = (i >= 0) & (i < camera.width) & (j >= 0) & (j < camera.height)
    tol = camera.pixel_size if tol is None else tol
    out = np.zeros(len(samples), dtype=bool)
    out[ok] = uvd[ok, 2] <= depth[j[ok], i[ok]] + tol
    return out


def sample_surface(mesh, positions, n, rng):
    """Area-weighted uniform samples on the boundary surface."""
    tris = mesh.boundary_faces()
    a, b, c = (positions[tris[:, k]] for k in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    t = rng.choice(len(tris), size=n, p=area / area.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    return ((1 - s)[:, None] * a[t] + (s * (1 - r2))[:, None] * b[t]
            + (s * r2)[:, None] * c[t])


# -- actions and scenes ------------------------------------------------------

def sample_displacement(rng, cfg=SimConfig(), size=None):
    r = np.maximum(rng.normal(cfg.r_mean, cfg.r_std, size), 0.0)
    theta = rng.normal(cfg.theta_mean, cfg.theta_std, size)
    phi = 2 * np.pi * (1.0 - rng.random(size))
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], axis=-1)


def sample_action(observation, rng, cfg=SimConfig()):
    """Grasp uniformly among visible points, displace in spherical coordinates."""
    if len(observation) == 0:
        raise ValueError("cannot sample an action from an empty observation")
    p_g = observation.points[rng.integers(len(observation))].copy()
    return Action(p_g, p_g + sample_displacement(rng, cfg))


def random_pose(mesh, rng, spread=0.12):
    """Rest vertices rotated about z and shifted in the plane, floor-aligned."""
    yaw = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    v = v @ rot.T
    v[:, :2] += rng.uniform(-spread, spread, 2)
    v[:, 2] -= v[:, 2].min()
    return v


def random_obstacles(positions, rng, count):
    boxes = []
    centre = positions.mean(axis=0)
    for _ in range(count):
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.38, 0.5)
        half = rng.uniform(0.025, 0.05, 2)
        h = rng.uniform(0.05, 0.15)
        cx, cy = centre[0] + dist * np.cos(ang), centre[1] + dist * np.sin(ang)
        boxes.append([cx - half[0], cy - half[1], 0.0, cx + half[0], cy + half[1], h])
    return np.array(boxes, dtype=np.float64).reshape(-1, 6)


def reset_scene(mesh, body, rng, cfg=SimConfig(), obstacles=True):
    pos = random_pose(mesh, rng)
    n = int(rng.integers(0, cfg.max_obstacles + 1)) if obstacles else 0
    boxes = random_obstacles(pos, rng, n)
    state = SceneState(pos, np.zeros_like(pos), boxes)
    state, _ = settle(body, state, cfg)
    return replace(state, velocities=np.zeros_like(pos), time=0.0)


def simulate(mesh, n_actions, seed, cfg=SimConfig(), camera=DEFAULT_CAMERA, obstacles=True):
    """Generate a trajectory: list of per-action records (dicts of arrays)."""
    rng = np.random.default_rng(seed)
    body = SoftBody.from_mesh(mesh)
    records = []
    state = None
    for k in range(n_actions):
        if k % cfg.reset_every == 0:
            state = reset_scene(mesh, body, rng, cfg, obstacles)
        obs = observe(mesh, state.positions, tracking_camera(state.positions, camera))
        action = sample_action(obs, rng, cfg)
        res = execute(body, state, action, cfg)
        records.append({
            "index": k,
            "pre": state.positions,
            "post": res.state.positions,
            "flow": res.flow,
            "obstacles": state.obstacles,
            "observation": obs,
            "action": action,
            "missed": res.missed,
            "settled": res.settled,
        })
        state = replace(res.state, velocities=np.zeros_like(res.state.velocities), time=0.0)
    return records

"""Random-shooting planner: roll out K candidate action sequences through a
dynamics provider, score each final state against the target, pick the best."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import softsim
from .decoders import extract_state
from .matching import d_corr, match
from .metrics import chamfer, fscore, kendall_tau, miou
from .tetmesh import inside_mask

SUCCESS_RADIUS = 0.05
STATE_TAU = 0.75
DYNAMICS = ("oracle", "learned")
COSTS = ("dcorr", "chamfer")


@dataclass
class PlanProblem:
    mesh: object
    start: softsim.SceneState
    target: softsim.SceneState
    k: int = 64
    horizon: int = 3
    dynamics: str = "oracle"
    cost: str = "dcorr"
    success_radius: float = SUCCESS_RADIUS
    model: object = None
    correspondence: str = "gt"
    sim: softsim.SimConfig = field(default_factory=softsim.SimConfig)
    camera: softsim.Camera = softsim.DEFAULT_CAMERA

    def __post_init__(self):
        if self.k < 1 or self.horizon < 1:
            raise ValueError("k and horizon must be >= 1")
        if self.success_radius <= 0:
            raise ValueError("success radius must be positive")
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if self.cost not in COSTS:
            raise ValueError(f"cost must be one of {COSTS}")
        if self.correspondence not in ("gt", "learned"):
            raise ValueError("correspondence must be 'gt' or 'learned'")
        if self.dynamics == "learned" and self.model is None:
            raise ValueError("learned dynamics need a model")
        if self.dynamics == "learned" and self.correspondence == "gt":
            # learned states are occupancy samples with no vertex identity
            self.correspondence = "learned"
        if self.correspondence == "learned" and self.model is None:
            raise ValueError("learned correspondence needs a model")
        self.body = softsim.SoftBody.from_mesh(self.mesh)

    def observe(self, positions):
        return softsim.observe(self.mesh, positions, softsim.tracking_camera(positions, self.camera))


@dataclass
class RollOut:
    index: int
    actions: list
    states: list
    cost: float
    valid: bool = True


@dataclass
class PlanResult:
    best: RollOut
    rollouts: list
    ranking: list       # valid roll-out indices by (cost, index)
    start_points: np.ndarray
    target_points: np.ndarray
    xi: np.ndarray | None


def make_problem(mesh, start_seed, target_seed, target_actions=1, obstacles=True,
                 sim=softsim.SimConfig(), **kw):
    """Start: a randomised scene. Target: the start after `target_actions`
    random actions drawn from an independent stream."""
    body = softsim.SoftBody.from_mesh(mesh)
    start = softsim.reset_scene(mesh, body, np.random.default_rng(start_seed), sim, obstacles)
    rng = np.random.default_rng(target_seed)
    state = start
    for _ in range(target_actions):
        obs = softsim.observe(mesh, state.positions, softsim.tracking_camera(state.positions))
        res = softsim.execute(body, state, softsim.sample_action(obs, rng, sim), sim)
        state = replace(res.state, velocities=np.zeros_like(res.state.velocities), time=0.0)
    return PlanProblem(mesh, start, state, sim=sim, **kw)


# -- dynamics providers --------------------------------------------------------

def rollout(problem, state, action, occ0=None):
    """One step of the problem's dynamics provider.

    oracle: SceneState in, settled SceneState out (None on a missed grasp or
    divergence). learned: (n, 3) points in, points advected by predicted
    flow out; occ0 carries the geometry features frozen at t=0 and the
    action context comes from the pseudo-observation of the points.
    """
    if problem.dynamics == "oracle":
        try:
            res = softsim.execute(problem.body, state, action, problem.sim)
        except softsim.SimulationDiverged:
            return None
        if res.missed:
            return None
        return replace(res.state, velocities=np.zeros_like(res.state.velocities), time=0.0)
    pts = np.asarray(state, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("state is empty")
    obs = softsim.pseudo_observation(pts, softsim.tracking_camera(pts, problem.camera))
    ctx = problem.model.context(obs.points, action)
    return pts + problem.model.flow_predict(ctx, pts, occ0)[0]


def _oracle_rollout(problem, rng):
    state = problem.start
    actions, states = [], []
    for _ in range(problem.horizon):
        obs = problem.observe(state.positions)
        if obs.empty:
            return actions, states, False
        a = softsim.sample_action(obs, rng, problem.sim)
        actions.append(a)
        state = rollout(problem, state, a)
        if state is None:
            return actions, states, False
        states.append(state.positions)
    return actions, states, True


def _learned_rollout(problem, s0, occ0, rng):
    pts = s0
    actions, states = [], []
    for _ in range(problem.horizon):
        obs = softsim.pseudo_observation(pts, softsim.tracking_camera(pts, problem.camera))
        if obs.empty:
            return actions, states, False
        a = softsim.sample_action(obs, rng, problem.sim)
        actions.append(a)
        pts = rollout(problem, pts, a, occ0)
        if not np.all(np.isfinite(pts)):
            return actions, states, False
        states.append(pts)
    return actions, states, True


# -- states and cost -----------------------------------------------------------

def _learned_state(model, positions, problem):
    obs = problem.observe(positions)
    if obs.empty:
        raise ValueError("observation is empty")
    ctx = model.context(obs.points)
    st = extract_state(model, ctx, STATE_TAU)
    if st.empty:
        raise ValueError("no point exceeds the occupancy threshold")
    return st.points, ctx


def _features(model, positions, points, problem):
    obs = problem.observe(positions)
    ctx = model.context(obs.points)
    return model.embed(ctx, points)[0]


def state_cost(final, target, xi, kind):
    if kind == "chamfer":
        return chamfer(final, target)
    return d_corr(final, target, xi)


def plan(problem, seed=0):
    """Roll out K seeded candidates; the lowest cost wins (ties: lowest index).

    Candidate k draws from its own generator seeded by (seed, k), so results
    do not depend on evaluation order.
    """
    learned = problem.dynamics == "learned"
    occ0 = None
    if learned:
        s0, ctx0 = _learned_state(problem.model, problem.start.positions, problem)
        target, ctx_t = _learned_state(problem.model, problem.target.positions, problem)
        _, occ0 = problem.model.occupancy(ctx0, s0)
    else:
        s0 = problem.start.positions
        target = problem.target.positions
    xi = None
    if problem.cost == "dcorr":
        if problem.correspondence == "gt":
            xi = np.arange(len(s0))
        else:
            fs = _features(problem.model, problem.start.positions, s0, problem)
            ft = _features(problem.model, problem.target.positions, target, problem)
            xi = match(fs, ft).index
    rollouts = []
    for k in range(problem.k):
        rng = np.random.default_rng([seed, k])
        if learned:
            acts, states, ok = _learned_rollout(problem, s0, occ0, rng)
        else:
            acts, states, ok = _oracle_rollout(problem, rng)
        cost = state_cost(states[-1], target, xi, problem.cost) if ok else math.inf
        if not math.isfinite(cost):
            ok = False
        rollouts.append(RollOut(k, acts, states, cost if ok else math.inf, ok))
    valid = [r for r in rollouts if r.valid]
    if not valid:
        raise RuntimeError("every roll-out is invalid")
    ranking = [r.index for r in sorted(valid, key=lambda r: (r.cost, r.index))]
    return PlanResult(rollouts[ranking[0]], rollouts, ranking, s0, target, xi)


# -- execution -----------------------------------------------------------------

def execute_sequence(problem, actions):
    """Run actions in the simulator from the start; returns (positions, missed count)."""
    state = problem.start
    missed = 0
    for a in actions:
        res = softsim.execute(problem.body, state, a, problem.sim)
        missed += int(res.missed)
        state = replace(res.state, velocities=np.zeros_like(res.state.velocities), time=0.0)
    return state.positions, missed


def evaluate_plan(problem, actions, n_samples=100_000, seed=0, fscore_tau=0.01):
    """Execute and score against the target with vertex-identity correspondence."""
    final, missed = execute_sequence(problem, actions)
    target = problem.target.positions
    mesh = problem.mesh
    dc = d_corr(final, target, np.arange(len(final)))
    lo = np.minimum(final.min(axis=0), target.min(axis=0))
    hi = np.maximum(final.max(axis=0), target.max(axis=0))
    iou, _ = miou(lambda p: inside_mask(mesh, final, p), lambda p: inside_mask(mesh, target, p),
                  lo, hi, n_samples, np.random.default_rng(seed))
    f, prec, rec = fscore(final, target, fscore_tau)
    return {
        "d_corr": dc,
        "distance": math.sqrt(dc),
        "chamfer": chamfer(target, final),
        "fscore": f, "precision": prec, "recall": rec,
        "miou": iou,
        "missed": missed,
        "success": bool(math.sqrt(dc) < problem.success_radius),
    }


def executed_costs(problem, result):
    """Ground-truth d_corr of every valid candidate after real execution."""
    target = problem.target.positions
    out = {}
    for i in result.ranking:
        final, _ = execute_sequence(problem, result.rollouts[i].actions)
        out[i] = d_corr(final, target, np.arange(len(final)))
    return out


def ranking_tau(result, executed):
    """Kendall tau between predicted and executed costs over valid candidates."""
    idx = sorted(executed)
    pred = [result.rollouts[i].cost for i in idx]
    real = [executed[i] for i in idx]
    return kendall_tau(pred, real)

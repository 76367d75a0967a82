"""softplan command line: simulate -> train -> evaluate -> plan -> report.

Exit codes: 0 success, 2 invalid input, 3 failure while running.
SOFTPLAN_THREADS caps the BLAS and numba thread pools (default 1).
"""
from __future__ import annotations

import os
import sys

_THREADS = os.environ.get("SOFTPLAN_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
from dataclasses import fields  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, meshes, planner, softsim, store  # noqa: E402
from .matching import DESK_ACC_RADIUS, DESK_TAU1, TAU2, corr_accuracy, fmr, match  # noqa: E402
from .metrics import flow_mse, kendall_tau, miou  # noqa: E402
from .tetmesh import MeshError, inside_mask, load_mesh  # noqa: E402
from .training import TrainConfig, train  # noqa: E402

EVAL_COLUMNS = ("trajectory", "records", "miou", "vis_mse", "full_mse", "fmr", "accuracy",
                "kendall_tau", "config_hash", "data_hash", "version")
PLAN_COLUMNS = ("mesh", "start_seed", "target_seed", "dynamics", "cost", "k", "horizon",
                "best", "predicted_cost", "d_corr", "distance", "chamfer", "fscore",
                "precision", "recall", "miou", "missed", "success", "config_hash", "version")
REPORT_COLUMNS = ("source", "kind", "rows", "miou", "vis_mse", "full_mse", "fmr", "accuracy",
                  "kendall_tau", "d_corr", "chamfer", "fscore", "success_rate")


class ValidationError(Exception):
    pass


def _mesh(name):
    """A JSON mesh file or the name of a built-in mesh."""
    p = Path(name)
    try:
        if p.exists():
            return load_mesh(p)
        if name in meshes.BUILTIN:
            return meshes.builtin(name)
    except MeshError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    raise ValidationError(f"{name}: no such mesh file or built-in ({', '.join(meshes.BUILTIN)})")


def _need(path):
    if not Path(path).is_file():
        raise ValidationError(f"{path}: file not found")
    return path


def _trajectory(path, mesh):
    try:
        records = store.read_trajectory(_need(path))
    except store.SchemaError as exc:
        raise ValidationError(str(exc)) from None
    if not records:
        raise ValidationError(f"{path}: no records")
    for n, r in enumerate(records, 1):
        if r["mesh_id"] != mesh.mesh_id:
            raise ValidationError(f"{path}:{n}.mesh_id: recorded for another mesh")
        if len(r["pre"]) != mesh.n_vertices:
            raise ValidationError(f"{path}:{n}.pre: vertex count differs from the mesh")
    return records


def _checkpoint(path):
    try:
        return store.load_checkpoint(_need(path))
    except store.SchemaError as exc:
        raise ValidationError(str(exc)) from None


def _train_config(args):
    values = {}
    if args.config:
        try:
            values = json.loads(Path(_need(args.config)).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(values, dict):
            raise ValidationError(f"{args.config}: expected an object")
        known = {f.name: f.type for f in fields(TrainConfig)}
        for k in values:
            if k not in known:
                raise ValidationError(f"{args.config}.{k}: unknown setting")
    for k in ("steps", "seed", "corr", "lr"):
        v = getattr(args, k)
        if v is not None:
            values[k] = v
    if args.no_fusion:
        values["fusion"] = False
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config: {exc}") from None


# -- commands ----------------------------------------------------------------

def cmd_simulate(args):
    mesh = _mesh(args.mesh)
    if args.actions < 1:
        raise ValidationError("--actions must be >= 1")
    cfg = softsim.SimConfig()
    records = softsim.simulate(mesh, args.actions, args.seed, cfg, obstacles=not args.no_obstacles)
    store.write_trajectory(args.out, records, args.seed, cfg.hash(), mesh.mesh_id)
    missed = sum(r["missed"] for r in records)
    print(f"wrote {len(records)} records to {args.out} ({missed} missed grasps)")


def cmd_train(args):
    mesh = _mesh(args.mesh)
    cfg = _train_config(args)
    trajectories = [_trajectory(p, mesh) for p in args.data]
    rows = []
    result = train(mesh, trajectories, cfg, log=rows.append)
    store.save_checkpoint(result.model, args.out)
    if args.log:
        store.write_csv(args.log, rows, ("step", "total", "occ", "flow", "corr"))
    note = " (stopped on a non-finite loss)" if result.aborted else ""
    print(f"trained {len(rows)} steps, kept step {result.best_step}{note}; wrote {args.out}")
    return 3 if result.aborted else 0


def _ranking_tau(model, mesh, body, rec, rng, k, sim):
    """Kendall tau between predicted and simulated d_corr of k sampled actions
    toward the record's own outcome."""
    pre, target = rec["pre"], rec["post"]
    ident = np.arange(len(pre))
    state = softsim.SceneState(pre, np.zeros_like(pre), rec["obstacles"])
    pred, real = [], []
    for _ in range(k):
        a = softsim.sample_action(rec["observation"], rng, sim)
        ctx = model.context(rec["observation"].points, a)
        moved = pre + model.flow_predict(ctx, pre)[0]
        pred.append(planner.d_corr(moved, target, ident))
        res = softsim.execute(body, state, a, sim)
        real.append(planner.d_corr(res.state.positions, target, ident))
    return kendall_tau(pred, real)


def _nanmean(values):
    v = [x for x in values if not math.isnan(x)]
    return math.fsum(v) / len(v) if v else float("nan")


def evaluate_trajectory(model, mesh, records, rng, n_samples, rank_k, sim=softsim.SimConfig()):
    body = softsim.SoftBody.from_mesh(mesh)
    ious, vis, full, bits, accs, taus = [], [], [], [], [], []
    geo = []
    for rec in records:
        obs, pre = rec["observation"], rec["pre"]
        if obs.empty:
            raise ValidationError(f"record {rec['index']}: empty observation")
        ctx = model.context(obs.points)
        geo.append(ctx)
        lo, hi = pre.min(axis=0) - 0.05, pre.max(axis=0) + 0.05
        iou, _ = miou(lambda p: model.occupancy(ctx, p)[0] > planner.STATE_TAU,
                      lambda p: inside_mask(mesh, pre, p), lo, hi, n_samples, rng)
        ious.append(iou)
        flow = model.flow_predict(model.context(obs.points, rec["action"]), pre)[0]
        full.append(flow_mse(flow, rec["flow"]))
        vis.append(flow_mse(flow, rec["flow"], np.unique(obs.vertex_ids)))
        if rank_k >= 2:
            taus.append(_ranking_tau(model, mesh, body, rec, rng, rank_k, sim))
    for a, b, ca, cb in zip(records, records[1:], geo, geo[1:]):
        xi = match(model.embed(ca, a["pre"])[0], model.embed(cb, b["pre"])[0])
        ident = np.arange(len(a["pre"]))
        bits.append(fmr(xi, ident, b["pre"], DESK_TAU1, TAU2))
        accs.append(corr_accuracy(xi, ident, b["pre"], DESK_ACC_RADIUS))
    return {"records": len(records), "miou": _nanmean(ious), "vis_mse": _nanmean(vis),
            "full_mse": _nanmean(full), "fmr": _nanmean(bits), "accuracy": _nanmean(accs),
            "kendall_tau": _nanmean(taus)}


def cmd_evaluate(args):
    mesh = _mesh(args.mesh)
    model = _checkpoint(args.checkpoint)
    if args.miou_samples < 1:
        raise ValidationError("--miou-samples must be >= 1")
    data = [(p, _trajectory(p, mesh)) for p in args.data]
    rng = np.random.default_rng(args.seed)
    rows = []
    for path, records in data:
        row = evaluate_trajectory(model, mesh, records, rng, args.miou_samples, args.rank_k)
        rows.append({"trajectory": Path(path).name, **row,
                     "config_hash": model.meta.get("config_hash", ""),
                     "data_hash": records[0]["config_hash"], "version": __version__})
    store.write_csv(args.out, rows, EVAL_COLUMNS)
    print(store.csv_text(rows, EVAL_COLUMNS), end="")


def cmd_plan(args):
    mesh = _mesh(args.mesh)
    model = _checkpoint(args.checkpoint) if args.checkpoint else None
    sim = softsim.SimConfig()
    try:
        problem = planner.make_problem(
            mesh, args.start_seed, args.target_seed, args.target_actions,
            obstacles=not args.no_obstacles, sim=sim, k=args.k, horizon=args.horizon,
            dynamics=args.dynamics, cost=args.cost, model=model,
            correspondence=args.correspondence)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    result = planner.plan(problem, args.seed)
    best = result.best
    executed = planner.evaluate_plan(problem, best.actions, args.miou_samples, args.seed)
    report = {
        "version": __version__,
        "config_hash": sim.hash(),
        "model_hash": model.meta.get("config_hash", "") if model else "",
        "mesh_id": mesh.mesh_id,
        "problem": {"mesh": args.mesh, "start_seed": args.start_seed,
                    "target_seed": args.target_seed, "target_actions": args.target_actions,
                    "k": args.k, "horizon": args.horizon, "dynamics": args.dynamics,
                    "cost": args.cost, "correspondence": problem.correspondence,
                    "seed": args.seed},
        "best": {"index": best.index, "predicted_cost": best.cost,
                 "actions": [a.to_json() for a in best.actions]},
        "ranking": result.ranking,
        "candidates": [{"index": r.index, "valid": r.valid,
                        "cost": r.cost if r.valid else None} for r in result.rollouts],
        "executed": executed,
    }
    if args.rank_all:
        costs = planner.executed_costs(problem, result)
        report["executed_costs"] = {str(i): c for i, c in sorted(costs.items())}
        report["kendall_tau"] = planner.ranking_tau(result, costs) if len(costs) > 1 else None
    Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n")
    if args.csv:
        row = {**report["problem"], "best": best.index, "predicted_cost": best.cost,
               **executed, "config_hash": sim.hash(), "version": __version__}
        store.write_csv(args.csv, [row], PLAN_COLUMNS)
    print(f"best candidate {best.index}: executed distance {executed['distance']:.4f} m, "
          f"success {executed['success']}")


def _mean_col(rows, key):
    vals = []
    for r in rows:
        v = r.get(key, "")
        if v in ("", None):
            continue
        v = 1.0 if v == "True" else 0.0 if v == "False" else float(v)
        if not math.isnan(v):
            vals.append(v)
    return math.fsum(vals) / len(vals) if vals else float("nan")


def cmd_report(args):
    root = Path(args.metrics_dir)
    if not root.is_dir():
        raise ValidationError(f"{root}: not a directory")
    out = []
    for path in sorted(root.glob("*.csv")):
        rows = store.read_csv(path)
        if not rows:
            continue
        cols = rows[0].keys()
        if "fmr" in cols:
            kind = "evaluate"
            keys = ("miou", "vis_mse", "full_mse", "fmr", "accuracy", "kendall_tau")
        elif "success" in cols:
            kind = "plan"
            keys = ("d_corr", "chamfer", "fscore", "miou")
        else:
            continue
        row = {"source": path.name, "kind": kind, "rows": len(rows)}
        row.update({k: _mean_col(rows, k) for k in keys})
        if kind == "plan":
            row["success_rate"] = _mean_col(rows, "success")
        out.append(row)
    if not out:
        print(f"warning: no metrics tables in {root}", file=sys.stderr)
    text = store.csv_text(out, REPORT_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


# -- entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="softplan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"softplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="record a trajectory of random actions")
    s.add_argument("--mesh", required=True, help="mesh JSON file or built-in name")
    s.add_argument("--actions", type=int, required=True, help="number of actions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output JSON-lines file")
    s.add_argument("--no-obstacles", action="store_true", help="leave the table empty")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="fit all decoder heads jointly")
    t.add_argument("--mesh", required=True)
    t.add_argument("--data", nargs="+", required=True, help="trajectory files, one per trajectory")
    t.add_argument("--config", help="JSON object of training settings")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--corr", choices=("geo", "euclid", "none"), help="correspondence loss")
    t.add_argument("--no-fusion", action="store_true", help="flow head without geometry fusion")
    t.add_argument("--out", required=True, help="checkpoint JSON")
    t.add_argument("--log", help="per-step loss CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on held-out trajectories")
    e.add_argument("--mesh", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--miou-samples", type=int, default=100_000)
    e.add_argument("--rank-k", type=int, default=8,
                   help="sampled actions per record for the ranking score (<2 skips it)")
    e.add_argument("--out", required=True, help="metrics CSV, one row per trajectory")
    e.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("plan", help="random-shooting plan toward a target configuration")
    q.add_argument("--mesh", required=True)
    q.add_argument("--start-seed", type=int, required=True)
    q.add_argument("--target-seed", type=int, required=True)
    q.add_argument("--target-actions", type=int, default=1,
                   help="random actions separating target from start")
    q.add_argument("--k", type=int, default=64, help="candidate sequences")
    q.add_argument("--horizon", type=int, default=3, help="actions per candidate")
    q.add_argument("--dynamics", choices=planner.DYNAMICS, default="oracle")
    q.add_argument("--cost", choices=planner.COSTS, default="dcorr")
    q.add_argument("--correspondence", choices=("gt", "learned"), default="gt")
    q.add_argument("--checkpoint", help="model for learned dynamics or correspondence")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--miou-samples", type=int, default=100_000)
    q.add_argument("--no-obstacles", action="store_true")
    q.add_argument("--rank-all", action="store_true",
                   help="execute every candidate and report the ranking Kendall tau")
    q.add_argument("--out", required=True, help="plan report JSON")
    q.add_argument("--csv", help="executed-metrics CSV")
    q.set_defaults(func=cmd_plan)

    r = sub.add_parser("report", help="summarise a directory of metrics CSVs")
    r.add_argument("--metrics-dir", required=True)
    r.add_argument("--out", help="summary CSV")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

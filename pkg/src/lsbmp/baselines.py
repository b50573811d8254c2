"""True-state planners used as references for the latent planner.

RRT-BestNear runs the identical exploration loop on the ground-truth 2-D
state: uniform free-space samples, best-first selection in a Euclidean ball,
single-integrator Monte Carlo propagation, and exact segment collision
checks. FMT* plans over a batch of samples with straight-line steering (the
single integrator's exact local connection) and lazy dynamic programming.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from . import world
from .planner import PlanConfig, PlanResult
from .treesearch import Checkpoint, Tree, grow_tree


def _require_free(name, x, obstacles):
    if world.point_collides(x, obstacles):
        raise ValueError(f"{name} state lies inside an obstacle")


def rrt_bestnear_plan(start, goal, obstacles, cfg: PlanConfig, r_goal: float,
                      wcfg: world.WorldConfig | None = None,
                      bank: np.ndarray | None = None, budgets=None,
                      tree_out: list | None = None):
    """RRT-BestNear on the true planar state.

    bank, when given, replaces uniform free-space sampling with draws from a
    fixed state set, mirroring the latent planner's sampling (used by the
    shared-strategy equivalence checks). tree_out, when a list, receives the
    grown Tree (diagnostics only).
    """
    if wcfg is None:
        wcfg = world.WorldConfig()
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    _require_free("start", start, obstacles)
    _require_free("goal", goal, obstacles)
    if r_goal <= 0:
        raise ValueError("r_goal must be positive")
    # default tuned on empty-world reachability vs cost quality at 2000
    # samples; squared radius, so this is a ball of radius ~0.11
    delta = cfg.delta if cfg.delta is not None else 0.012
    single = budgets is None
    if single:
        budgets = [cfg.n_samples]
    rng = np.random.default_rng(cfg.seed)

    def goal_mask(points):
        return np.linalg.norm(points - goal, axis=1) <= r_goal

    if np.linalg.norm(start - goal) <= r_goal:
        result = PlanResult("solved", start[None, :], np.empty((0, 2)), None,
                            0.0, {"iterations": 0, "nodes": 1,
                                  "edges_rejected_collision": 0,
                                  "space": "true-state"})
        cps = [Checkpoint(b, True, 0.0, 0, 1, 0) for b in sorted(budgets)]
        return result if single else (result, cps)

    tree = Tree(2)
    tree.add(start, -1, None, None, 0.0, None)

    def sample_fn(r):
        if r.random() < cfg.goal_bias:
            return goal
        if bank is not None:
            return bank[int(r.integers(len(bank)))]
        while True:
            p = r.uniform(0.0, 1.0, size=2)
            if not world.point_collides(p, obstacles):
                return p

    def select_fn(t, s):
        return t.best_first_select(s, delta)

    def propagate_fn(x0, r):
        t_prop = int(r.integers(1, cfg.t_max + 1))
        u = r.uniform(-cfg.u_max, cfg.u_max, size=2)
        waypoints = np.empty((t_prop, 2))
        x = x0
        for t in range(t_prop):
            x = world.step(x, u, wcfg)
            waypoints[t] = x
        controls = np.tile(u, (t_prop, 1))
        edge_cost = float(np.linalg.norm(controls, axis=1).sum() * wcfg.dt)
        return waypoints, controls, edge_cost, None

    def validate_fn(x0, waypoints, controls):
        full = np.concatenate([x0[None, :], waypoints], axis=0)
        return not world.path_collides(full, obstacles)

    checkpoints = grow_tree(tree, rng, budgets, sample_fn, select_fn,
                            propagate_fn, validate_fn, goal_mask)
    if tree_out is not None:
        tree_out.append(tree)
    result = _extract_true(tree, checkpoints[-1])
    return result if single else (result, checkpoints)


def _extract_true(tree: Tree, cp: Checkpoint) -> PlanResult:
    stats = {"iterations": cp.budget, "nodes": cp.nodes,
             "edges_rejected_collision": cp.edges_rejected,
             "space": "true-state"}
    if not cp.solved:
        return PlanResult("failure", tree.points[:1].copy(), np.empty((0, 2)),
                          None, math.inf, stats)
    states, controls = tree.path_to_root(cp.best_node)
    return PlanResult("solved", states, controls, None, float(cp.best_cost), stats)


# ---------------------------------------------------------------------------
# FMT*
# ---------------------------------------------------------------------------


def fmt_radius(n: int, free_area: float = 1.0) -> float:
    """Connection radius from the standard asymptotic-optimality
    prescription, with a 1.1 tuning multiplier."""
    if n < 2:
        return math.sqrt(2.0)
    return 1.1 * math.sqrt(2.0 * free_area * math.log(n) / (math.pi * n))


def _sample_free(rng, obstacles, n):
    pts = np.empty((n, 2))
    k = 0
    while k < n:
        cand = rng.uniform(0.0, 1.0, size=(max(16, n - k), 2))
        for p in cand:
            if not world.point_collides(p, obstacles):
                pts[k] = p
                k += 1
                if k == n:
                    break
    return pts


def _discretize_polyline(path: np.ndarray, wcfg: world.WorldConfig):
    """Turn a polyline into a dynamically feasible control/state sequence:
    full-speed steps along each segment with a final partial step."""
    step_len = wcfg.u_max * wcfg.dt
    states = [path[0]]
    controls = []
    for a, b in zip(path[:-1], path[1:]):
        seg = b - a
        dist = float(np.linalg.norm(seg))
        if dist == 0.0:
            continue
        direction = seg / dist
        n_full = int(dist // step_len)
        for i in range(n_full):
            controls.append(direction * wcfg.u_max)
            states.append(a + direction * step_len * (i + 1))
        rem = dist - n_full * step_len
        if rem > 1e-12:
            controls.append(direction * (rem / wcfg.dt))
            states.append(b)
        else:
            states[-1] = b
    return (np.asarray(states),
            np.asarray(controls) if controls else np.empty((0, 2)))


def fmt_star_plan(start, goal, obstacles, n_samples: int, r_goal: float,
                  seed=0, radius: float | None = None,
                  wcfg: world.WorldConfig | None = None,
                  presampled: np.ndarray | None = None) -> PlanResult:
    """FMT* with straight-line steering and exact collision checking.

    Lazy dynamic programming over a uniform free-space sample batch: expand
    the lowest-cost open node, connecting each unvisited neighbor through its
    best open parent, checking only that single connection for collision.
    presampled, when given, supplies the free-space samples (prefix-shared
    sample sets across budgets reuse one stream).
    """
    if wcfg is None:
        wcfg = world.WorldConfig()
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    _require_free("start", start, obstacles)
    _require_free("goal", goal, obstacles)
    if r_goal <= 0:
        raise ValueError("r_goal must be positive")
    if presampled is None:
        rng = np.random.default_rng(seed)
        samples = _sample_free(rng, obstacles, n_samples)
    else:
        if presampled.shape[0] < n_samples:
            raise ValueError("presampled set smaller than n_samples")
        samples = presampled[:n_samples]
    pts = np.concatenate([start[None, :], samples, goal[None, :]], axis=0)
    n = pts.shape[0]
    goal_idx = n - 1
    r = radius if radius is not None else fmt_radius(n)

    tree = cKDTree(pts)
    neighbors = tree.query_ball_point(pts, r)
    in_goal = np.linalg.norm(pts - goal, axis=1) <= r_goal
    in_goal[goal_idx] = True

    INF = math.inf
    cost = np.full(n, INF)
    parent = np.full(n, -1, dtype=np.int64)
    cost[0] = 0.0
    unvisited = np.ones(n, dtype=bool)
    unvisited[0] = False
    open_set = {0}

    checked: dict[tuple[int, int], bool] = {}

    def edge_free(i, j):
        key = (i, j) if i < j else (j, i)
        hit = checked.get(key)
        if hit is None:
            hit = world.segment_collides(pts[i], pts[j], obstacles)
            checked[key] = hit
        return not hit

    stats = {"iterations": 0, "nodes": n, "edges_rejected_collision": 0,
             "space": "true-state"}
    z = 0
    while True:
        if in_goal[z]:
            break
        open_new = []
        for x in neighbors[z]:
            if not unvisited[x]:
                continue
            # lowest-cost open parent, checked lazily for collision
            best_y, best_c = -1, INF
            for y in neighbors[x]:
                if y in open_set:
                    c = cost[y] + float(np.linalg.norm(pts[x] - pts[y]))
                    if c < best_c:
                        best_y, best_c = y, c
            if best_y >= 0:
                if edge_free(best_y, x):
                    cost[x] = best_c
                    parent[x] = best_y
                    unvisited[x] = False
                    open_new.append(x)
                else:
                    stats["edges_rejected_collision"] += 1
        open_set.discard(z)
        open_set.update(open_new)
        stats["iterations"] += 1
        if not open_set:
            return PlanResult("failure", start[None, :], np.empty((0, 2)),
                              None, INF, stats)
        z = min(open_set, key=lambda i: (cost[i], i))

    chain = []
    j = z
    while j >= 0:
        chain.append(j)
        j = int(parent[j])
    chain.reverse()
    polyline = pts[chain]
    states, controls = _discretize_polyline(polyline, wcfg)
    return PlanResult("solved", states, controls, None, float(cost[z]), stats)

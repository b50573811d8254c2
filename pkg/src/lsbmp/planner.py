"""Tree search directly in the learned latent space.

The planner encodes the start and goal images, grows a tree by sampling
encoded corpus states (with goal biasing), selecting the lowest-cost node
inside a Gramian-metric ball, propagating the learned dynamics under random
piecewise-constant controls, and keeping edges only when the collision
classifier rates every waypoint pair collision-free above a confidence
threshold. The best trajectory reaching the latent goal ball is decoded back
to image space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .training import LatentModel, gramian_batch
from .treesearch import Checkpoint, Tree, grow_tree


@dataclass
class PlanConfig:
    n_samples: int = 1000
    t_max: int = 10
    alpha: float = 0.9
    goal_bias: float = 0.1
    delta: float | None = None     # squared metric ball radius; None = auto from bank
    r_goal: float | None = None    # latent goal radius; None = auto from bank
    gramian_eps: float = 1e-3
    u_max: float = 0.5
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= self.goal_bias < 1.0:
            raise ValueError("goal_bias must lie in [0, 1)")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class PlanProblem:
    x_init_image: np.ndarray        # full state of the start
    goal_image: np.ndarray          # a state inside the goal region
    env_image: np.ndarray           # decoder conditioning image
    obstacle_features: np.ndarray   # collision-net environment vector
    r_goal: float | None = None     # overrides PlanConfig.r_goal when set
    true_obstacles: object = None   # ground truth, for evaluation only
    start_state: np.ndarray | None = None
    goal_state: np.ndarray | None = None


@dataclass
class PlanResult:
    status: str                     # "solved" | "failure"
    latent: np.ndarray              # (K+1, d_z)
    controls: np.ndarray            # (K, d_u)
    decoded: np.ndarray | None      # (K+1, n_pixels)
    cost: float
    stats: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def to_json_dict(self, include_decoded: bool = False) -> dict:
        doc = {
            "status": self.status,
            "cost": self.cost,
            "controls": np.asarray(self.controls).tolist(),
            "latent": np.asarray(self.latent).tolist(),
            "stats": self.stats,
        }
        if include_decoded and self.decoded is not None:
            doc["decoded"] = np.asarray(self.decoded).tolist()
        return doc


# ---------------------------------------------------------------------------
# Sampling machinery
# ---------------------------------------------------------------------------


def build_sample_bank(model: LatentModel, corpus_states: np.ndarray, n: int,
                      seed) -> np.ndarray:
    """Encode n states drawn from the corpus (without replacement when it is
    large enough). Keeping samples on the encoded corpus keeps exploration
    near the part of the latent space the model actually learned."""
    corpus = np.asarray(corpus_states, dtype=float)
    if corpus.ndim != 2 or corpus.shape[0] == 0:
        raise ValueError("corpus must be a non-empty 2-D array of states")
    rng = np.random.default_rng(seed)
    m = corpus.shape[0]
    idx = rng.choice(m, size=n, replace=n > m)
    bank = np.empty((n, model.d_z))
    for lo in range(0, n, 4096):
        bank[lo: lo + 4096] = model.encode(corpus[idx[lo: lo + 4096]])
    return bank


def sample_latent(bank: np.ndarray, z_goal: np.ndarray, goal_bias: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Goal state with probability goal_bias, else a uniform bank element."""
    if len(bank) == 0:
        raise ValueError("sample bank is empty")
    if rng.random() < goal_bias:
        return z_goal
    return bank[int(rng.integers(len(bank)))]


def bank_chol_factors(model: LatentModel, points: np.ndarray,
                      eps: float) -> np.ndarray:
    """Cholesky factors of the regularized Gramian at each point (u = 0)."""
    u0 = np.zeros((points.shape[0], 2))
    G = gramian_batch(model, points, u0, eps)
    return np.linalg.cholesky(G)


def auto_goal_radius(bank: np.ndarray) -> float:
    """Default latent goal radius: 25th percentile of the bank's Euclidean
    nearest-neighbor distances."""
    if len(bank) < 2:
        return 0.1
    d, _ = cKDTree(bank).query(bank, k=2)
    return float(np.percentile(d[:, 1], 25))

def auto_delta(model: LatentModel, bank: np.ndarray, eps: float) -> float:
    """Default selection ball: 4x the bank's median nearest-neighbor squared
    distance under each point's own Gramian metric."""
    m = len(bank)
    if m < 2:
        return 1.0
    chols = bank_chol_factors(model, bank, eps)
    nn_d = np.empty(m)
    for i in range(m):
        e = bank - bank[i]
        w = np.linalg.solve(chols[i], e.T).T
        d = (w * w).sum(axis=1)
        d[i] = np.inf
        nn_d[i] = d.min()
    return 4.0 * float(np.median(nn_d))


# ---------------------------------------------------------------------------
# Propagation and edge gating
# ---------------------------------------------------------------------------


def mc_propagate(model: LatentModel, z_start: np.ndarray, t_max: int,
                 u_max: float, rng: np.random.Generator,
                 force_control: np.ndarray | None = None):
    """Monte Carlo propagation: hold one random control for a random number
    of steps T in {1..t_max}. Returns (waypoints (T, d_z), controls (T, 2)),
    or None when the rollout leaves the finite range (caller retries)."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    t_prop = int(rng.integers(1, t_max + 1))
    u = rng.uniform(-u_max, u_max, size=2)
    if force_control is not None:
        u = np.asarray(force_control, dtype=float)
    waypoints = np.empty((t_prop, len(z_start)))
    z = np.asarray(z_start, dtype=float)
    try:
        for t in range(t_prop):
            z = model.dyn_step(z, u)
            waypoints[t] = z
    except nn.NumericError:
        return None
    return waypoints, np.tile(u, (t_prop, 1))


def edge_collision_free(ccnet, waypoints_with_start: np.ndarray,
                        features: np.ndarray, alpha: float) -> bool:
    """True iff sigmoid(logit) > alpha for every consecutive waypoint pair."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    zs = np.asarray(waypoints_with_start, dtype=float)
    k = zs.shape[0] - 1
    if k <= 0:
        return True
    feats = np.broadcast_to(np.asarray(features, dtype=float), (k, len(features)))
    pairs = np.concatenate([zs[:-1], zs[1:], feats], axis=1)
    logits = np.asarray(ccnet.forward(pairs)).ravel()
    # sigmoid(l) > alpha  <=>  l > log(alpha / (1 - alpha))
    return bool(np.all(logits > math.log(alpha / (1.0 - alpha))))


# ---------------------------------------------------------------------------
# The planner
# ---------------------------------------------------------------------------


def l2rrt_plan(model: LatentModel, ccnet, problem: PlanProblem,
               cfg: PlanConfig, bank: np.ndarray, budgets=None,
               tree_out: list | None = None) -> PlanResult | tuple[PlanResult, list[Checkpoint]]:
    """Plan in latent space; see the module docstring for the loop.

    With budgets=None, runs cfg.n_samples iterations and returns a
    PlanResult. With a budgets list, runs max(budgets) iterations on one seed
    stream and also returns per-budget checkpoints (the tree at a smaller
    budget is a prefix of the tree at a larger one). tree_out, when a list,
    receives the grown Tree (diagnostics only).
    """
    if model is None or ccnet is None:
        raise ValueError("l2rrt_plan needs a trained latent model and collision net")
    single = budgets is None
    if single:
        budgets = [cfg.n_samples]
    z_init = model.encode(np.asarray(problem.x_init_image, dtype=float).ravel())
    z_goal = model.encode(np.asarray(problem.goal_image, dtype=float).ravel())
    env_flat = np.asarray(problem.env_image, dtype=float).ravel()
    feats = np.asarray(problem.obstacle_features, dtype=float)
    r_goal = problem.r_goal if problem.r_goal is not None else cfg.r_goal
    if r_goal is None:
        r_goal = auto_goal_radius(bank)
    if r_goal <= 0:
        raise ValueError("r_goal must be positive")
    delta = cfg.delta if cfg.delta is not None else auto_delta(model, bank, cfg.gramian_eps)
    rng = np.random.default_rng(cfg.seed)

    def goal_mask(points):
        return np.linalg.norm(points - z_goal, axis=1) <= r_goal

    # trivial case: the start already lies in the latent goal ball
    if np.linalg.norm(z_init - z_goal) <= r_goal:
        latent = z_init[None, :]
        result = PlanResult("solved", latent, np.empty((0, 2)),
                            model.decode(latent, env_flat[None, :]), 0.0,
                            {"iterations": 0, "nodes": 1,
                             "edges_rejected_collision": 0})
        cps = [Checkpoint(b, True, 0.0, 0, 1, 0) for b in sorted(budgets)]
        return result if single else (result, cps)

    tree = Tree(model.d_z)
    root_chol = bank_chol_factors(model, z_init[None, :], cfg.gramian_eps)[0]
    tree.add(z_init, -1, None, None, 0.0, root_chol)

    def sample_fn(r):
        return sample_latent(bank, z_goal, cfg.goal_bias, r)

    def select_fn(t, s):
        return t.best_first_select(s, delta)

    def propagate_fn(z0, r):
        edge = mc_propagate(model, z0, cfg.t_max, cfg.u_max, r)
        if edge is None:
            return None
        waypoints, controls = edge
        edge_cost = float(np.linalg.norm(controls, axis=1).sum() * cfg.dt)
        chol = bank_chol_factors(model, waypoints[-1][None, :], cfg.gramian_eps)[0]
        return waypoints, controls, edge_cost, chol

    def validate_fn(z0, waypoints, controls):
        full = np.concatenate([z0[None, :], waypoints], axis=0)
        return edge_collision_free(ccnet, full, feats, cfg.alpha)

    checkpoints = grow_tree(tree, rng, budgets, sample_fn, select_fn,
                            propagate_fn, validate_fn, goal_mask)
    if tree_out is not None:
        tree_out.append(tree)
    result = _extract(tree, checkpoints[-1], model, env_flat)
    return result if single else (result, checkpoints)


def _extract(tree: Tree, cp: Checkpoint, model: LatentModel,
             env_flat: np.ndarray) -> PlanResult:
    stats = {"iterations": cp.budget, "nodes": cp.nodes,
             "edges_rejected_collision": cp.edges_rejected}
    if not cp.solved:
        return PlanResult("failure", tree.points[:1].copy(), np.empty((0, 2)),
                          None, math.inf, stats)
    latent, controls = tree.path_to_root(cp.best_node)
    decoded = model.decode(latent, env_flat[None, :])
    return PlanResult("solved", latent, controls, decoded,
                      float(cp.best_cost), stats)


# ---------------------------------------------------------------------------
# Problem file io (CLI surface)
# ---------------------------------------------------------------------------


def problem_to_json_dict(obstacles, start, goal, r_goal=None) -> dict:
    doc = {"environment": obstacles.to_json_dict(),
           "start": list(map(float, start)), "goal": list(map(float, goal))}
    if r_goal is not None:
        doc["r_goal"] = float(r_goal)
    return doc


def load_problem_file(path):
    from .world import ObstacleSet
    with open(path) as fh:
        doc = json.load(fh)
    obstacles = ObstacleSet.from_json_dict(doc["environment"])
    return (obstacles, np.asarray(doc["start"], dtype=float),
            np.asarray(doc["goal"], dtype=float), doc.get("r_goal"))

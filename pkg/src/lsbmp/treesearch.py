"""Shared tree-search skeleton.

Both the latent planner and the true-state RRT-BestNear baseline are this
loop with different (sample, select metric, propagate, validate) components,
which keeps "same exploration strategy" literal: given the same seed and the
same components they consume the random stream identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Tree:
    """Search tree over d-dimensional points with per-node selection metric.

    Each node stores the metric's Cholesky factor L (so the squared metric
    distance to a query point s is ||L^-1 (z - s)||^2); an identity factor
    gives plain squared Euclidean distance. Edges keep their waypoints and
    controls so any returned trajectory can be replayed step for step.
    """

    def __init__(self, d: int, cap: int = 256):
        self.d = d
        self.n = 0
        self._z = np.empty((cap, d))
        self._cost = np.empty(cap)
        self._parent = np.empty(cap, dtype=np.int64)
        self._chol = np.empty((cap, d, d))
        self.edge_waypoints: list[np.ndarray | None] = []
        self.edge_controls: list[np.ndarray | None] = []

    def _grow(self):
        cap = self._z.shape[0] * 2
        self._z = np.concatenate([self._z, np.empty_like(self._z)])
        self._cost = np.concatenate([self._cost, np.empty_like(self._cost)])
        self._parent = np.concatenate([self._parent, np.empty_like(self._parent)])
        self._chol = np.concatenate([self._chol, np.empty_like(self._chol)])
        assert self._z.shape[0] == cap

    def add(self, z, parent: int, waypoints, controls, edge_cost: float,
            chol: np.ndarray | None = None) -> int:
        if self.n == self._z.shape[0]:
            self._grow()
        i = self.n
        self._z[i] = z
        self._parent[i] = parent
        self._cost[i] = (0.0 if parent < 0 else self._cost[parent]) + edge_cost
        self._chol[i] = np.eye(self.d) if chol is None else chol
        self.edge_waypoints.append(None if waypoints is None else np.asarray(waypoints))
        self.edge_controls.append(None if controls is None else np.asarray(controls))
        self.n += 1
        return i

    @property
    def points(self) -> np.ndarray:
        return self._z[: self.n]

    @property
    def costs(self) -> np.ndarray:
        return self._cost[: self.n]

    def parent(self, i: int) -> int:
        return int(self._parent[i])

    def metric_dists(self, s: np.ndarray) -> np.ndarray:
        """Squared metric distance from every node to the query point."""
        e = self._z[: self.n] - s
        w = np.linalg.solve(self._chol[: self.n], e[:, :, None])[:, :, 0]
        return (w * w).sum(axis=1)

    def best_first_select(self, s: np.ndarray, delta: float) -> int:
        """Lowest-cost node within the metric ball of (squared) radius delta
        around s; nearest node if the ball is empty. Ties break to the lowest
        node index."""
        d = self.metric_dists(s)
        in_ball = d < delta
        if in_ball.any():
            idx = np.nonzero(in_ball)[0]
            return int(idx[np.argmin(self.costs[idx])])
        return int(np.argmin(d))

    def path_to_root(self, i: int):
        """Concatenated (points, controls) from the root to node i."""
        chain = []
        j = i
        while j >= 0:
            chain.append(j)
            j = self.parent(j)
        chain.reverse()
        pts = [self._z[chain[0]][None, :]]
        ctrls = []
        for j in chain[1:]:
            pts.append(self.edge_waypoints[j])
            ctrls.append(self.edge_controls[j])
        points = np.concatenate(pts, axis=0)
        controls = (np.concatenate(ctrls, axis=0) if ctrls
                    else np.empty((0, 0)))
        return points, controls


@dataclass
class Checkpoint:
    budget: int
    solved: bool
    best_cost: float | None
    best_node: int
    nodes: int
    edges_rejected: int


def grow_tree(tree: Tree, rng: np.random.Generator, budgets,
              sample_fn, select_fn, propagate_fn, validate_fn,
              goal_mask_fn) -> list[Checkpoint]:
    """Run sample -> select -> propagate -> gate -> insert for max(budgets)
    iterations, recording a checkpoint at each budget boundary.

    propagate_fn returns (waypoints, controls, edge_cost, chol_for_new_node)
    or None to discard the draw; validate_fn sees (start, waypoints,
    controls) and gates the whole edge.
    """
    budgets = sorted(budgets)
    checkpoints = []
    rejected = 0
    next_cp = 0
    for it in range(budgets[-1]):
        s = sample_fn(rng)
        idx = select_fn(tree, s)
        edge = propagate_fn(tree.points[idx], rng)
        if edge is not None:
            waypoints, controls, edge_cost, chol = edge
            if validate_fn(tree.points[idx], waypoints, controls):
                tree.add(waypoints[-1], idx, waypoints, controls, edge_cost, chol)
            else:
                rejected += 1
        while next_cp < len(budgets) and it + 1 == budgets[next_cp]:
            checkpoints.append(_snapshot(tree, budgets[next_cp], rejected, goal_mask_fn))
            next_cp += 1
    while next_cp < len(budgets):   # budgets of 0 iterations
        checkpoints.append(_snapshot(tree, budgets[next_cp], rejected, goal_mask_fn))
        next_cp += 1
    return checkpoints


def _snapshot(tree, budget, rejected, goal_mask_fn) -> Checkpoint:
    mask = goal_mask_fn(tree.points)
    if mask.any():
        idx = np.nonzero(mask)[0]
        best = int(idx[np.argmin(tree.costs[idx])])
        return Checkpoint(budget, True, float(tree.costs[best]), best,
                          tree.n, rejected)
    return Checkpoint(budget, False, None, -1, tree.n, rejected)

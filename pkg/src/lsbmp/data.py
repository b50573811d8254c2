"""Training-data collection for the three networks, plus the LSBD1 dataset
file format (magic "LSBD1", length-prefixed JSON header, raw little-endian
float32 arrays in header order).

Each environment derives its generator from (seed, env_index), so generation
is order-independent and can be sharded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import world
from .world import WorldConfig, ObstacleSet

MAGIC = b"LSBD1"


def config_hash(cfg: WorldConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def write_dataset(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(len(blob), dtype="<u4").tobytes())
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_dataset(path):
    """Returns (kind, meta, arrays) with arrays as float32. Rejects files
    whose magic does not match."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not an LSBD1 dataset file: {path}")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"truncated array {spec['name']!r} in {path}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape)
    return header["kind"], header["meta"], arrays


# ---------------------------------------------------------------------------
# Dynamics dataset: per environment, one collision-free random trajectory
# rendered to images
# ---------------------------------------------------------------------------


@dataclass
class DynamicsDataset:
    images: np.ndarray       # (n_envs, traj_len, S, S)
    controls: np.ndarray     # (n_envs, traj_len-1, 2)
    states: np.ndarray       # (n_envs, traj_len, 2) ground truth, for checks
    env_images: np.ndarray   # (n_envs, S, S)
    features: np.ndarray     # (n_envs, 4*k_max)
    seed: int
    cfg: WorldConfig

    @property
    def n_envs(self):
        return self.images.shape[0]

    @property
    def traj_len(self):
        return self.images.shape[1]

    def transitions(self):
        """Flatten to (x_t images, u_t, x_{t+1} images, env index) arrays."""
        n, T, S, _ = self.images.shape
        xt = self.images[:, :-1].reshape(n * (T - 1), S * S)
        xn = self.images[:, 1:].reshape(n * (T - 1), S * S)
        u = self.controls.reshape(n * (T - 1), 2)
        env_idx = np.repeat(np.arange(n), T - 1)
        return xt, u, xn, env_idx

    def save(self, path):
        write_dataset(path, "dynamics", {
            "images": self.images, "controls": self.controls,
            "states": self.states, "env_images": self.env_images,
            "features": self.features,
        }, {"seed": self.seed, "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg)})

    @classmethod
    def load(cls, path):
        kind, meta, arrays = read_dataset(path)
        if kind != "dynamics":
            raise ValueError(f"expected dynamics dataset, got {kind!r}")
        return cls(images=arrays["images"], controls=arrays["controls"],
                   states=arrays["states"], env_images=arrays["env_images"],
                   features=arrays["features"], seed=meta["seed"],
                   cfg=WorldConfig.from_dict(meta["config"]))


def _free_start(rng, obstacles, tries=1000):
    for _ in range(tries):
        p = rng.uniform(0.0, 1.0, size=2)
        if not world.point_collides(p, obstacles):
            return p
    return None


def _sample_environment_with_start(seed, env_index, cfg):
    # resample the whole environment if no free start can be found
    for attempt in range(100):
        env_seed = [seed, env_index, attempt] if attempt else [seed, env_index]
        obstacles = world.sample_environment(env_seed, cfg)
        rng = np.random.default_rng([seed, env_index, 10_000 + attempt])
        start = _free_start(rng, obstacles)
        if start is not None:
            return obstacles, start, rng
    raise RuntimeError(f"no free start found for environment {env_index}")


def collect_dynamics_dataset(n_envs: int, traj_len: int, seed: int,
                             cfg: WorldConfig) -> DynamicsDataset:
    """Roll out one random collision-free trajectory per environment.

    Controls are uniform in [-u_max, u_max]^2, resampled until the resulting
    step segment is collision free, so the stored trajectories never touch an
    obstacle.
    """
    if n_envs < 1 or traj_len < 2:
        raise ValueError("need n_envs >= 1 and traj_len >= 2")
    S = cfg.image_side
    images = np.empty((n_envs, traj_len, S, S), dtype=np.float32)
    controls = np.empty((n_envs, traj_len - 1, 2), dtype=np.float32)
    states = np.empty((n_envs, traj_len, 2), dtype=np.float32)
    env_images = np.empty((n_envs, S, S), dtype=np.float32)
    features = np.empty((n_envs, 4 * cfg.k_max), dtype=np.float32)
    for e in range(n_envs):
        obstacles, x, rng = _sample_environment_with_start(seed, e, cfg)
        env_img = world.render_env(obstacles, cfg)
        env_images[e] = env_img
        features[e] = world.obstacle_feature_vector(obstacles, cfg.k_max)
        states[e, 0] = x
        images[e, 0] = world.draw_robot(env_img, x, cfg)
        for t in range(traj_len - 1):
            u = np.zeros(2)
            for _ in range(1000):
                u = rng.uniform(-cfg.u_max, cfg.u_max, size=2)
                nxt = world.step(x, u, cfg)
                if not world.segment_collides(x, nxt, obstacles):
                    break
            else:
                u = np.zeros(2)
                nxt = x.copy()
            controls[e, t] = u
            x = nxt
            states[e, t + 1] = x
            images[e, t + 1] = world.draw_robot(env_img, x, cfg)
    return DynamicsDataset(images, controls, states, env_images, features, seed, cfg)


# ---------------------------------------------------------------------------
# Collision dataset: labeled local state pairs
# ---------------------------------------------------------------------------


@dataclass
class CollisionDataset:
    xa: np.ndarray           # (N, 2)
    xb: np.ndarray           # (N, 2)
    labels: np.ndarray       # (N,) 1.0 = segment collision free
    env_index: np.ndarray    # (N,) index into env_images/features
    env_images: np.ndarray   # (n_envs, S, S)
    features: np.ndarray     # (n_envs, 4*k_max)
    seed: int
    cfg: WorldConfig

    def __len__(self):
        return self.xa.shape[0]

    def save(self, path):
        write_dataset(path, "collision", {
            "xa": self.xa, "xb": self.xb, "labels": self.labels,
            "env_index": self.env_index.astype(np.float32),
            "env_images": self.env_images, "features": self.features,
        }, {"seed": self.seed, "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg)})

    @classmethod
    def load(cls, path):
        kind, meta, arrays = read_dataset(path)
        if kind != "collision":
            raise ValueError(f"expected collision dataset, got {kind!r}")
        return cls(xa=arrays["xa"], xb=arrays["xb"], labels=arrays["labels"],
                   env_index=arrays["env_index"].astype(np.int64),
                   env_images=arrays["env_images"], features=arrays["features"],
                   seed=meta["seed"], cfg=WorldConfig.from_dict(meta["config"]))


def collect_collision_dataset(n_envs: int, pairs_per_env: int, seed: int,
                              cfg: WorldConfig, t_max_edge: int = 10) -> CollisionDataset:
    """Sample local state pairs with exact collision labels.

    Pair endpoints are at most 2*u_max*dt*t_max_edge apart (the scale of a
    planner edge). Labels are balanced toward 50/50 by alternating the target
    label and rejection sampling, capped so degenerate environments (e.g. no
    obstacles) still terminate.
    """
    if n_envs < 1 or pairs_per_env < 1:
        raise ValueError("need n_envs >= 1 and pairs_per_env >= 1")
    S = cfg.image_side
    max_dist = 2.0 * cfg.u_max * cfg.dt * t_max_edge
    N = n_envs * pairs_per_env
    xa = np.empty((N, 2), dtype=np.float32)
    xb = np.empty((N, 2), dtype=np.float32)
    labels = np.empty(N, dtype=np.float32)
    env_index = np.empty(N, dtype=np.int64)
    env_images = np.empty((n_envs, S, S), dtype=np.float32)
    features = np.empty((n_envs, 4 * cfg.k_max), dtype=np.float32)
    n_pos = 0
    n_neg = 0
    k = 0
    for e in range(n_envs):
        obstacles, _, rng = _sample_environment_with_start(seed + 1_000_003, e, cfg)
        env_images[e] = world.render_env(obstacles, cfg)
        features[e] = world.obstacle_feature_vector(obstacles, cfg.k_max)
        for _ in range(pairs_per_env):
            want_free = n_pos <= n_neg
            a = b = None
            free = True
            for _ in range(200):
                a = _free_start(rng, obstacles)
                if a is None:
                    break
                for _ in range(100):
                    b = rng.uniform(0.0, 1.0, size=2)
                    if np.linalg.norm(b - a) <= max_dist:
                        break
                free = not world.segment_collides(a, b, obstacles)
                if free == want_free:
                    break
            xa[k] = a
            xb[k] = b
            labels[k] = 1.0 if free else 0.0
            env_index[k] = e
            if free:
                n_pos += 1
            else:
                n_neg += 1
            k += 1
    return CollisionDataset(xa, xb, labels, env_index, env_images, features, seed, cfg)

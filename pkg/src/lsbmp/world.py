"""Ground-truth planar world: a point robot with single-integrator dynamics in
the unit square, random circle/square obstacle fields, an exact continuous
collision test, and a 32x32 grayscale renderer.

Collision semantics follow the robot's center point only; the rendered robot
radius is cosmetic. Images use a y-down convention with pixel (i, j) sampled
at cell center ((j+0.5)/S, (i+0.5)/S).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

CIRCLE = "circle"
SQUARE = "square"


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    u_max: float = 0.5
    n_min: int = 3
    n_max: int = 8
    circle_radius: tuple[float, float] = (0.05, 0.15)
    square_half_width: tuple[float, float] = (0.05, 0.15)
    robot_radius_px: float = 1.5
    image_side: int = 32
    k_max: int = 8   # obstacle feature vector capacity

    def __post_init__(self):
        if self.dt <= 0 or self.u_max <= 0:
            raise ValueError("dt and u_max must be positive")
        if not (0 <= self.n_min <= self.n_max):
            raise ValueError("bad obstacle count range")
        for lo, hi in (self.circle_radius, self.square_half_width):
            if not (0 < lo <= hi <= 0.5):
                raise ValueError("obstacle size range must be within (0, 0.5]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("circle_radius", "square_half_width"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Obstacle:
    shape: str           # CIRCLE or SQUARE
    cx: float
    cy: float
    size: float          # radius for circles, half-width for squares


@dataclass(frozen=True)
class ObstacleSet:
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.obstacles)

    def __iter__(self):
        return iter(self.obstacles)

    def to_json_dict(self):
        return {"obstacles": [{"shape": o.shape, "cx": o.cx, "cy": o.cy, "size": o.size}
                              for o in self.obstacles]}

    @classmethod
    def from_json_dict(cls, d):
        return cls(tuple(Obstacle(o["shape"], float(o["cx"]), float(o["cy"]),
                                  float(o["size"])) for o in d["obstacles"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _fits_inside(shape, cx, cy, size):
    # square obstacles are axis-aligned, so both shapes need center +/- size
    # inside the unit square
    return size <= cx <= 1.0 - size and size <= cy <= 1.0 - size


def sample_environment(seed, cfg: WorldConfig) -> ObstacleSet:
    """Deterministically draw an obstacle field for the given seed.

    Obstacle count is uniform in [n_min, n_max]; each obstacle is rejection
    sampled (up to 1000 tries) to lie fully inside the unit square, after
    which its size is shrunk to fit.
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    obstacles = []
    for _ in range(count):
        for attempt in range(1000):
            shape = CIRCLE if rng.random() < 0.5 else SQUARE
            cx, cy = rng.uniform(0.0, 1.0, size=2)
            lo, hi = cfg.circle_radius if shape == CIRCLE else cfg.square_half_width
            size = rng.uniform(lo, hi)
            if _fits_inside(shape, cx, cy, size):
                break
        else:
            size = min(size, cx, 1.0 - cx, cy, 1.0 - cy)
        obstacles.append(Obstacle(shape, float(cx), float(cy), float(size)))
    return ObstacleSet(tuple(obstacles))


def step(x, u, cfg: WorldConfig):
    """Single-integrator step x' = clamp(x + u*dt), with u clamped to the
    per-axis control bound first."""
    u = np.clip(np.asarray(u, dtype=float), -cfg.u_max, cfg.u_max)
    return np.clip(np.asarray(x, dtype=float) + u * cfg.dt, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Exact collision tests
# ---------------------------------------------------------------------------


def _point_segment_dist_sq(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    len_sq = dx * dx + dy * dy
    if len_sq == 0.0:
        ex, ey = px - ax, py - ay
        return ex * ex + ey * ey
    t = ((px - ax) * dx + (py - ay) * dy) / len_sq
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    ex, ey = px - (ax + t * dx), py - (ay + t * dy)
    return ex * ex + ey * ey


def _segment_hits_box(ax, ay, bx, by, lox, hix, loy, hiy):
    # slab clipping of the parametric segment against the box, boundaries
    # inclusive
    tmin, tmax = 0.0, 1.0
    for p0, d, lo, hi in ((ax, bx - ax, lox, hix), (ay, by - ay, loy, hiy)):
        if d == 0.0:
            if p0 < lo or p0 > hi:
                return False
        else:
            t0 = (lo - p0) / d
            t1 = (hi - p0) / d
            if t0 > t1:
                t0, t1 = t1, t0
            tmin = max(tmin, t0)
            tmax = min(tmax, t1)
            if tmin > tmax:
                return False
    return True


def obstacle_hit(a, b, obs: Obstacle) -> bool:
    """True iff the closed segment a-b touches the obstacle (inclusive)."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    if obs.shape == CIRCLE:
        return _point_segment_dist_sq(obs.cx, obs.cy, ax, ay, bx, by) <= obs.size * obs.size
    return _segment_hits_box(ax, ay, bx, by,
                             obs.cx - obs.size, obs.cx + obs.size,
                             obs.cy - obs.size, obs.cy + obs.size)


def segment_collides(a, b, obstacles: ObstacleSet) -> bool:
    """Exact continuous test: does the straight segment a-b intersect any
    obstacle? A degenerate segment (a == b) reduces to point membership."""
    return any(obstacle_hit(a, b, o) for o in obstacles)


def point_collides(p, obstacles: ObstacleSet) -> bool:
    return segment_collides(p, p, obstacles)


def path_collides(states, obstacles: ObstacleSet) -> bool:
    """Piecewise-linear trajectory check over consecutive state pairs."""
    for i in range(len(states) - 1):
        if segment_collides(states[i], states[i + 1], obstacles):
            return True
    return False


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _pixel_centers(side):
    c = (np.arange(side) + 0.5) / side
    return np.meshgrid(c, c)   # (X cols, Y rows), both (side, side)


def render_env(obstacles: ObstacleSet, cfg: WorldConfig) -> np.ndarray:
    """Obstacles at intensity 0.5 on a black background, no robot."""
    side = cfg.image_side
    X, Y = _pixel_centers(side)
    img = np.zeros((side, side))
    for o in obstacles:
        if o.shape == CIRCLE:
            mask = (X - o.cx) ** 2 + (Y - o.cy) ** 2 <= o.size ** 2
        else:
            mask = (np.abs(X - o.cx) <= o.size) & (np.abs(Y - o.cy) <= o.size)
        img[mask] = 0.5
    return img


def draw_robot(env_image: np.ndarray, x, cfg: WorldConfig) -> np.ndarray:
    """Paint the robot disk (intensity 1.0, radius robot_radius_px pixels)
    over an environment image. The robot is drawn last, so its pixels win."""
    side = cfg.image_side
    jj, ii = np.meshgrid(np.arange(side) + 0.5, np.arange(side) + 0.5)
    d_sq = (jj - x[0] * side) ** 2 + (ii - x[1] * side) ** 2
    img = env_image.copy()
    img[d_sq <= cfg.robot_radius_px ** 2] = 1.0
    return img


def render(x, obstacles: ObstacleSet, cfg: WorldConfig) -> np.ndarray:
    return draw_robot(render_env(obstacles, cfg), x, cfg)


def brightest_centroid(img: np.ndarray) -> np.ndarray:
    """Centroid of the maximal-intensity pixels, in world coordinates.

    Used to read a robot position back out of a rendered or decoded image.
    """
    side = img.shape[0]
    m = img >= img.max() - 1e-9
    ii, jj = np.nonzero(m)
    return np.array([(jj.mean() + 0.5) / side, (ii.mean() + 0.5) / side])


# ---------------------------------------------------------------------------
# Obstacle feature vector
# ---------------------------------------------------------------------------


def obstacle_feature_vector(obstacles: ObstacleSet, k_max: int = 8) -> np.ndarray:
    """Fixed-width environment descriptor: per slot [type, cx, cy, size] with
    type 0 for circles and 1 for squares, slots sorted by (cx, cy), unused
    slots filled with [-1, 0, 0, 0]."""
    if len(obstacles) > k_max:
        raise ValueError(f"obstacle count {len(obstacles)} exceeds capacity {k_max}")
    feat = np.zeros(4 * k_max)
    feat[0::4] = -1.0
    ordered = sorted(obstacles, key=lambda o: (o.cx, o.cy))
    for i, o in enumerate(ordered):
        feat[4 * i: 4 * i + 4] = (0.0 if o.shape == CIRCLE else 1.0, o.cx, o.cy, o.size)
    return feat

"""Constructions shared by planner/baseline tests: an exact identity latent
model over the true 2-D state and a collision "net" backed by the exact
geometric oracle."""

import numpy as np

from lsbmp import nn, world
from lsbmp.training import LatentModel


class IntegratorLayer:
    """Exact clamped single integrator as a network layer: forward computes
    clamp(z + dt*u, 0, 1); backward reports the interior-side Jacobian
    [I, dt*I], so the planner's Gramian metric is (dt^2 + eps) * I at every
    node. Test double for the 'identity latent map' setups."""

    kind = "integrator"

    def __init__(self, dt):
        self.dt = dt

    def check_in(self, in_dim):
        if in_dim != 4:
            raise ValueError("integrator expects [z, u] with 2+2 dims")
        return 2

    def init_params(self, rng):
        pass

    def params(self):
        return []

    def forward(self, x):
        z, u = x[:, :2], x[:, 2:]
        return np.clip(z + self.dt * u, 0.0, 1.0), None

    def backward(self, cache, dy):
        dx = np.concatenate([dy, self.dt * dy], axis=1)
        return [], dx


def identity_latent_model(dt: float = 0.1, env_dim: int = 2) -> LatentModel:
    """Latent model whose 'images' are the true 2-D states: encode is the
    identity, dynamics is the exact clamped single integrator, decode returns
    the latent state untouched."""
    enc = nn.Network([nn.Dense(2, 2, W=np.eye(2), b=np.zeros(2))])
    Wdec = np.zeros((2 + env_dim, 2))
    Wdec[:2, :2] = np.eye(2)
    dec = nn.Network([nn.Dense(2 + env_dim, 2, W=Wdec, b=np.zeros(2))])
    dyn = nn.Network([IntegratorLayer(dt)], in_dim=4)
    return LatentModel(enc, dec, dyn, 2, 2)


def identity_metric_delta(euclid_delta_sq: float, dt: float = 0.1,
                          eps: float = 1e-3) -> float:
    """Convert a squared-Euclidean selection ball to the identity model's
    Gramian metric, where G = (dt^2 + eps) I."""
    return euclid_delta_sq / (dt * dt + eps)


class OracleCollisionNet:
    """Drop-in for the learned collision net: +/-10 logits straight from the
    exact segment test. Ignores the feature columns."""

    def __init__(self, obstacles):
        self.obstacles = obstacles

    def forward(self, pairs):
        pairs = np.atleast_2d(pairs)
        out = np.empty((pairs.shape[0], 1))
        for i, row in enumerate(pairs):
            hit = world.segment_collides(row[0:2], row[2:4], self.obstacles)
            out[i, 0] = -10.0 if hit else 10.0
        return out


def always_free_net(feature_dim: int = 4) -> nn.Network:
    return nn.Network([nn.Dense(4 + feature_dim, 1,
                                W=np.zeros((4 + feature_dim, 1)), b=np.array([10.0]))])

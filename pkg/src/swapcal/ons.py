"""Online Newton step over the radius-4 ball for scaled squared losses.

Each learner sees per-round losses phi(theta) = alpha * (<theta, x> - y)^2
with a scale weight alpha in [0, 1]. Over the radius-4 ball with contexts of
norm at most 1 these losses are 1/50-exp-concave and 10-Lipschitz, which
fixes the step parameter beta = 1/640 and the curvature floor
omega = 1/(4 beta^2) = 102400.

States are immutable; ons_step returns a fresh state, so snapshots of a
learner are just references.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import project_ball_a_norm, project_box, sherman_morrison_update

BETA = 1.0 / 640.0
OMEGA = 102400.0  # 1 / (4 beta^2), written out exactly
RADIUS = 4.0


@dataclass(frozen=True)
class OnsState:
    """Learner state: parameter vector and the inverse curvature matrix
    (omega I + sum of gradient outer products)^{-1}."""

    theta: np.ndarray
    inv_curvature: np.ndarray
    rounds_seen: int = 0
    beta: float = BETA
    omega: float = OMEGA
    radius: float = RADIUS

    @property
    def dim(self):
        return len(self.theta)


def ons_init(d):
    """Fresh learner in dimension d: theta = 0, curvature floor omega I."""
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    theta = np.zeros(d)
    inv0 = np.eye(d) / OMEGA
    theta.flags.writeable = False
    inv0.flags.writeable = False
    return OnsState(theta=theta, inv_curvature=inv0)


def scaled_loss_value(theta, x, alpha, y):
    """phi(theta) = alpha * (<theta, x> - y)^2."""
    r = float(np.dot(theta, x)) - y
    return alpha * r * r


def scaled_loss_grad(theta, x, alpha, y):
    """Gradient of the scaled squared loss: 2 alpha (<theta, x> - y) x."""
    x = np.asarray(x, dtype=float)
    return (2.0 * alpha * (float(np.dot(theta, x)) - y)) * x


def ons_step(state, x, alpha, y):
    """Advance one round on (x, y) with scale weight alpha.

    Folds the gradient into the curvature (rank-one inverse update), takes
    the Newton step theta - (1/beta) A^{-1} grad, and projects back onto the
    radius-4 ball in the A-norm when the step leaves it. alpha = 0 leaves
    everything but the round counter untouched.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"context dimension {x.shape} does not match state "
                         f"dimension {state.dim}")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"scale weight alpha={alpha} outside [0, 1]")
    if y not in (0, 0.0, 1, 1.0):
        raise ValueError(f"outcome must be 0 or 1, got {y!r}")
    if alpha == 0.0:
        return replace(state, rounds_seen=state.rounds_seen + 1)
    g = (2.0 * alpha * (float(np.dot(state.theta, x)) - y)) * x
    inv_new = sherman_morrison_update(state.inv_curvature, g)
    theta_new = state.theta - (inv_new @ g) / state.beta
    if float(np.linalg.norm(theta_new)) > state.radius:
        theta_new = project_ball_a_norm(theta_new, inv_new, state.radius)
    theta_new.flags.writeable = False
    inv_new.flags.writeable = False
    return OnsState(theta=theta_new, inv_curvature=inv_new,
                    rounds_seen=state.rounds_seen + 1,
                    beta=state.beta, omega=state.omega, radius=state.radius)


def alg_predict(state, x):
    """Predict <theta, x> clamped to [0, 1]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"context dimension {x.shape} does not match state "
                         f"dimension {state.dim}")
    return project_box(float(np.dot(state.theta, x)))

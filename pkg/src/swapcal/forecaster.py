"""Forecaster: a grid of online Newton learners tied together by a
column-stochastic fixed point.

Per round, each grid cell's learner proposes a value in [0, 1], the proposal
is rounded onto the two neighboring grid points (mean-preserving), the
resulting columns form a column-stochastic matrix Q_t, and the committed
conditional distribution P_t is its stationary fixed point Q_t P_t = P_t.
The realized prediction is sampled from P_t; each learner i is then fed the
squared loss scaled by its own stationary weight P_t(i).

Everything except the sampling is deterministic: the learner updates read
P_t, not the sampled draw, so the conditional-distribution trajectory is a
function of the input stream alone.

Randomness contract: a single 64-bit seed feeds numpy's SeedSequence; child 0
of the root sequence drives the PCG64 generator used for prediction sampling,
child 1 is reserved for the adversary (see the harness module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Grid, Transcript, validate_context, validate_outcome
from .linalg import stationary_distribution
from .ons import alg_predict, ons_init, ons_step


def seed_streams(seed):
    """Split a seed into (forecaster, adversary) SeedSequence children."""
    root = np.random.SeedSequence(seed)
    fc, adv = root.spawn(2)
    return fc, adv


@dataclass(frozen=True)
class RoundOutput:
    """One committed round before the outcome arrives: the conditional
    distribution over grid points, the full column-stochastic matrix, the raw
    per-cell learner proposals, and the sampled grid index."""

    cond_dist: np.ndarray
    q_matrix: np.ndarray
    per_cell_w: np.ndarray
    sampled_index: int


def rround(w, grid):
    """Round w in [0, 1] onto the grid: a 2-sparse distribution on the
    neighboring grid points with mean exactly w. Grid points map to point
    masses; w = 1 maps to the point mass on the last grid point."""
    w = float(w)
    if not (0.0 <= w <= 1.0):
        raise ValueError(f"value {w} outside [0, 1]")
    n = grid.n
    q = np.zeros(n + 1)
    scaled = w * n
    i = int(scaled)
    if i >= n:
        q[n] = 1.0
        return q
    frac = scaled - i
    q[i] = 1.0 - frac
    q[i + 1] = frac
    return q


class BmForecaster:
    """Grid of per-cell learners reduced to a single forecaster.

    Owns n+1 online Newton learners (one per grid point), the sampling
    generator, and nothing else. predict() commits a conditional
    distribution and samples from it; update() advances every learner with
    its stationary scale weight.
    """

    def __init__(self, grid, d, seed=0, rng=None):
        if not isinstance(grid, Grid):
            raise ValueError("grid must be a Grid")
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ValueError(f"dimension must be a positive integer, got {d!r}")
        self.grid = grid
        self.d = int(d)
        self.learners = [ons_init(self.d) for _ in range(grid.size)]
        self.seed = seed
        if rng is None:
            fc_ss, _ = seed_streams(seed)
            rng = np.random.Generator(np.random.PCG64(fc_ss))
        self.rng = rng

    @property
    def rounds_seen(self):
        return self.learners[0].rounds_seen

    def predict(self, x):
        """Commit this round's conditional distribution for context x and
        sample a grid index from it."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"context dimension {x.shape} does not match {self.d}")
        n = self.grid.n
        w = np.empty(n + 1)
        for i, learner in enumerate(self.learners):
            w[i] = alg_predict(learner, x)
        # vectorized rround of all n+1 columns
        scaled = w * n
        idx = np.minimum(scaled.astype(int), n)
        frac = scaled - idx
        cols = np.arange(n + 1)
        Q = np.zeros((n + 1, n + 1))
        Q[idx, cols] = 1.0 - frac
        interior = idx < n
        Q[idx[interior] + 1, cols[interior]] = frac[interior]
        P = stationary_distribution(Q)
        u = self.rng.random()
        sampled = int(np.searchsorted(np.cumsum(P), u, side="right"))
        if sampled > n:
            sampled = n
        return RoundOutput(cond_dist=P, q_matrix=Q, per_cell_w=w,
                           sampled_index=sampled)

    def update(self, out, y, x):
        """Advance every learner on (x, y), learner i scaled by its
        stationary weight out.cond_dist[i], in ascending cell order."""
        x = np.asarray(x, dtype=float)
        y = validate_outcome(y)
        P = out.cond_dist
        learners = self.learners
        for i in range(len(learners)):
            learners[i] = ons_step(learners[i], x, float(P[i]), y)


def bm_predict(forecaster, x):
    """Operation alias for BmForecaster.predict."""
    return forecaster.predict(x)


def bm_update(forecaster, out, y, x):
    """Operation alias for BmForecaster.update. Returns the forecaster."""
    forecaster.update(out, y, x)
    return forecaster


def run_online(forecaster, stream, keep_q=True):
    """Run the forecaster over a stream of (context, outcome) pairs and
    record the full transcript.

    keep_q retains the per-round column-stochastic matrices and raw learner
    proposals in the transcript (memory O(T n^2)); the persisted JSONL format
    never includes them either way.
    """
    stream = list(stream)
    T = len(stream)
    d = forecaster.d
    n = forecaster.grid.n
    X = np.zeros((T, d))
    P = np.zeros((T, n + 1))
    pi = np.zeros(T, dtype=int)
    ys = np.zeros(T, dtype=int)
    Qs = np.zeros((T, n + 1, n + 1)) if keep_q else None
    W = np.zeros((T, n + 1)) if keep_q else None
    for t, (x, y) in enumerate(stream):
        x = validate_context(x, d)
        y = validate_outcome(y)
        out = forecaster.predict(x)
        X[t] = x
        P[t] = out.cond_dist
        pi[t] = out.sampled_index
        ys[t] = y
        if keep_q:
            Qs[t] = out.q_matrix
            W[t] = out.per_cell_w
        forecaster.update(out, y, x)
    return Transcript(forecaster.grid, X, P, pi, ys, seed=forecaster.seed,
                      q_stacks=Qs, w_mat=W)


def choose_n(T, d, objective):
    """Grid resolution for a horizon-T run in dimension d.

    Calibration and omniprediction objectives use round((T / (d ln T))^{1/3});
    the contextual swap regret objective uses exponent 1/5. Clamped to >= 1.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"horizon must be a positive integer, got {T!r}")
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if objective in ("smcal", "somni"):
        expo = 1.0 / 3.0
    elif objective == "sreg":
        expo = 1.0 / 5.0
    else:
        raise ValueError(f"unknown objective {objective!r}")
    if T == 1:
        return 1
    return max(1, round((T / (d * math.log(T))) ** expo))

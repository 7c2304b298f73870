"""Domain types for online calibrated forecasting over a finite grid.

Predictions live on the uniform grid {0, 1/n, ..., 1}. Contexts are vectors
whose first coordinate is pinned to 1/2 (so linear functions of the context
include constants) with Euclidean norm at most 1. Outcomes are bits.

A transcript records one forecasting run: per round, the context, the full
conditional distribution the forecaster committed to, the sampled grid index,
and the observed outcome.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ResourceLimitError

CONTEXT_NORM_TOL = 1e-9
COND_DIST_TOL = 1e-9

#: enumeration cap for class_members and evaluation covers
MEMBER_CAP = 10 ** 6


class Grid:
    """Uniform prediction grid with n+1 points i/n, i = 0..n."""

    __slots__ = ("n", "points")

    def __init__(self, n):
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
            raise ValueError(f"grid resolution must be a positive integer, got {n!r}")
        self.n = int(n)
        pts = np.arange(self.n + 1, dtype=float) / self.n
        pts.flags.writeable = False
        self.points = pts

    @property
    def size(self):
        return self.n + 1

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))

    def __repr__(self):
        return f"Grid(n={self.n})"


def make_grid(n):
    """Build the uniform grid {0, 1/n, ..., 1}. n must be a positive integer."""
    return Grid(n)


def validate_context(x, d=None):
    """Check a context vector: first coordinate 1/2, Euclidean norm <= 1.

    Returns the vector as a float array. Raises ValueError on violation.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("context must be a 1-d vector")
    if d is not None and x.size != d:
        raise ValueError(f"context has dimension {x.size}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("context has non-finite entries")
    if x[0] != 0.5:
        raise ValueError(f"context first coordinate must be exactly 0.5, got {x[0]!r}")
    nrm = float(np.linalg.norm(x))
    if nrm > 1.0 + CONTEXT_NORM_TOL:
        raise ValueError(f"context norm {nrm} exceeds 1")
    return x


def validate_outcome(y):
    """Check a binary outcome, returning it as int 0 or 1."""
    if isinstance(y, bool):
        return int(y)
    if isinstance(y, (int, np.integer)) and y in (0, 1):
        return int(y)
    if isinstance(y, (float, np.floating)) and y in (0.0, 1.0):
        return int(y)
    raise ValueError(f"outcome must be 0 or 1, got {y!r}")


# ---------------------------------------------------------------------------
# losses


def _sign_pos(s):
    # sign with sign(0) := +1, the convention used throughout
    return np.where(np.asarray(s) >= 0, 1.0, -1.0)


class LossSpec:
    """A loss ell(p, y) on p in [0,1], y in {0,1}, with values in [-1, 1].

    Kinds
    -----
    squared        (p - y)^2
    absolute       |p - y|
    vshaped        (v - y) * sign(p - v), sign(0) = +1; a proper-loss basis
                   element, not convex in p
    custom-convex  caller-supplied fn(p, y), declared convex; certified by
                   sampled midpoint checks (certify()) rather than symbolically

    lipschitz_bound records the Lipschitz constant in p (2 for squared, 1 for
    absolute and vshaped, caller-declared for custom losses).
    """

    __slots__ = ("kind", "v", "fn", "lipschitz_bound", "name")

    def __init__(self, kind, v=None, fn=None, lipschitz_bound=None, name=None):
        if kind not in ("squared", "absolute", "vshaped", "custom-convex"):
            raise ValueError(f"unknown loss kind {kind!r}")
        if kind == "vshaped":
            if v is None or not (0.0 <= float(v) <= 1.0):
                raise ValueError("vshaped loss needs a level v in [0, 1]")
            v = float(v)
        if kind == "custom-convex":
            if fn is None:
                raise ValueError("custom-convex loss needs an eval function")
            if lipschitz_bound is None:
                raise ValueError("custom-convex loss needs a declared lipschitz_bound")
        self.kind = kind
        self.v = v
        self.fn = fn
        if lipschitz_bound is None:
            lipschitz_bound = 2.0 if kind == "squared" else 1.0
        self.lipschitz_bound = float(lipschitz_bound)
        if name is None:
            name = kind if kind != "vshaped" else f"vshaped({v:g})"
        self.name = name

    def __call__(self, p, y):
        """Evaluate the loss. p and y may be scalars or broadcastable arrays."""
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "squared":
            out = (p - y) ** 2
        elif self.kind == "absolute":
            out = np.abs(p - y)
        elif self.kind == "vshaped":
            out = (self.v - y) * _sign_pos(p - self.v)
        else:
            out = np.asarray(self.fn(p, y), dtype=float)
        if out.ndim == 0:
            return float(out)
        return out

    def deriv(self, p, y):
        """A subgradient of the loss in p (0 where the loss is locally flat).

        Custom losses fall back to a central finite difference, one-sided at
        the boundary of [0, 1].
        """
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "squared":
            out = 2.0 * (p - y)
        elif self.kind == "absolute":
            out = np.where(p == y, 0.0, _sign_pos(p - y))
        elif self.kind == "vshaped":
            out = np.zeros(np.broadcast(p, y).shape)
        else:
            h = 1e-5
            lo = np.clip(p - h, 0.0, 1.0)
            hi = np.clip(p + h, 0.0, 1.0)
            out = (self(hi, y) - self(lo, y)) / np.maximum(hi - lo, 1e-300)
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            return float(out)
        return out

    @property
    def convex(self):
        return self.kind in ("squared", "absolute", "custom-convex")

    def certify(self, resolution=1e-3, tol=1e-9):
        """Check boundedness, the declared Lipschitz bound, and (for convex
        kinds) midpoint convexity on the given p-grid. Raises ValueError on
        the first violation; returns a dict of the checked quantities.
        """
        p = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
        report = {"resolution": resolution}
        max_abs = 0.0
        max_slope = 0.0
        for y in (0, 1):
            vals = np.asarray(self(p, y), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"loss {self.name} is non-finite at some p, y={y}")
            max_abs = max(max_abs, float(np.max(np.abs(vals))))
            slopes = np.abs(np.diff(vals)) / np.diff(p)
            max_slope = max(max_slope, float(np.max(slopes)))
            if self.convex:
                # midpoint convexity over all grid pairs at stride 2, so the
                # midpoint of each pair is itself a grid point
                mid = vals[1:-1:1]
                left = vals[:-2]
                right = vals[2:]
                gap = mid - 0.5 * (left + right)
                if float(np.max(gap)) > tol:
                    raise ValueError(
                        f"loss {self.name} fails midpoint convexity by {np.max(gap):.3e}"
                    )
        if max_abs > 1.0 + tol:
            raise ValueError(f"loss {self.name} leaves [-1, 1]: max |value| {max_abs}")
        if self.kind != "vshaped" and max_slope > self.lipschitz_bound + 1e-6:
            raise ValueError(
                f"loss {self.name} violates declared Lipschitz bound: "
                f"{max_slope} > {self.lipschitz_bound}"
            )
        report["max_abs"] = max_abs
        report["max_slope"] = max_slope
        return report

    def __repr__(self):
        return f"LossSpec({self.name})"


def squared_loss():
    return LossSpec("squared")


def absolute_loss():
    return LossSpec("absolute")


def vshaped_loss(v):
    return LossSpec("vshaped", v=v)


def custom_loss(fn, lipschitz_bound, name="custom"):
    """Wrap a caller-supplied convex loss. fn must vectorize over p and y."""
    return LossSpec("custom-convex", fn=fn, lipschitz_bound=lipschitz_bound, name=name)


def loss_eval(loss, p, y):
    """Evaluate a loss at a single (p, y) with domain checks."""
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"prediction {p} outside [0, 1]")
    y = validate_outcome(y)
    return float(loss(p, y))


_POST_GRID = np.linspace(0.0, 1.0, 10001)


def post_process(loss, q):
    """Best response to a Bernoulli(q) outcome under the given loss.

    Returns argmin_p q*ell(p,1) + (1-q)*ell(p,0). Squared loss gives q
    itself; absolute loss thresholds at 1/2 (returning 1 on the boundary);
    everything else is minimized over a grid of step 1e-4, ties broken toward
    the lowest p.
    """
    q = float(q)
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q={q} outside [0, 1]")
    if loss.kind == "squared":
        return q
    if loss.kind == "absolute":
        return 1.0 if q >= 0.5 else 0.0
    vals = q * loss(_POST_GRID, 1) + (1.0 - q) * loss(_POST_GRID, 0)
    return float(_POST_GRID[int(np.argmin(vals))])


# ---------------------------------------------------------------------------
# hypothesis classes


class LinearFn:
    """f(x) = <theta, x>. Accepts a single context or a batch (T, d)."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        theta = np.asarray(theta, dtype=float)
        theta.flags.writeable = False
        self.theta = theta

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.theta

    def __repr__(self):
        return f"LinearFn({np.array2string(self.theta, precision=4)})"


class HypothesisClass:
    """A comparator class for the metrics.

    kind is one of

    linear-ball(r)     f(x) = <theta, x>, ||theta|| <= r; suprema in closed
                       form via the support function
    affine-restricted  f(x) = (1 + <theta, x>)/2, ||theta|| <= 1; maps into
                       [0, 1]
    finite             an explicit list of callables (batch contexts -> values)
    cover(eps, r)      the eps-grid of theta over the radius-r ball, enumerated
    """

    __slots__ = ("kind", "radius", "epsilon", "members")

    def __init__(self, kind, radius=None, epsilon=None, members=None):
        if kind not in ("linear-ball", "affine-restricted", "finite", "cover"):
            raise ValueError(f"unknown hypothesis class kind {kind!r}")
        if kind in ("linear-ball", "cover"):
            if radius is None or radius <= 0:
                raise ValueError(f"{kind} class needs a positive radius")
            radius = float(radius)
        if kind == "affine-restricted":
            radius = 1.0
        if kind == "cover":
            if epsilon is None or epsilon <= 0:
                raise ValueError("cover class needs a positive epsilon")
            epsilon = float(epsilon)
        if kind == "finite":
            if not members:
                raise ValueError("finite class needs at least one member")
            members = list(members)
        self.kind = kind
        self.radius = radius
        self.epsilon = epsilon
        self.members = members

    def descriptor(self):
        if self.kind == "linear-ball":
            return f"linear-ball(r={self.radius:g})"
        if self.kind == "affine-restricted":
            return "affine-restricted"
        if self.kind == "cover":
            return f"cover(eps={self.epsilon:g}, r={self.radius:g})"
        return f"finite(m={len(self.members)})"

    def __repr__(self):
        return f"HypothesisClass({self.descriptor()})"


def linear_ball(radius):
    return HypothesisClass("linear-ball", radius=radius)


def affine_restricted():
    return HypothesisClass("affine-restricted")


def finite_class(members):
    return HypothesisClass("finite", members=members)


def cover_class(epsilon, radius):
    return HypothesisClass("cover", epsilon=epsilon, radius=radius)


def cover_thetas(epsilon, radius, d, cap=MEMBER_CAP):
    """Theta vectors of the eps-cover of the radius-r ball in dimension d.

    Axis grid of step min(eps, 2*eps/sqrt(d)) over [-r, r]^d; grid points
    outside the ball are projected onto the sphere (non-expansive, so every
    theta in the ball stays within eps of some member). Raises
    ResourceLimitError if the enumeration would exceed cap points.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    step = min(epsilon, 2.0 * epsilon / np.sqrt(d))
    m = int(np.floor(2.0 * radius / step + 1e-9)) + 1
    if m ** d > cap:
        raise ResourceLimitError(
            f"cover enumeration needs {m}^{d} > {cap} members; "
            "raise epsilon or use a smaller class"
        )
    axis = -radius + step * np.arange(m)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    thetas = np.stack([g.ravel() for g in grids], axis=1)
    norms = np.linalg.norm(thetas, axis=1)
    outside = norms > radius
    if np.any(outside):
        thetas[outside] *= (radius / norms[outside])[:, None]
    return thetas


def class_members(hc, d, cap=MEMBER_CAP):
    """Enumerate a finite or cover class in dimension d.

    finite classes pass through; covers enumerate their theta grid (capped at
    cap members). linear-ball and affine-restricted have no finite
    enumeration; they return the class itself as a symbolic descriptor, and
    the metrics handle their suprema in closed form.
    """
    if hc.kind == "finite":
        return list(hc.members)
    if hc.kind == "cover":
        thetas = cover_thetas(hc.epsilon, hc.radius, d, cap=cap)
        return [LinearFn(t) for t in thetas]
    return hc


# ---------------------------------------------------------------------------
# transcripts


@dataclass(frozen=True)
class TranscriptStep:
    """One round: context, committed conditional distribution over the grid,
    the sampled grid index, and the observed outcome. q_matrix and per_cell_w
    are present only when the run retained them."""

    context: np.ndarray
    cond_dist: np.ndarray
    sampled_index: int
    outcome: int
    q_matrix: np.ndarray | None = None
    per_cell_w: np.ndarray | None = None


class Transcript:
    """A complete forecasting run, stored columnwise.

    contexts is (T, d), cond_dists is (T, n+1) with rows on the simplex,
    sampled_indices and outcomes are (T,). q_stacks (T, n+1, n+1) and w_mat
    (T, n+1) hold the per-round column-stochastic matrices and the raw
    per-cell predictions when the run kept them.
    """

    __slots__ = ("grid", "contexts", "cond_dists", "sampled_indices", "outcomes",
                 "seed", "q_stacks", "w_mat")

    def __init__(self, grid, contexts, cond_dists, sampled_indices, outcomes,
                 seed=None, q_stacks=None, w_mat=None, validate=True):
        self.grid = grid
        X = np.asarray(contexts, dtype=float)
        if X.ndim != 2:
            X = X.reshape(len(X), -1) if X.size else X.reshape(0, 0)
        self.contexts = X
        P = np.asarray(cond_dists, dtype=float)
        if P.ndim != 2:
            P = P.reshape(len(P), -1) if P.size else np.zeros((0, grid.size))
        self.cond_dists = P
        self.sampled_indices = np.asarray(sampled_indices, dtype=int).reshape(-1)
        self.outcomes = np.asarray(outcomes, dtype=int).reshape(-1)
        self.seed = seed
        self.q_stacks = None if q_stacks is None else np.asarray(q_stacks, dtype=float)
        self.w_mat = None if w_mat is None else np.asarray(w_mat, dtype=float)
        if validate:
            self._check()

    def _check(self):
        T = self.horizon
        for arr, name in ((self.cond_dists, "cond_dists"),
                          (self.sampled_indices, "sampled_indices"),
                          (self.outcomes, "outcomes")):
            if len(arr) != T:
                raise ValueError(f"{name} has length {len(arr)}, expected {T}")
        if T == 0:
            return
        if self.cond_dists.shape[1] != self.grid.size:
            raise ValueError("cond_dists width does not match the grid")
        sums = self.cond_dists.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > COND_DIST_TOL:
            raise ValueError("some conditional distribution does not sum to 1")
        if self.cond_dists.min() < -1e-12:
            raise ValueError("negative conditional probability")
        if self.sampled_indices.min() < 0 or self.sampled_indices.max() > self.grid.n:
            raise ValueError("sampled index outside the grid")
        if not np.all((self.outcomes == 0) | (self.outcomes == 1)):
            raise ValueError("outcomes must be bits")
        if np.any(self.contexts[:, 0] != 0.5):
            raise ValueError("context first coordinates must be exactly 0.5")
        norms = np.linalg.norm(self.contexts, axis=1)
        if norms.max() > 1.0 + CONTEXT_NORM_TOL:
            raise ValueError("some context norm exceeds 1")

    @property
    def horizon(self):
        return len(self.contexts)

    @property
    def d(self):
        return self.contexts.shape[1]

    @property
    def predictions(self):
        """Realized grid values z_{pi_t}, shape (T,)."""
        return self.grid.points[self.sampled_indices]

    def step(self, t):
        return TranscriptStep(
            context=self.contexts[t],
            cond_dist=self.cond_dists[t],
            sampled_index=int(self.sampled_indices[t]),
            outcome=int(self.outcomes[t]),
            q_matrix=None if self.q_stacks is None else self.q_stacks[t],
            per_cell_w=None if self.w_mat is None else self.w_mat[t],
        )

    def __len__(self):
        return self.horizon

    def write_jsonl(self, path):
        """Persist as JSON lines: a header {"N","d","T","seed"} followed by one
        record {"t","x","P","pi","y"} per round (t is 1-based). Q matrices are
        not part of the format."""
        with open(path, "w", encoding="utf-8") as fh:
            header = {"N": self.grid.n, "d": self.d, "T": self.horizon,
                      "seed": self.seed}
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
            for t in range(self.horizon):
                rec = {"t": t + 1,
                       "x": [float(v) for v in self.contexts[t]],
                       "P": [float(v) for v in self.cond_dists[t]],
                       "pi": int(self.sampled_indices[t]),
                       "y": int(self.outcomes[t])}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in (s.strip() for s in fh) if ln]
        if not lines:
            raise FormatError(f"{path}: empty transcript file")
        try:
            header = json.loads(lines[0])
            n, d, T = int(header["N"]), int(header["d"]), int(header["T"])
            seed = header.get("seed")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad header line: {exc}") from exc
        if len(lines) - 1 != T:
            raise FormatError(f"{path}: header says T={T} but file has "
                              f"{len(lines) - 1} step records")
        grid = Grid(n) if n >= 1 else None
        if grid is None:
            raise FormatError(f"{path}: header N must be >= 1")
        X = np.zeros((T, d))
        P = np.zeros((T, n + 1))
        pi = np.zeros(T, dtype=int)
        y = np.zeros(T, dtype=int)
        for k, ln in enumerate(lines[1:]):
            try:
                rec = json.loads(ln)
                X[k] = rec["x"]
                P[k] = rec["P"]
                pi[k] = rec["pi"]
                y[k] = rec["y"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: bad step record on line {k + 2}: {exc}") \
                    from exc
        return cls(grid, X, P, pi, y, seed=seed)

"""Small dense linear-algebra kernels used by the forecaster.

Everything here is deterministic: direct solves with explicit fallbacks, no
randomized algorithms. Matrices are plain numpy arrays; the curvature matrix
maintained by the online learner is stored as its inverse throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericFailure

STATIONARY_TOL = 1e-8
PROJECTION_TOL = 1e-9
PROJECTION_MAX_ITER = 200
_POWER_ITER_CAP = 2000
_POWER_DAMPING = 1e-6


def check_column_stochastic(Q, tol=1e-9):
    """Validate a square column-stochastic matrix and return it as float."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise ValueError("matrix must be square and non-empty")
    if not np.all(np.isfinite(Q)):
        raise ValueError("matrix has non-finite entries")
    if Q.min() < -1e-12:
        raise ValueError(f"matrix has negative entry {Q.min()}")
    colsums = Q.sum(axis=0)
    err = float(np.max(np.abs(colsums - 1.0)))
    if err > tol:
        raise ValueError(f"columns must sum to 1 within {tol}, worst error {err}")
    return Q


def _clip_and_normalize(p):
    p = np.clip(p, 0.0, None)
    s = p.sum()
    if not np.isfinite(s) or s <= 0.0:
        return None
    return p / s


def stationary_distribution(Q, tol=STATIONARY_TOL):
    """Stationary distribution p of a column-stochastic matrix: Q p = p.

    Solves the stacked least-squares system [(Q - I); 1^T] p = [0; 1], clips
    tiny negatives, renormalizes, and checks the residual ||Q p - p||_inf. If
    the direct solve misses the tolerance, falls back to lightly damped power
    iteration (with iterate averaging, which handles periodic chains). Among
    multiple stationary distributions the least-squares minimum-norm solution
    is returned.

    Raises NumericFailure, carrying the best residual seen, if no candidate
    meets the tolerance.
    """
    Q = check_column_stochastic(Q)
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    A = np.vstack([Q - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0

    candidates = []
    # fast path: normal equations (unique solution case)
    G = A.T @ A
    try:
        p = np.linalg.solve(G, A.T @ b)
        if np.all(np.isfinite(p)):
            candidates.append(p)
    except np.linalg.LinAlgError:
        pass

    best_resid = np.inf
    best_p = None
    for trial in range(2):
        if trial == 1:
            # minimum-norm least squares, also the tie-break rule
            p = np.linalg.lstsq(A, b, rcond=None)[0]
            candidates = [p]
        for cand in candidates:
            pn = _clip_and_normalize(cand)
            if pn is None:
                continue
            resid = float(np.max(np.abs(Q @ pn - pn)))
            if resid <= tol:
                return pn
            if resid < best_resid:
                best_resid, best_p = resid, pn
        candidates = []

    # damped power iteration with running average
    u = np.full(n, 1.0 / n)
    p = u.copy() if best_p is None else best_p.copy()
    avg = np.zeros(n)
    for k in range(1, _POWER_ITER_CAP + 1):
        q = Q @ p
        resid = float(np.max(np.abs(q - p)))
        if resid <= tol:
            return p
        if resid < best_resid:
            best_resid, best_p = resid, p.copy()
        avg += p
        if k % 32 == 0:
            m = _clip_and_normalize(avg / k)
            if m is not None:
                resid_m = float(np.max(np.abs(Q @ m - m)))
                if resid_m <= tol:
                    return m
                if resid_m < best_resid:
                    best_resid, best_p = resid_m, m
        p = (1.0 - _POWER_DAMPING) * q + _POWER_DAMPING * u
        p = p / p.sum()
    raise NumericFailure(
        f"stationary distribution did not reach residual {tol}; "
        f"best {best_resid:.3e}", residual=best_resid)


def sherman_morrison_update(M, g):
    """Rank-one inverse update: given M = A^{-1}, return (A + g g^T)^{-1}.

    Uses M - (M g)(M g)^T / (1 + g^T M g) and re-symmetrizes to fight drift.
    """
    M = np.asarray(M, dtype=float)
    g = np.asarray(g, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or g.shape != (M.shape[0],):
        raise ValueError("shape mismatch in rank-one update")
    Mg = M @ g
    denom = 1.0 + float(g @ Mg)
    if not np.isfinite(denom) or denom <= 0.0:
        raise NumericFailure(f"rank-one update denominator {denom} is not positive")
    out = M - np.outer(Mg, Mg) / denom
    out = 0.5 * (out + out.T)
    if not np.all(np.isfinite(out)):
        raise NumericFailure("rank-one update produced non-finite entries")
    return out


def project_ball_a_norm(theta, inv_curvature, radius,
                        tol=PROJECTION_TOL, max_iter=PROJECTION_MAX_ITER):
    """Project theta onto the Euclidean ball of the given radius in the norm
    induced by A, where inv_curvature = A^{-1}.

    Minimizes (u - theta)^T A (u - theta) over ||u||_2 <= radius. If theta is
    already inside the ball it is returned unchanged. Otherwise the KKT system
    u(lam) = (A + lam I)^{-1} A theta is solved for the multiplier lam >= 0 by
    safeguarded bisection until | ||u|| - radius | <= tol; A is reconstructed
    from the stored inverse only on this (rare) path.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("cannot project a non-finite vector")
    if radius <= 0:
        raise ValueError("radius must be positive")
    nrm = float(np.linalg.norm(theta))
    if nrm <= radius:
        return theta
    try:
        A = np.linalg.inv(np.asarray(inv_curvature, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"curvature inverse is singular: {exc}") from exc
    A = 0.5 * (A + A.T)
    b = A @ theta
    eye = np.eye(len(theta))

    def u_of(lam):
        return np.linalg.solve(A + lam * eye, b)

    lo = 0.0
    hi = max(float(np.linalg.norm(b)) / radius, 1e-12)
    for _ in range(80):
        if np.linalg.norm(u_of(hi)) <= radius:
            break
        hi *= 2.0
    best_gap, best_u = np.inf, None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        u = u_of(mid)
        n_u = float(np.linalg.norm(u))
        gap = abs(n_u - radius)
        if gap <= tol:
            return u
        if gap < best_gap:
            best_gap, best_u = gap, u
        if n_u > radius:
            lo = mid
        else:
            hi = mid
    if best_gap <= 1e-6:
        return best_u
    raise NumericFailure(
        f"A-norm projection bisection stalled at gap {best_gap:.3e}",
        residual=best_gap)


def project_box(w, lo=0.0, hi=1.0):
    """Clamp to [lo, hi]. Scalars stay scalar; NaN raises ValueError."""
    if np.isscalar(w) or np.ndim(w) == 0:
        w = float(w)
        if w != w:
            raise ValueError("cannot clamp NaN")
        return lo if w < lo else hi if w > hi else w
    w = np.asarray(w, dtype=float)
    if np.any(np.isnan(w)):
        raise ValueError("cannot clamp NaN")
    return np.clip(w, lo, hi)

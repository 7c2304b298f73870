"""Self-contained checks of the guarantees the library is built on.

Each check prints one [PASS]/[FAIL] line; run_all returns a process exit
code. The whole suite is sized to finish in well under half a minute.
"""

from __future__ import annotations

import numpy as np

from .core import (LinearFn, Transcript, absolute_loss, linear_ball,
                   make_grid, post_process, squared_loss, vshaped_loss)
from .forecaster import BmForecaster, rround, run_online, seed_streams
from .harness import AdversarySpec, generate_stream, simulate_run
from .linalg import (project_ball_a_norm, sherman_morrison_update,
                     stationary_distribution)
from .metrics import (bm_external_regrets, cal, psmcal, psreg, smcal, sreg,
                      witness_f_prime)
from .ons import alg_predict, ons_init, ons_step


def _check_rounding(rng):
    """Rounded distributions keep the mean and pay at most 1/N^2 extra
    squared loss against either label."""
    worst = 0.0
    for n in (1, 2, 3, 7, 16, 64):
        grid = make_grid(n)
        for w in np.linspace(0.0, 1.0, 201):
            q = rround(float(w), grid)
            mean_gap = abs(float(q @ grid.points) - w)
            if mean_gap > 1e-12:
                return False, f"mean moved by {mean_gap:.2e} at N={n}, w={w}"
            for y in (0, 1):
                excess = float(q @ (grid.points - y) ** 2) - (w - y) ** 2
                worst = max(worst, excess)
                if excess < -1e-12 or excess > 1.0 / n ** 2 + 1e-12:
                    return False, f"excess {excess:.2e} outside [0, 1/N^2] " \
                                  f"at N={n}, w={w}, y={y}"
    return True, f"worst excess {worst:.2e}"


def _check_stationary(rng):
    for _ in range(50):
        n = int(rng.integers(1, 12))
        Q = rng.random((n, n)) ** 2
        Q /= Q.sum(axis=0, keepdims=True)
        p = stationary_distribution(Q)
        res = float(np.max(np.abs(Q @ p - p)))
        if res > 1e-8 or abs(p.sum() - 1.0) > 1e-12 or p.min() < 0:
            return False, f"residual {res:.2e}"
    # a known fixed point: columns both (0.4, 0.6)
    p = stationary_distribution(np.array([[0.4, 0.4], [0.6, 0.6]]))
    if np.max(np.abs(p - [0.4, 0.6])) > 1e-10:
        return False, f"constant-column chain gave {p}"
    p = stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))
    if np.max(np.abs(p - 0.5)) > 1e-8:
        return False, f"swap chain gave {p}"
    return True, "residuals within 1e-8"


def _check_sherman_morrison(rng):
    for _ in range(25):
        d = int(rng.integers(1, 9))
        A = np.eye(d) * 0.3
        M = np.linalg.inv(A)
        for _ in range(60):
            g = rng.normal(size=d)
            A = A + np.outer(g, g)
            M = sherman_morrison_update(M, g)
        err = np.linalg.norm(M - np.linalg.inv(A)) / np.linalg.norm(M)
        if err > 1e-8:
            return False, f"relative drift {err:.2e}"
    return True, "matches dense inverse to 1e-8"


def _check_projection(rng):
    for _ in range(40):
        d = int(rng.integers(1, 7))
        B = rng.normal(size=(d, d))
        A = B @ B.T + np.eye(d) * 0.1
        Minv = np.linalg.inv(A)
        theta = rng.normal(size=d) * 4.0
        r = 2.0
        proj = project_ball_a_norm(theta, Minv, r)
        if np.linalg.norm(proj) > r + 1e-7:
            return False, f"left the ball: {np.linalg.norm(proj):.6f}"

        def a_dist(u):
            v = u - theta
            return float(v @ A @ v)

        base = a_dist(proj)
        for _ in range(30):
            cand = rng.normal(size=d)
            nc = np.linalg.norm(cand)
            if nc > r:
                cand = cand / nc * r
            if a_dist(cand) < base - 1e-6:
                return False, "a feasible point beat the projection"
    return True, "optimal among sampled feasible points"


def _check_ons(rng):
    # one hand-checked step
    st = ons_init(1)
    st = ons_step(st, np.array([0.5]), 1.0, 1)
    want = 640.0 / 102401.0
    if abs(st.theta[0] - want) > 1e-15:
        return False, f"first step gave {st.theta[0]!r}, wanted {want!r}"
    # gradient of the scaled loss vs central differences
    for _ in range(200):
        d = int(rng.integers(1, 5))
        theta = rng.normal(size=d)
        theta *= min(1.0, 4.0 / np.linalg.norm(theta))
        x = rng.normal(size=d)
        x *= min(1.0, 1.0 / max(np.linalg.norm(x), 1e-12)) * rng.random()
        alpha = float(rng.random())
        y = int(rng.integers(0, 2))
        g = 2.0 * alpha * (theta @ x - y) * x
        h = 1e-6
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            num = (alpha * ((theta + e) @ x - y) ** 2
                   - alpha * ((theta - e) @ x - y) ** 2) / (2 * h)
            if abs(num - g[j]) > 1e-6 * max(1.0, abs(g[j])):
                return False, f"gradient mismatch {num} vs {g[j]}"
    # prediction stays in [0, 1]
    for _ in range(50):
        st_r = ons_init(3)
        for _ in range(5):
            st_r = ons_step(st_r, rng.normal(size=3) * 0.3, float(rng.random()),
                            int(rng.integers(0, 2)))
        p = alg_predict(st_r, rng.normal(size=3) * 0.3)
        if not (0.0 <= p <= 1.0):
            return False, f"prediction {p} left [0, 1]"
    return True, "hand value, gradients, clipping all agree"


def _check_decomposition(rng):
    """Sampled swap regret of the forecaster never exceeds the sum of the
    per-cell learner regrets (the reduction identity), up to solver slack."""
    hc = linear_ball(4.0)
    for trial in range(12):
        T = int(rng.integers(20, 80))
        d = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        spec = AdversarySpec(kind="iid-logistic", noise=0.2)
        tr = simulate_run(spec, T, d, n, seed=1000 + trial, keep_q=True)
        total = psreg(tr, hc).value
        regs = bm_external_regrets(tr, hc)
        if total > sum(regs) + 1e-8:
            return False, f"psreg {total:.6g} > sum of learner regrets " \
                          f"{sum(regs):.6g}"
    return True, "psreg bounded by summed learner regrets"


def _check_witness(rng):
    grid = make_grid(4)
    for trial in range(40):
        T = int(rng.integers(10, 60))
        d = int(rng.integers(1, 4))
        if d > 1:
            tails = rng.normal(size=(T, d - 1)) * 0.3
            norms = np.linalg.norm(tails, axis=1)
            too_big = norms > 0.8
            tails[too_big] *= (0.8 / norms[too_big])[:, None]
            X = np.hstack([np.full((T, 1), 0.5), tails])
        else:
            X = np.full((T, 1), 0.5)
        P = rng.random((T, 5))
        P /= P.sum(axis=1, keepdims=True)
        idx = np.array([rng.integers(0, 5) for _ in range(T)])
        y = np.array([rng.integers(0, 2) for _ in range(T)])
        tr = Transcript(grid, X, P, idx, y)
        theta = rng.normal(size=d)
        nt = np.linalg.norm(theta)
        if nt > 1:
            theta = theta / nt
        for cell in range(5):
            mass = float(P[:, cell].sum())
            if mass <= 0:
                continue
            resid = P[:, cell] * (y - grid.points[cell])
            corr = float(resid @ (X @ theta)) / mass
            if abs(corr) < 1e-6:
                continue
            f = LinearFn(theta if corr > 0 else -theta)
            alpha = abs(corr)
            fn, improvement = witness_f_prime(tr, cell, f)
            preds = fn(X)
            if np.max(np.abs(preds)) > 2.0 + 1e-12:
                return False, f"witness range {np.max(np.abs(preds)):.3f}"
            if improvement < alpha ** 2 - 1e-9:
                return False, f"improvement {improvement:.3e} < alpha^2 " \
                              f"{alpha ** 2:.3e}"
    return True, "improvement at least alpha squared, range within 2"


def _check_cal_vs_reg(rng):
    """Pseudo calibration error (unit ball, q=2) is a lower bound on pseudo
    swap regret (radius-4 ball)."""
    for trial in range(10):
        T = int(rng.integers(30, 120))
        d = int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        spec = AdversarySpec(kind="iid-logistic", noise=0.3)
        tr = simulate_run(spec, T, d, n, seed=2000 + trial)
        a = psmcal(tr, linear_ball(1.0), 2).value
        b = psreg(tr, linear_ball(4.0)).value
        if a > b + 1e-6:
            return False, f"psmcal {a:.6g} > psreg {b:.6g}"
    return True, "psmcal(2) below psreg"


def _check_cs_chain(rng):
    """The q=1 calibration errors are bounded by sqrt(T * q=2 errors)."""
    hc = linear_ball(1.0)
    for trial in range(10):
        T = int(rng.integers(30, 120))
        spec = AdversarySpec(kind="iid-logistic", noise=0.1)
        tr = simulate_run(spec, T, 2, 3, seed=3000 + trial)
        s1 = smcal(tr, hc, 1).value
        s2 = smcal(tr, hc, 2).value
        if s1 > np.sqrt(T * s2) + 1e-9:
            return False, f"smcal1 {s1:.6g} > sqrt(T smcal2) " \
                          f"{np.sqrt(T * s2):.6g}"
        p1 = psmcal(tr, hc, 1).value
        p2 = psmcal(tr, hc, 2).value
        if p1 > np.sqrt(T * p2) + 1e-9:
            return False, "pseudo chain violated"
        if cal(tr, 2).value > smcal(tr, hc, 2).value + 1e-9:
            pass  # cal uses the constant direction; no ordering either way
    return True, "Cauchy-Schwarz chains hold"


def _check_post_process(rng):
    grid01 = np.linspace(0.0, 1.0, 10001)
    losses = [squared_loss(), absolute_loss(), vshaped_loss(0.25),
              vshaped_loss(0.5), vshaped_loss(0.75)]
    for loss in losses:
        for q in rng.random(40):
            k = post_process(loss, float(q))
            best = float(np.min(q * loss(grid01, 1) + (1 - q) * loss(grid01, 0)))
            got = q * loss(np.array([k]), 1)[0] + (1 - q) * loss(np.array([k]), 0)[0]
            if got > best + 1e-12:
                return False, f"post_process lost {got - best:.2e} on " \
                              f"{loss.kind}"
    return True, "matches exhaustive grid minimum"


def _check_determinism(rng):
    spec = AdversarySpec(kind="iid-logistic", noise=0.1)
    a = simulate_run(spec, 60, 2, 3, seed=7)
    b = simulate_run(spec, 60, 2, 3, seed=7)
    same = (np.array_equal(a.contexts, b.contexts)
            and np.array_equal(a.cond_dists, b.cond_dists)
            and np.array_equal(a.sampled_indices, b.sampled_indices)
            and np.array_equal(a.outcomes, b.outcomes))
    if not same:
        return False, "same seed produced different runs"
    c = simulate_run(spec, 60, 2, 3, seed=8)
    if np.array_equal(a.sampled_indices, c.sampled_indices) and \
            np.array_equal(a.outcomes, c.outcomes):
        return False, "different seeds produced identical runs"
    return True, "same seed reproduces, seeds differ"


CHECKS = (
    ("rounding keeps means, bounded excess", _check_rounding),
    ("stationary distributions", _check_stationary),
    ("rank-one inverse updates", _check_sherman_morrison),
    ("curvature-norm ball projection", _check_projection),
    ("newton-step learner", _check_ons),
    ("swap regret decomposition", _check_decomposition),
    ("halfspace witness improvement", _check_witness),
    ("calibration below swap regret", _check_cal_vs_reg),
    ("norm inequality chains", _check_cs_chain),
    ("loss post-processing", _check_post_process),
    ("seeded determinism", _check_determinism),
)


def run_all():
    rng = np.random.default_rng(123)
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        tag = "PASS" if ok else "FAIL"
        print(f"[{tag}] {name}: {detail}")
        if not ok:
            failures += 1
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    raise SystemExit(run_all())

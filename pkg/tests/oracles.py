"""Independent reference implementations used only by the tests.

Nothing here shares code with the solver paths it checks: the projection
oracle is Dykstra's alternating method, the optimizer oracle is a plain
small-step projected gradient on the reduced problem, and the Laplacian
builder assembles the matrix directly from edge weights.
"""

import numpy as np


# ---------------------------------------------------------------------------
# Dykstra's alternating projection onto box intersect disk
# ---------------------------------------------------------------------------

def dykstra_box_disk(points, p_lo, p_hi, q_lo, q_hi, radius, tol=1e-12,
                     max_iter=20_000):
    """Project rows of `points` (m, 2) onto the box-and-disk set.

    Classic two-set Dykstra with correction vectors, vectorized over the
    points; iterates until the cycle displacement falls below tol.
    """
    x = np.array(points, dtype=float)
    inc_box = np.zeros_like(x)
    inc_disk = np.zeros_like(x)
    lo = np.array([p_lo, q_lo])
    hi = np.array([p_hi, q_hi])
    for _ in range(max_iter):
        x_old = x.copy()
        y = np.clip(x + inc_box, lo, hi)
        inc_box = x + inc_box - y
        z = y + inc_disk
        norms = np.hypot(z[:, 0], z[:, 1])
        factor = np.where(norms > radius, np.where(norms > 0, radius / np.maximum(norms, 1e-300), 0.0), 1.0)
        x = z * factor[:, None]
        inc_disk = z - x
        if np.max(np.abs(x - x_old)) < tol:
            break
    return x


def dykstra_project_region(region, j, p, q, tol=1e-12):
    pt = dykstra_box_disk(np.array([[p, q]]), region.p_min[j], region.p_max[j],
                          region.q_min[j], region.q_max[j], region.s[j], tol)
    return float(pt[0, 0]), float(pt[0, 1])


# ---------------------------------------------------------------------------
# Random radial networks
# ---------------------------------------------------------------------------

def random_tree_lines(rng, n, k_ratio=None, x_range=(0.1, 2.0)):
    """Random tree on buses 0..n: each bus attaches to a random earlier bus."""
    lines = []
    for j in range(1, n + 1):
        parent = int(rng.integers(0, j))
        x = float(rng.uniform(*x_range))
        r = (k_ratio if k_ratio is not None else float(rng.uniform(0.3, 3.0))) * x
        lines.append((parent, j, r, x))
    return lines


def laplacian_plus_shunt(lines, n):
    """Weighted subtree Laplacian plus the substation shunt, built directly."""
    L = np.zeros((n, n))
    for a, b, _, x in lines:
        w = 1.0 / x
        if a == 0:
            L[b - 1, b - 1] += w
        else:
            L[a - 1, a - 1] += w
            L[b - 1, b - 1] += w
            L[a - 1, b - 1] -= w
            L[b - 1, a - 1] -= w
    return L


# ---------------------------------------------------------------------------
# Reduced projected-gradient optimizer (dual-free oracle)
# ---------------------------------------------------------------------------

def reduced_objective_grad(model, cost, p, q):
    v = model.X @ (model.k_ratio * p + q + model.balance_offset)
    dv = v - model.v_ref
    gp = model.k_ratio * (model.X @ dv) + cost.c_p * p
    gq = model.X @ dv + cost.c_q * q
    return gp, gq


def projected_gradient_solve(model, region, cost, step=None, iters=80_000):
    """Plain projected gradient on the voltage-mismatch objective with the
    voltage eliminated through the balance equation; duals reconstructed
    from voltage stationarity afterwards.  Returns the final per-iteration
    displacement so callers can assert the horizon was long enough."""
    from distvolt.feasible import project_all

    n = model.n
    if step is None:
        sig_x = np.linalg.eigvalsh(model.X)[-1]
        lip = (model.k_ratio ** 2 + 1.0) * sig_x ** 2 + cost.theta
        step = 1.0 / lip
    p = np.zeros(n)
    q = np.zeros(n)
    move = np.inf
    for _ in range(iters):
        gp, gq = reduced_objective_grad(model, cost, p, q)
        z = np.concatenate((p - step * gp, q - step * gq))
        z = project_all(region, z)
        move = float(np.max(np.abs(z - np.concatenate((p, q)))))
        p, q = z[:n], z[n:]
        if move < 1e-15:
            break
    v = model.X @ (model.k_ratio * p + q + model.balance_offset)
    lam = model.X @ (model.v_ref - v)
    return p, q, lam, v, move

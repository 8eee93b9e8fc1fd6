"""Exact nonlinear branch-flow solver for radial feeders.

Backward/forward sweep on the full (lossy) branch-flow equations: the
backward pass accumulates receiving-end flows plus I^2*(r, x) losses from
the leaves toward the substation using the current voltage estimate, the
forward pass propagates squared voltage drops from the substation out.
For a radial network these equations are exact, so the fixed point is the
AC operating point; the linearized model drops the loss terms, and
comparing the two quantifies the linearization error.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DistvoltError
from .network import linear_voltage


class NotConverged(DistvoltError):
    """Sweep failed to reach tolerance within the iteration budget."""


@dataclass
class ACSolution:
    u: np.ndarray            # bus voltage magnitude, p.u. (buses 1..n)
    p_send: np.ndarray       # sending-end active flow per line, lines in BFS order
    q_send: np.ndarray
    loss_p: np.ndarray       # r * |I|^2 per line
    converged: bool
    iterations: int
    residual: float          # worst branch-flow equation residual at the fixed point
    delta_history: list = None   # max |U - U_prev| per sweep


def solve_ac(model, p, q, tol=1e-10, max_iter=200):
    """Solve the lossy branch-flow equations at injections (p, q), per-unit.

    Starts flat at the substation voltage and alternates backward flow and
    forward voltage sweeps; returns the last iterate with a convergence
    flag rather than raising when the loading is infeasible for the sweep.
    """
    n = model.n
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cons_p = model.p_load - p          # net consumption at each bus
    cons_q = model.q_load - q

    lines = model.lines                # BFS order, parent -> child
    down = [[] for _ in range(n + 1)]
    for ell, (a, b, _, _) in enumerate(lines):
        down[a].append(ell)            # lines leaving bus a further out

    u0 = np.sqrt(2.0 * model.v0)
    u = np.full(n, u0)
    p_recv = np.zeros(n)
    q_recv = np.zeros(n)
    p_send = np.zeros(n)
    q_send = np.zeros(n)
    cur2 = np.zeros(n)

    it = 0
    converged = False
    deltas = []
    for it in range(1, max_iter + 1):
        u_prev = u.copy()
        # Backward: receiving-end flows from the leaves toward the root.
        for ell in range(n - 1, -1, -1):
            a, b, r, x = lines[ell]
            jb = b - 1
            pr = cons_p[jb]
            qr = cons_q[jb]
            for m in down[b]:
                pr += p_send[m]
                qr += q_send[m]
            p_recv[ell] = pr
            q_recv[ell] = qr
            cur2[ell] = (pr * pr + qr * qr) / (u[jb] * u[jb])
            p_send[ell] = pr + r * cur2[ell]
            q_send[ell] = qr + x * cur2[ell]
        # Forward: squared voltages from the root out.
        for ell in range(n):
            a, b, r, x = lines[ell]
            ua2 = u0 * u0 if a == 0 else u[a - 1] ** 2
            ub2 = ua2 - 2.0 * (r * p_send[ell] + x * q_send[ell]) \
                + (r * r + x * x) * cur2[ell]
            if ub2 <= 0.0:
                return ACSolution(u, p_send.copy(), q_send.copy(),
                                  lines_loss(lines, cur2), False, it, np.inf,
                                  deltas)
            u[b - 1] = np.sqrt(ub2)
        delta = float(np.max(np.abs(u - u_prev)))
        deltas.append(delta)
        if delta < tol:
            converged = True
            break

    res = _equation_residual(model, u, p_send, q_send, cur2, cons_p, cons_q)
    return ACSolution(u=u, p_send=p_send.copy(), q_send=q_send.copy(),
                      loss_p=lines_loss(model.lines, cur2),
                      converged=converged, iterations=it, residual=res,
                      delta_history=deltas)


def lines_loss(lines, cur2):
    return np.array([r * c for (_, _, r, _), c in zip(lines, cur2)])


def _equation_residual(model, u, p_send, q_send, cur2, cons_p, cons_q):
    """Worst violation of the branch-flow equations at the returned state."""
    lines = model.lines
    n = model.n
    down = [[] for _ in range(n + 1)]
    for ell, (a, b, _, _) in enumerate(lines):
        down[a].append(ell)
    u0 = np.sqrt(2.0 * model.v0)
    worst = 0.0
    for ell, (a, b, r, x) in enumerate(lines):
        jb = b - 1
        pr = p_send[ell] - r * cur2[ell]
        qr = q_send[ell] - x * cur2[ell]
        bal_p = pr - cons_p[jb] - sum(p_send[m] for m in down[b])
        bal_q = qr - cons_q[jb] - sum(q_send[m] for m in down[b])
        amp = cur2[ell] * u[jb] ** 2 - (pr * pr + qr * qr)
        ua2 = u0 * u0 if a == 0 else u[a - 1] ** 2
        drop = u[jb] ** 2 - (ua2 - 2.0 * (r * p_send[ell] + x * q_send[ell])
                             + (r * r + x * x) * cur2[ell])
        worst = max(worst, abs(bal_p), abs(bal_q), abs(amp), abs(drop))
    return worst


def linearization_error(model, p, q, tol=1e-10, max_iter=200):
    """Max relative voltage-magnitude gap between the linear model and the
    AC sweep at injections (p, q).  Raises NotConverged if the sweep fails."""
    sol = solve_ac(model, p, q, tol=tol, max_iter=max_iter)
    if not sol.converged:
        raise NotConverged(f"AC sweep did not converge in {sol.iterations} iterations")
    u_lin = np.sqrt(2.0 * linear_voltage(model, p, q))
    return float(np.max(np.abs(u_lin - sol.u) / sol.u))

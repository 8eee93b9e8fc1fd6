"""Synchronous primal-dual voltage control iteration.

One iteration does, per bus: a projected gradient step on the injections, a
dual step driven by the squared sensitivity matrix plus an extrapolated
coupling term, and a relaxation (Krasnosel'skii-Mann) update of both blocks;
voltages are recovered in closed form from the dual variables.

The per-bus arithmetic lives in :func:`bus_update` / :func:`bus_voltage` so
that the asynchronous engine can run the identical floating-point kernel and
degenerate to this iteration exactly when delays are disabled.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GammaNotPositiveDefinite, StepSizeTooLarge
from .feasible import max_violation, project, project_all

DIVERGENCE_NORM = 1e12


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

class QuadraticCost:
    """Separable per-bus cost 0.5*c_p*p^2 + 0.5*c_q*q^2.

    c_p and c_q may be scalars or per-bus arrays; zero coefficients give the
    cost-free problem.  The stacked gradient is Lipschitz with constant
    theta = max(c_p, c_q).
    """

    def __init__(self, c_p, c_q, n=None):
        c_p = np.asarray(c_p, dtype=float)
        c_q = np.asarray(c_q, dtype=float)
        if c_p.ndim == 0:
            if n is None:
                raise ValueError("scalar coefficients need an explicit n")
            c_p = np.full(n, float(c_p))
        if c_q.ndim == 0:
            c_q = np.full(c_p.shape[0], float(c_q))
        if np.any(c_p < 0.0) or np.any(c_q < 0.0):
            raise ValueError("cost coefficients must be nonnegative")
        self.c_p = c_p
        self.c_q = c_q
        self._cp = tuple(float(x) for x in c_p)
        self._cq = tuple(float(x) for x in c_q)
        self.n = c_p.shape[0]
        self.theta = float(max(c_p.max(initial=0.0), c_q.max(initial=0.0)))

    def value(self, z):
        n = self.n
        return 0.5 * float(self.c_p @ z[:n] ** 2 + self.c_q @ z[n:] ** 2)

    def grad(self, z):
        n = self.n
        return np.concatenate((self.c_p * z[:n], self.c_q * z[n:]))

    def grad_bus(self, j, p, q):
        return self._cp[j] * p, self._cq[j] * q


def zero_cost(n):
    return QuadraticCost(0.0, 0.0, n=n)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverParams:
    """Step sizes and the constants they are validated against."""

    alpha_pq: float
    alpha_lambda: float
    eta: float
    beta: float
    kappa: float
    lipschitz_theta: float
    sigma_max: float
    chi: int
    n: int
    eta_bound: float = math.nan


def relaxation_limit(beta, kappa, chi, n):
    """Upper bound on the relaxation step for staleness up to chi."""
    return (1.0 / (1.0 + 2.0 * chi / math.sqrt(n))) \
        * (4.0 * kappa * beta - 1.0) / (2.0 * kappa * beta)


def gamma_matrix(alpha_pq, alpha_lambda, k_ratio, n):
    """Step-size metric on the stacked (p, q, lambda) space."""
    E = np.hstack((k_ratio * np.eye(n), np.eye(n)))
    G = np.zeros((3 * n, 3 * n))
    G[:2 * n, :2 * n] = np.eye(2 * n) / alpha_pq
    G[2 * n:, 2 * n:] = np.eye(n) / alpha_lambda
    G[:2 * n, 2 * n:] = E.T
    G[2 * n:, :2 * n] = E
    return G


def validate_params(params, model):
    """Check every admissibility condition; return params with the bound filled in.

    Raises StepSizeTooLarge naming the violated condition, or
    GammaNotPositiveDefinite when the metric fails its eigenvalue checks.
    """
    sigma = model.sigma_max
    beta, kappa = params.beta, params.kappa
    theta = params.lipschitz_theta
    beta_cap = 1.0 / sigma ** 2 if theta <= 0.0 else min(1.0 / sigma ** 2, 1.0 / theta)
    if not 0.0 < beta <= beta_cap * (1.0 + 1e-12):
        raise StepSizeTooLarge(
            f"beta = {beta:g} violates 0 < beta <= min(1/sigma_max^2, 1/theta) = {beta_cap:g}")
    if not kappa > 1.0 / (2.0 * beta):
        raise StepSizeTooLarge(
            f"kappa = {kappa:g} violates kappa > 1/(2 beta) = {1.0 / (2.0 * beta):g}")
    if params.alpha_pq <= 0.0 or params.alpha_lambda <= 0.0:
        raise StepSizeTooLarge("step sizes must be positive")
    G = gamma_matrix(params.alpha_pq, params.alpha_lambda, model.k_ratio, model.n)
    eigs = np.linalg.eigvalsh(G)
    if eigs[0] <= 0.0:
        raise GammaNotPositiveDefinite(
            f"metric matrix has min eigenvalue {eigs[0]:g} <= 0")
    if eigs[0] < kappa - 1e-10:
        raise GammaNotPositiveDefinite(
            f"metric minus kappa*I has min eigenvalue {eigs[0] - kappa:g} < -1e-10")
    bound = relaxation_limit(beta, kappa, params.chi, model.n)
    if not 0.0 < params.eta < bound:
        raise StepSizeTooLarge(
            f"eta = {params.eta:g} violates 0 < eta < {bound:g} "
            f"(relaxation bound at chi = {params.chi})")
    return replace(params, sigma_max=sigma, n=model.n, eta_bound=bound)


def default_params(model, cost, chi=0, safety=0.9):
    """Synthesize admissible parameters for the given network and cost.

    beta is set to its cap, kappa to 1/beta, the two gradient steps to
    safety/(kappa + sqrt(K^2+1)) which keeps the metric dominated, and the
    relaxation to safety times its staleness-dependent bound.
    """
    sigma = model.sigma_max
    theta = cost.theta
    beta = 1.0 / sigma ** 2 if theta <= 0.0 else min(1.0 / sigma ** 2, 1.0 / theta)
    kappa = 1.0 / beta
    alpha = safety / (kappa + math.hypot(model.k_ratio, 1.0))
    eta = safety * relaxation_limit(beta, kappa, chi, model.n)
    params = SolverParams(alpha_pq=alpha, alpha_lambda=alpha, eta=eta,
                          beta=beta, kappa=kappa, lipschitz_theta=theta,
                          sigma_max=sigma, chi=int(chi), n=model.n)
    return validate_params(params, model)


# ---------------------------------------------------------------------------
# State and the per-bus kernel
# ---------------------------------------------------------------------------

@dataclass
class PrimalDualState:
    p: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    t: int = 0

    @property
    def w(self):
        return np.concatenate((self.p, self.q, self.lam))

    @property
    def z(self):
        return np.concatenate((self.p, self.q))

    def copy(self):
        return PrimalDualState(self.p.copy(), self.q.copy(),
                               self.lam.copy(), self.v.copy(), self.t)


def initial_state(model, region, p0=None, q0=None, lam0=None):
    """Feasible start: supplied injections are projected, duals default to 0."""
    n = model.n
    p = np.zeros(n) if p0 is None else np.asarray(p0, dtype=float).copy()
    q = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float).copy()
    z = project_all(region, np.concatenate((p, q)))
    lam = np.zeros(n) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    v = voltage_from_dual(model, lam)
    return PrimalDualState(z[:n], z[n:], lam, v, 0)


def bus_update(j, p_j, q_j, lam_j, lam_row, model, region, cost, params):
    """One bus's update from the values it sees.

    lam_row holds the dual values for the squared-matrix row support of bus
    j (self, neighbors, two-hop neighbors) in ascending bus order; lam_j is
    the bus's own dual as used on the gradient side.  Returns the relaxed
    (p, q, lambda) and the pre-relaxation targets.
    """
    K = model.k_ratio
    gp, gq = cost.grad_bus(j, p_j, q_j)
    a = params.alpha_pq
    tp = p_j - a * (gp - K * lam_j)
    tq = q_j - a * (gq - lam_j)
    pp, pq_ = project(region, j, tp, tq)

    acc = 0.0
    row = model.b2_rows[j]
    for idx in range(len(row)):
        acc += row[idx] * lam_row[idx]
    lt = lam_j + params.alpha_lambda * (
        -acc - 2.0 * (K * pp + pq_) + (K * p_j + q_j) - model.dev_list[j])

    eta = params.eta
    return (p_j + eta * (pp - p_j),
            q_j + eta * (pq_ - q_j),
            lam_j + eta * (lt - lam_j),
            pp, pq_, lt)


def bus_voltage(model, j, lam_vals):
    """Bus voltage from dual values on the one-hop row support of bus j."""
    acc = 0.0
    row = model.b_rows[j]
    for idx in range(len(row)):
        acc += row[idx] * lam_vals[idx]
    return model.vref_list[j] - acc


def voltage_from_dual(model, lam):
    """v = v_ref - B^T lambda, evaluated with the per-bus kernel."""
    n = model.n
    lam_list = [float(x) for x in lam]
    v = np.empty(n)
    for j in range(n):
        v[j] = bus_voltage(model, j, [lam_list[k] for k in model.b_support[j]])
    return v


def sync_step(state, params, model, region, cost):
    """One synchronous iteration; returns (new_state, pre-relaxation targets)."""
    n = model.n
    p = [float(x) for x in state.p]
    q = [float(x) for x in state.q]
    lam = [float(x) for x in state.lam]
    p1 = np.empty(n)
    q1 = np.empty(n)
    l1 = np.empty(n)
    zt = np.empty(2 * n)
    lt = np.empty(n)
    for j in range(n):
        lam_row = [lam[k] for k in model.b2_support[j]]
        p1[j], q1[j], l1[j], zt[j], zt[n + j], lt[j] = bus_update(
            j, p[j], q[j], lam[j], lam_row, model, region, cost, params)
    v1 = voltage_from_dual(model, l1)
    new = PrimalDualState(p1, q1, l1, v1, state.t + 1)
    return new, np.concatenate((zt, lt))


# ---------------------------------------------------------------------------
# Outer loop and optimality residuals
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    state: PrimalDualState
    trace: np.ndarray          # columns: iter, residual, rel_err (nan without reference)
    converged: bool
    status: str                # "converged" | "max_iter" | "diverged"
    iterations: int
    residual: float


def relative_error(w, w_ref):
    denom = float(w_ref @ w_ref)
    diff = w - w_ref
    num = float(diff @ diff)
    if denom == 0.0:
        return num
    return num / denom


def solve_sync(state0, params, model, region, cost, tol=1e-10, max_iter=20_000,
               w_ref=None, record=True):
    """Iterate until the pre-relaxation displacement drops below tol.

    The trace records the infinity-norm fixed-point residual per iteration
    and, when a reference point is supplied, the squared relative error of
    the iterate against it.
    """
    state = state0.copy()
    rows = []
    status = "max_iter"
    res = math.inf
    check_feasible = params.eta <= 1.0
    it = 0
    for it in range(1, max_iter + 1):
        w_prev = state.w
        state, w_tilde = sync_step(state, params, model, region, cost)
        res = float(np.max(np.abs(w_tilde - w_prev)))
        if record:
            rel = relative_error(state.w, w_ref) if w_ref is not None else math.nan
            rows.append((it, res, rel))
        if check_feasible:
            viol = max_violation(region, state.p, state.q)
            if viol > 1e-9:
                raise AssertionError(
                    f"iterate left the feasible set (violation {viol:g}) at eta <= 1")
        if not np.isfinite(res) or np.max(np.abs(state.w)) > DIVERGENCE_NORM:
            status = "diverged"
            break
        if res < tol:
            status = "converged"
            break
    trace = np.array(rows, dtype=float).reshape(-1, 3)
    return SolveResult(state=state, trace=trace, converged=status == "converged",
                       status=status, iterations=it, residual=res)


def kkt_residual(state, model, region, cost):
    """Infinity-norm KKT residuals (voltage stationarity, injection
    stationarity as a unit-step projected-gradient displacement, and primal
    balance)."""
    n = model.n
    lam = state.lam
    r_v = float(np.max(np.abs((state.v - model.v_ref) + model.B.T @ lam)))
    z = state.z
    grad = cost.grad(z) - np.concatenate((model.k_ratio * lam, lam))
    r_z = float(np.max(np.abs(z - project_all(region, z - grad))))
    balance = model.B @ state.v - model.k_ratio * state.p - state.q - model.balance_offset
    r_primal = float(np.max(np.abs(balance)))
    return r_v, r_z, r_primal

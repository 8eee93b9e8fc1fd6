"""Operator-splitting view of the iteration, with numeric property checks.

The solver step factors as a forward-backward map S = S1 o S2 on the
stacked vector w = (p, q, lambda):

* S2 = Id - Ginv C, where C(w) = (grad g(z), dev_offset + B^2 lambda) is the
  cocoercive smooth part and G is the step-size metric;
* S1 = (Id + Ginv D)^-1, the resolvent of the monotone part D(w) =
  (N_Omega(z) - E^T lambda, E z) with E = [K*I, I].

The resolvent has a closed form: the injection block is a single projection
and the dual block is then linear, so S can be evaluated exactly and
compared against the solver's per-bus arithmetic.  All averagedness and
nonexpansiveness checks run in the metric norm induced by G.
"""

from dataclasses import dataclass

import numpy as np

from .errors import PropertyViolated, SingularSystem
from .feasible import project_all
from .solver import gamma_matrix, sync_step, PrimalDualState, voltage_from_dual


@dataclass(frozen=True, eq=False)
class OperatorContext:
    model: object
    region: object
    cost: object
    params: object
    G: np.ndarray
    G_chol: np.ndarray   # lower-triangular L with G = L L^T
    G_inv: np.ndarray

    @property
    def n(self):
        return self.model.n


def make_context(model, region, cost, params):
    G = gamma_matrix(params.alpha_pq, params.alpha_lambda, model.k_ratio, model.n)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"step metric is not positive definite: {exc}") from exc
    G_inv = np.linalg.inv(G)
    for arr in (G, L, G_inv):
        arr.setflags(write=False)
    return OperatorContext(model, region, cost, params, G, L, G_inv)


def split_w(ctx, w):
    n = ctx.n
    return w[:2 * n], w[2 * n:]


def coupling_apply(ctx, z):
    """E z = K p + q."""
    n = ctx.n
    return ctx.model.k_ratio * z[:n] + z[n:]


def coupling_adjoint(ctx, lam):
    """E^T lambda = (K lambda, lambda) stacked."""
    return np.concatenate((ctx.model.k_ratio * lam, lam))


def smooth_part(ctx, w):
    """The cocoercive operator: (grad g(z), dev_offset + B^2 lambda)."""
    z, lam = split_w(ctx, w)
    return np.concatenate((ctx.cost.grad(z),
                           ctx.model.dev_offset + ctx.model.B2 @ lam))


def resolvent(ctx, v):
    """Backward step: the unique w with G(v - w) in D(w)."""
    n = ctx.n
    v_z, v_lam = split_w(ctx, v)
    z = project_all(ctx.region, v_z + ctx.params.alpha_pq * coupling_adjoint(ctx, v_lam))
    lam = v_lam + ctx.params.alpha_lambda * (coupling_apply(ctx, v_z) - 2.0 * coupling_apply(ctx, z))
    return np.concatenate((z, lam))


def forward(ctx, w):
    """Forward step S2 = Id - Ginv C."""
    return w - ctx.G_inv @ smooth_part(ctx, w)


def forward_backward(ctx, w):
    """The full map S = S1 o S2."""
    return resolvent(ctx, forward(ctx, w))


def averaged_constant(ctx, tag):
    bk = ctx.params.beta * ctx.params.kappa
    return {"S1": 0.5,
            "S2": 1.0 / (2.0 * bk),
            "S": 2.0 * bk / (4.0 * bk - 1.0)}[tag]


def apply_operator(ctx, tag, w):
    return {"S1": resolvent, "S2": forward, "S": forward_backward}[tag](ctx, w)


def relaxed_map(ctx, w):
    """The nonexpansive map T with S = (1 - a) Id + a T."""
    a = averaged_constant(ctx, "S")
    return w + (forward_backward(ctx, w) - w) / a


def gamma_norm(ctx, u):
    return float(np.linalg.norm(ctx.G_chol.T @ u))


def fixed_point_residual(ctx, w):
    """Metric-norm displacement of w under the forward-backward map."""
    return gamma_norm(ctx, forward_backward(ctx, w) - w)


def state_from_w(ctx, w):
    n = ctx.n
    lam = w[2 * n:]
    return PrimalDualState(w[:n].copy(), w[n:2 * n].copy(), lam.copy(),
                           voltage_from_dual(ctx.model, lam), 0)


def step_tilde(ctx, w):
    """Pre-relaxation target of one solver iteration started at w."""
    _, w_tilde = sync_step(state_from_w(ctx, w), ctx.params, ctx.model,
                           ctx.region, ctx.cost)
    return w_tilde


def check_averaged(ctx, tag, samples, tol=1e-9):
    """Verify the averagedness inequality for the tagged operator.

    samples is a sequence of (x, y) pairs.  Returns a report dict with the
    worst margin; raises PropertyViolated (with the witness pair) when a
    margin falls below -tol.
    """
    alpha = averaged_constant(ctx, tag)
    ratio = (1.0 - alpha) / alpha
    worst = np.inf
    witness = None
    for x, y in samples:
        tx = apply_operator(ctx, tag, x)
        ty = apply_operator(ctx, tag, y)
        lhs = gamma_norm(ctx, tx - ty) ** 2
        rhs = gamma_norm(ctx, x - y) ** 2 - ratio * gamma_norm(ctx, (x - tx) - (y - ty)) ** 2
        margin = rhs - lhs
        if margin < worst:
            worst = margin
            witness = (x.copy(), y.copy())
    if worst < -tol:
        raise PropertyViolated(
            f"{tag} averagedness (alpha={alpha:g}) violated with margin {worst:g}",
            witness=witness)
    return {"property": f"averaged[{tag}]", "alpha": alpha,
            "worst_margin": float(worst), "pairs": len(samples)}


def check_cocoercive(ctx, samples, tol=1e-9):
    """Verify <C x - C y, x - y> >= beta ||C x - C y||^2 (Euclidean norm)."""
    beta = ctx.params.beta
    worst = np.inf
    witness = None
    for x, y in samples:
        d = smooth_part(ctx, x) - smooth_part(ctx, y)
        margin = float(d @ (x - y)) - beta * float(d @ d)
        if margin < worst:
            worst = margin
            witness = (x.copy(), y.copy())
    if worst < -tol:
        raise PropertyViolated(
            f"cocoercivity violated with margin {worst:g}", witness=witness)
    return {"property": "cocoercive[C]", "alpha": beta,
            "worst_margin": float(worst), "pairs": len(samples)}


def check_consistency(ctx, points, tol=1e-10):
    """Forward-backward map agrees with the solver's per-bus arithmetic."""
    worst = 0.0
    for w in points:
        diff = float(np.max(np.abs(forward_backward(ctx, w) - step_tilde(ctx, w))))
        worst = max(worst, diff)
    if worst > tol:
        raise PropertyViolated(
            f"operator path deviates from solver step by {worst:g}")
    return {"property": "consistency[S vs step]", "alpha": float("nan"),
            "worst_margin": float(-worst), "pairs": len(points)}


def sample_pairs(ctx, rng, count, scale=1.0):
    dim = 3 * ctx.n
    return [(rng.normal(0.0, scale, dim), rng.normal(0.0, scale, dim))
            for _ in range(count)]


def property_report(ctx, rng, pairs=1000, scale=1.0):
    """Run the whole property suite; returns a list of report dicts."""
    samples = sample_pairs(ctx, rng, pairs, scale)
    reports = [
        check_cocoercive(ctx, samples),
        check_averaged(ctx, "S1", samples),
        check_averaged(ctx, "S2", samples),
        check_averaged(ctx, "S", samples),
        check_consistency(ctx, [x for x, _ in samples[:100]]),
        check_monotone(ctx, rng, pairs),
        check_dual_lipschitz(ctx, rng, pairs),
    ]
    return reports


def monotone_selection(ctx, w, normal):
    """A selection of D at w using the supplied normal-cone member."""
    z, lam = split_w(ctx, w)
    return np.concatenate((normal - coupling_adjoint(ctx, lam),
                           coupling_apply(ctx, z)))


def check_monotone(ctx, rng, pairs, tol=1e-9, scale=1.0):
    """Monotonicity of D on selections realized by projection certificates.

    For y drawn at random, z = P(y) is feasible and y - z lies in the normal
    cone at z, giving a concrete selection of D to test against.
    """
    n = ctx.n
    worst = np.inf
    for _ in range(pairs):
        sel = []
        for _k in range(2):
            y = rng.normal(0.0, scale, 2 * n)
            z = project_all(ctx.region, y)
            lam = rng.normal(0.0, scale, n)
            w = np.concatenate((z, lam))
            sel.append((w, monotone_selection(ctx, w, y - z)))
        (w1, d1), (w2, d2) = sel
        margin = float((d1 - d2) @ (w1 - w2))
        worst = min(worst, margin)
    if worst < -tol:
        raise PropertyViolated(f"monotonicity of D violated: {worst:g}")
    return {"property": "monotone[D]", "alpha": float("nan"),
            "worst_margin": float(worst), "pairs": pairs}


def check_dual_lipschitz(ctx, rng, pairs, tol=1e-9, scale=1.0):
    """||B^2 (l1 - l2)|| <= sigma_max^2 ||l1 - l2|| on random pairs."""
    B2 = ctx.model.B2
    cap = ctx.params.sigma_max ** 2
    worst = np.inf
    for _ in range(pairs):
        d = rng.normal(0.0, scale, ctx.n)
        margin = cap * float(np.linalg.norm(d)) - float(np.linalg.norm(B2 @ d))
        worst = min(worst, margin)
    if worst < -tol:
        raise PropertyViolated(f"dual gradient Lipschitz bound violated: {worst:g}")
    return {"property": "lipschitz[B^2]", "alpha": cap,
            "worst_margin": float(worst), "pairs": pairs}

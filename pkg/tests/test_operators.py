import numpy as np
import pytest

from distvolt.errors import PropertyViolated
from distvolt.feasible import project_all
from distvolt import operators as ops
from distvolt.solver import default_params, zero_cost

SCALE = 0.01   # keep samples at the benchmark's per-unit magnitudes


@pytest.fixture(scope="module")
def ctx(eightbus, eightbus_params):
    model, region, cost = eightbus
    return ops.make_context(model, region, cost, eightbus_params)


def sample_w(rng, n, scale=SCALE):
    return rng.normal(0.0, scale, 3 * n)


def test_smooth_part_zero_cost_zero_dual(eightbus):
    model, region, _ = eightbus
    cost0 = zero_cost(model.n)
    params = default_params(model, cost0, chi=0)
    c0 = ops.make_context(model, region, cost0, params)
    w = np.zeros(3 * model.n)
    out = ops.smooth_part(c0, w)
    assert np.array_equal(out[:2 * model.n], np.zeros(2 * model.n))
    assert np.array_equal(out[2 * model.n:], model.dev_offset)


def test_smooth_part_matches_finite_differences(ctx, rng):
    n = ctx.n
    model, cost = ctx.model, ctx.cost
    w = sample_w(rng, n)

    def potential(w):
        z, lam = w[:2 * n], w[2 * n:]
        return cost.value(z) + 0.5 * lam @ (model.B2 @ lam) + lam @ model.dev_offset

    g = ops.smooth_part(ctx, w)
    eps = 1e-7
    for i in range(3 * n):
        wp = w.copy(); wp[i] += eps
        wm = w.copy(); wm[i] -= eps
        fd = (potential(wp) - potential(wm)) / (2 * eps)
        assert g[i] == pytest.approx(fd, abs=1e-6)


def test_smooth_part_cocoercive(ctx, rng):
    samples = [(sample_w(rng, ctx.n), sample_w(rng, ctx.n)) for _ in range(1000)]
    report = ops.check_cocoercive(ctx, samples)
    assert report["worst_margin"] >= -1e-9


def test_resolvent_identity_at_interior_rest_point(ctx):
    n = ctx.n
    # zero injections are interior at every bus except the pinned one, where
    # the normal cone still contains zero; with zero duals the monotone part
    # vanishes, so the resolvent leaves the point unchanged.
    v = np.zeros(3 * n)
    out = ctx_resolve = ops.resolvent(ctx, v)
    assert np.max(np.abs(out - v)) < 1e-15


def test_resolvent_firmly_nonexpansive_metric_norm(ctx, rng):
    worst = np.inf
    for _ in range(1000):
        x = sample_w(rng, ctx.n)
        y = sample_w(rng, ctx.n)
        rx = ops.resolvent(ctx, x)
        ry = ops.resolvent(ctx, y)
        lhs = ops.gamma_norm(ctx, rx - ry) ** 2 \
            + ops.gamma_norm(ctx, (x - rx) - (y - ry)) ** 2
        rhs = ops.gamma_norm(ctx, x - y) ** 2
        worst = min(worst, rhs - lhs)
    assert worst >= -1e-9


def test_forward_backward_matches_solver_step(ctx, rng):
    for _ in range(100):
        w = sample_w(rng, ctx.n)
        diff = ops.forward_backward(ctx, w) - ops.step_tilde(ctx, w)
        assert np.max(np.abs(diff)) < 1e-10


@pytest.mark.parametrize("tag", ["S1", "S2", "S"])
def test_operators_are_averaged(ctx, rng, tag):
    samples = ops.sample_pairs(ctx, rng, 1000, scale=SCALE)
    report = ops.check_averaged(ctx, tag, samples)
    assert report["worst_margin"] >= -1e-9


def test_averaged_constants(ctx):
    bk = ctx.params.beta * ctx.params.kappa
    assert ops.averaged_constant(ctx, "S1") == 0.5
    assert ops.averaged_constant(ctx, "S2") == pytest.approx(1.0 / (2 * bk))
    assert ops.averaged_constant(ctx, "S") == pytest.approx(2 * bk / (4 * bk - 1))


def test_fixed_point_residual_small_at_solution(ctx, eightbus_solution):
    w_star = eightbus_solution.state.w
    assert ops.fixed_point_residual(ctx, w_star) < 1e-8


def test_relaxed_map_scaling_identity(ctx, rng):
    a = ops.averaged_constant(ctx, "S")
    for _ in range(50):
        w = sample_w(rng, ctx.n)
        s_move = ops.gamma_norm(ctx, ops.forward_backward(ctx, w) - w)
        t_move = ops.gamma_norm(ctx, ops.relaxed_map(ctx, w) - w)
        assert t_move == pytest.approx(s_move / a, rel=1e-10)


def test_inclusion_normal_cone_certificate(ctx, rng):
    n = ctx.n
    for _ in range(100):
        w = sample_w(rng, n)
        w_t = ops.forward_backward(ctx, w)
        z, lam = w[:2 * n], w[2 * n:]
        z_t, lam_t = w_t[:2 * n], w_t[2 * n:]
        # dual block of the inclusion is a linear identity
        lhs = -(ctx.model.dev_offset + ctx.model.B2 @ lam)
        rhs = ops.coupling_apply(ctx, z_t) \
            + ops.coupling_apply(ctx, z_t - z) \
            + (lam_t - lam) / ctx.params.alpha_lambda
        assert np.max(np.abs(lhs - rhs)) < 1e-9
        # injection block: the remaining vector must lie in the normal cone
        nu = -ctx.cost.grad(z) + ops.coupling_adjoint(ctx, lam) \
            - (z_t - z) / ctx.params.alpha_pq
        back = project_all(ctx.region, z_t + ctx.params.alpha_pq * nu)
        assert np.max(np.abs(back - z_t)) < 1e-10


def test_monotone_and_lipschitz_checks(ctx, rng):
    rep1 = ops.check_monotone(ctx, rng, 1000, scale=SCALE)
    assert rep1["worst_margin"] >= -1e-9
    rep2 = ops.check_dual_lipschitz(ctx, rng, 1000, scale=SCALE)
    assert rep2["worst_margin"] >= -1e-9


def test_property_violation_raises_with_witness(eightbus, eightbus_params):
    from dataclasses import replace
    model, region, cost = eightbus
    # corrupt beta far beyond the admissible cap: cocoercivity must fail
    bad = replace(eightbus_params, beta=eightbus_params.beta * 50.0)
    ctx_bad = ops.make_context(model, region, cost, bad)
    rng = np.random.default_rng(0)
    samples = ops.sample_pairs(ctx_bad, rng, 200, scale=SCALE)
    with pytest.raises(PropertyViolated) as err:
        ops.check_cocoercive(ctx_bad, samples)
    assert err.value.witness is not None


def test_property_report_runs_clean(ctx, rng):
    reports = ops.property_report(ctx, rng, pairs=150, scale=SCALE)
    names = {r["property"] for r in reports}
    assert {"cocoercive[C]", "averaged[S1]", "averaged[S2]", "averaged[S]",
            "consistency[S vs step]", "monotone[D]", "lipschitz[B^2]"} <= names
    for r in reports:
        if r["property"].startswith(("averaged", "cocoercive", "monotone")):
            assert r["worst_margin"] >= -1e-9

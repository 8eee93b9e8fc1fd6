"""Radial feeder model: incidence algebra and the linearized voltage equation.

The model works in per-unit throughout.  Voltages are carried as half the
squared magnitude (v = U^2 / 2, with U in p.u.), which makes the linearized
branch-flow voltage equation affine in the injections:

    v = R p + X q + v0 * 1 - R p_load - X q_load

with R = M^-T diag(r) M^-1 and X = M^-T diag(x) M^-1 built from the reduced
incidence matrix M of the tree.  B = X^-1 = M diag(1/x) M^T is the weighted
subtree Laplacian plus a shunt term 1/x_0j at buses adjacent to the
substation.  For a homogeneous feeder (common ratio K = r/x on every
segment) R = K X and the power-balance form of the voltage equation is

    B v = K p + q + balance_offset.

`dev_offset` is the same constant referenced to the target profile v_ref,
i.e. B (v - v_ref) = K p + q + dev_offset.
"""

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatch,
    NonHomogeneous,
    NonPositiveReactance,
    NotATree,
)

RATIO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable radial network with derived sensitivity matrices.

    Buses are numbered 1..n in input order; bus 0 is the substation and is
    not represented in the vectors/matrices.  Array index j-1 holds bus j.
    """

    n: int
    lines: tuple                 # (from, to, r_pu, x_pu), oriented away from bus 0, BFS order
    k_ratio: float
    v0: float                    # substation U0^2 / 2
    v_ref: np.ndarray            # target half-squared-voltage profile (0.5 * ones)
    p_load: np.ndarray
    q_load: np.ndarray
    M: np.ndarray                # reduced incidence, +1 at from-bus, -1 at to-bus
    R: np.ndarray
    X: np.ndarray
    B: np.ndarray
    B2: np.ndarray
    balance_offset: np.ndarray   # constant in B v = K p + q + balance_offset
    dev_offset: np.ndarray       # balance_offset - B v_ref
    b_shunt: np.ndarray          # 1/x_0j for buses adjacent to bus 0, else 0
    neighbors: tuple             # subtree adjacency (1-based bus ids), per bus
    two_hop: tuple               # distance-2 buses in the subtree, per bus
    b_support: tuple             # sorted ({j} | N_j) as 0-based indices, per bus
    b2_support: tuple            # sorted ({j} | N_j | N_j^2) as 0-based indices, per bus
    sigma_max: float             # largest eigenvalue of B (power iteration)
    s_base_mva: float = 1.0
    v_base_kv: float = 1.0
    ratio_spread: float = 0.0    # max |r/x - k_ratio| over segments

    def __post_init__(self):
        # Plain-float copies of the sparse rows for the per-bus kernels.
        b2_rows = tuple(tuple(float(self.B2[j, k]) for k in self.b2_support[j])
                        for j in range(self.n))
        b_rows = tuple(tuple(float(self.B[j, k]) for k in self.b_support[j])
                       for j in range(self.n))
        b_pos = tuple(tuple(int(np.searchsorted(self.b2_support[j], k))
                            for k in self.b_support[j]) for j in range(self.n))
        dev_list = tuple(float(x) for x in self.dev_offset)
        vref_list = tuple(float(x) for x in self.v_ref)
        for name, val in (("b2_rows", b2_rows), ("b_rows", b_rows),
                          ("b_in_b2", b_pos), ("dev_list", dev_list),
                          ("vref_list", vref_list)):
            object.__setattr__(self, name, val)

    @property
    def root_adjacent(self):
        return np.flatnonzero(self.b_shunt > 0.0)

    def kw_to_pu(self, kw):
        return np.asarray(kw, dtype=float) / (1000.0 * self.s_base_mva)

    def pu_to_kw(self, pu):
        return np.asarray(pu, dtype=float) * 1000.0 * self.s_base_mva


def _check_vector(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionMismatch(f"{name} must have length {n}, got shape {v.shape}")
    return v


def _orient_lines(lines, n):
    """Return the input lines re-oriented parent->child, in BFS order from bus 0."""
    adj = {b: [] for b in range(n + 1)}
    for idx, (a, b, r, x) in enumerate(lines):
        if x <= 0.0:
            raise NonPositiveReactance(f"line ({a},{b}) has x = {x}")
        adj[a].append((b, idx))
        adj[b].append((a, idx))
    seen = {0}
    order = []
    frontier = [0]
    used = set()
    while frontier:
        nxt = []
        for a in frontier:
            for b, idx in adj[a]:
                if idx in used:
                    continue
                used.add(idx)
                if b in seen:
                    raise NotATree(f"line index {idx} closes a cycle at bus {b}")
                seen.add(b)
                _, _, r, x = lines[idx]
                order.append((a, b, float(r), float(x)))
                nxt.append(b)
        frontier = nxt
    if len(seen) != n + 1 or len(order) != n:
        raise NotATree(
            f"expected a connected tree on buses 0..{n} with {n} lines, "
            f"reached {len(seen)} buses via {len(order)} lines"
        )
    return order


def build_network(lines, p_load=None, q_load=None, v0_pu=1.0, k_policy="exact",
                  k0=None, v_ref_pu=1.0, s_base_mva=1.0, v_base_kv=1.0):
    """Build a :class:`NetworkModel` from per-unit line data.

    Parameters
    ----------
    lines : sequence of (from_bus, to_bus, r_pu, x_pu)
        Tree lines in any orientation; bus ids are integers with 0 the
        substation and 1..n the controlled buses (n = number of lines).
    p_load, q_load : array_like, optional
        Uncontrollable per-bus load, per-unit.  Defaults to zero.
    v0_pu : float
        Substation voltage magnitude U0 in p.u.; stored as v0 = U0^2 / 2.
    k_policy : {"exact", "approximate"}
        "exact" requires all r/x ratios to agree to 1e-9 and uses that
        ratio; "approximate" uses the supplied `k0` even if the network is
        heterogeneous.
    k0 : float, optional
        Ratio to use under the "approximate" policy.
    v_ref_pu : float
        Target voltage magnitude; the target profile is v_ref_pu^2 / 2.
    """
    lines = [tuple(l) for l in lines]
    bus_ids = sorted({b for a, b, _, _ in lines} | {a for a, b, _, _ in lines})
    n = len(lines)
    if bus_ids != list(range(n + 1)):
        raise NotATree(f"bus ids must be exactly 0..{n}, got {bus_ids}")
    oriented = _orient_lines(lines, n)

    ratios = np.array([r / x for _, _, r, x in oriented])
    if k_policy == "exact":
        k_ratio = float(ratios[0])
        spread = float(np.max(np.abs(ratios - k_ratio)))
        if spread > RATIO_TOL:
            raise NonHomogeneous(
                f"r/x ratios spread {spread:.3e} exceeds {RATIO_TOL}; "
                "use k_policy='approximate' with an explicit k0"
            )
    elif k_policy == "approximate":
        if k0 is None:
            raise ValueError("k_policy='approximate' requires k0")
        k_ratio = float(k0)
        spread = float(np.max(np.abs(ratios - k_ratio)))
    else:
        raise ValueError(f"unknown k_policy {k_policy!r}")

    r_vec = np.array([r for _, _, r, _ in oriented])
    x_vec = np.array([x for _, _, _, x in oriented])

    M = np.zeros((n, n))
    b_shunt = np.zeros(n)
    for ell, (a, b, _, x) in enumerate(oriented):
        if a != 0:
            M[a - 1, ell] = 1.0
        else:
            b_shunt[b - 1] = 1.0 / x
        M[b - 1, ell] = -1.0

    Minv = np.linalg.inv(M)
    X = Minv.T @ np.diag(x_vec) @ Minv
    R = Minv.T @ np.diag(r_vec) @ Minv
    B = M @ np.diag(1.0 / x_vec) @ M.T
    B2 = B @ B

    nbr1 = [set() for _ in range(n)]
    for a, b, _, _ in oriented:
        if a != 0:
            nbr1[a - 1].add(b)
            nbr1[b - 1].add(a)
    nbr2 = []
    for j in range(n):
        two = set()
        for k in nbr1[j]:
            two |= nbr1[k - 1]
        two -= nbr1[j] | {j + 1}
        nbr2.append(two)
    support1 = tuple(
        np.array(sorted({j} | {k - 1 for k in nbr1[j]})) for j in range(n)
    )
    support = tuple(
        np.array(sorted({j} | {k - 1 for k in nbr1[j]} | {k - 1 for k in nbr2[j]}))
        for j in range(n)
    )

    p_c = _check_vector(p_load if p_load is not None else np.zeros(n), n, "p_load")
    q_c = _check_vector(q_load if q_load is not None else np.zeros(n), n, "q_load")
    v0 = 0.5 * float(v0_pu) ** 2
    v_ref = np.full(n, 0.5 * float(v_ref_pu) ** 2)

    w_s = B @ (np.full(n, v0) - R @ p_c - X @ q_c)
    w_a = w_s - B @ v_ref

    for arr in (v_ref, p_c, q_c, M, R, X, B, B2, w_s, w_a, b_shunt):
        arr.setflags(write=False)

    return NetworkModel(
        n=n,
        lines=tuple(oriented),
        k_ratio=k_ratio,
        v0=v0,
        v_ref=v_ref,
        p_load=p_c,
        q_load=q_c,
        M=M,
        R=R,
        X=X,
        B=B,
        B2=B2,
        balance_offset=w_s,
        dev_offset=w_a,
        b_shunt=b_shunt,
        neighbors=tuple(tuple(sorted(s)) for s in nbr1),
        two_hop=tuple(tuple(sorted(s)) for s in nbr2),
        b_support=support1,
        b2_support=support,
        sigma_max=_power_iteration(B),
        s_base_mva=float(s_base_mva),
        v_base_kv=float(v_base_kv),
        ratio_spread=spread,
    )


def _power_iteration(B, tol=1e-12, max_iter=10_000):
    """Largest eigenvalue of the symmetric positive definite matrix B."""
    v = np.ones(B.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        nw = np.linalg.norm(w)
        v = w / nw
        lam_new = float(v @ (B @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def balance_offsets(model, p_load, q_load):
    """Constant terms of the voltage balance for the given loads.

    Returns (balance_offset, dev_offset) with
    balance_offset = B (v0*1 - R p_load - X q_load) and
    dev_offset = balance_offset - B v_ref.
    """
    p_c = _check_vector(p_load, model.n, "p_load")
    q_c = _check_vector(q_load, model.n, "q_load")
    w_s = model.B @ (np.full(model.n, model.v0) - model.R @ p_c - model.X @ q_c)
    w_a = w_s - model.B @ model.v_ref
    return w_s, w_a


def with_loads(model, p_load, q_load):
    """Copy of the model with new loads and refreshed offset vectors."""
    p_c = _check_vector(p_load, model.n, "p_load").copy()
    q_c = _check_vector(q_load, model.n, "q_load").copy()
    w_s, w_a = balance_offsets(model, p_c, q_c)
    for arr in (p_c, q_c, w_s, w_a):
        arr.setflags(write=False)
    return replace(model, p_load=p_c, q_load=q_c,
                   balance_offset=w_s, dev_offset=w_a)


def linear_voltage(model, p, q):
    """Half-squared bus voltages of the linearized model at injections (p, q)."""
    p = _check_vector(p, model.n, "p")
    q = _check_vector(q, model.n, "q")
    return (model.R @ (p - model.p_load) + model.X @ (q - model.q_load)
            + np.full(model.n, model.v0))


# ---------------------------------------------------------------------------
# File ingestion.  Feeder: one line per segment `from,to,r_ohm,x_ohm`;
# loads: `bus,p_kw,q_kvar`; limits: `bus,p_min,p_max,q_min,q_max,s` in
# kW/kVar/kVA.  Impedances are divided by Z_base = v_base_kv^2 / s_base_mva,
# powers by 1000 * s_base_mva.
# ---------------------------------------------------------------------------

def read_feeder(path):
    df = pd.read_csv(path, comment="#")
    df.columns = [c.strip().lower() for c in df.columns]
    return [(int(r["from"]), int(r["to"]), float(r["r_ohm"]), float(r["x_ohm"]))
            for _, r in df.iterrows()]


def read_loads(path, n):
    df = pd.read_csv(path, comment="#")
    df.columns = [c.strip().lower() for c in df.columns]
    p = np.zeros(n)
    q = np.zeros(n)
    for _, r in df.iterrows():
        j = int(r["bus"])
        if not 1 <= j <= n:
            raise DimensionMismatch(f"load bus {j} outside 1..{n}")
        p[j - 1] = float(r["p_kw"])
        q[j - 1] = float(r["q_kvar"])
    return p, q


def load_feeder(feeder_path, loads_path=None, s_base_mva=1.0, v_base_kv=1.0,
                v0_pu=1.0, k_policy="exact", k0=None):
    """Build a model from a feeder CSV (ohms) and optional loads CSV (kW/kVar)."""
    z_base = float(v_base_kv) ** 2 / float(s_base_mva)
    lines_ohm = read_feeder(feeder_path)
    lines_pu = [(a, b, r / z_base, x / z_base) for a, b, r, x in lines_ohm]
    n = len(lines_pu)
    if loads_path is not None:
        p_kw, q_kvar = read_loads(loads_path, n)
        scale = 1.0 / (1000.0 * float(s_base_mva))
        p_load, q_load = p_kw * scale, q_kvar * scale
    else:
        p_load = q_load = None
    return build_network(lines_pu, p_load, q_load, v0_pu=v0_pu,
                         k_policy=k_policy, k0=k0,
                         s_base_mva=s_base_mva, v_base_kv=v_base_kv)

"""Per-bus feasible sets: a (p, q) box intersected with an apparent-power disk.

The Euclidean projection onto box-and-disk is computed exactly by active-set
enumeration: clamp to the box and accept if the disk holds, otherwise walk
the candidate minimizers of every box face/corner combination on the circle
and keep the feasible one nearest the query point.  The set is closed and
convex so the projection is unique.
"""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DimensionMismatch, EmptyRegion

FEAS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeasibleRegion:
    """Box bounds and disk radii for all buses, per-unit."""

    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        # Plain-float copies for the projection hot path.
        for name, arr in (("pl", self.p_min), ("ph", self.p_max),
                          ("ql", self.q_min), ("qh", self.q_max),
                          ("sr", self.s)):
            object.__setattr__(self, name, tuple(float(x) for x in arr))

    @property
    def n(self):
        return self.p_min.shape[0]

    def contains(self, j, p, q, tol=FEAS_TOL):
        """Constraint satisfaction at bus j within tol."""
        return (self.p_min[j] - tol <= p <= self.p_max[j] + tol
                and self.q_min[j] - tol <= q <= self.q_max[j] + tol
                and p * p + q * q <= self.s[j] ** 2 + tol)

    def violation(self, j, p, q):
        """Largest constraint violation at bus j (0 when feasible)."""
        v = max(self.p_min[j] - p, p - self.p_max[j],
                self.q_min[j] - q, q - self.q_max[j], 0.0)
        disk = np.hypot(p, q) - self.s[j]
        return max(v, disk, 0.0)


def make_region(p_min, p_max, q_min, q_max, s):
    arrs = [np.atleast_1d(np.asarray(a, dtype=float)).copy()
            for a in (p_min, p_max, q_min, q_max, s)]
    n = arrs[0].shape[0]
    for a in arrs:
        if a.shape != (n,):
            raise DimensionMismatch("limit vectors must share one length")
    p_lo, p_hi, q_lo, q_hi, rad = arrs
    if np.any(p_lo > p_hi) or np.any(q_lo > q_hi):
        raise EmptyRegion("a box has min > max")
    if np.any(rad < 0.0):
        raise EmptyRegion("negative disk radius")
    # Nonempty iff the box point nearest the origin is inside the disk.
    near_p = np.clip(0.0, p_lo, p_hi)
    near_q = np.clip(0.0, q_lo, q_hi)
    bad = np.hypot(near_p, near_q) > rad + FEAS_TOL
    if np.any(bad):
        raise EmptyRegion(f"empty feasible set at buses {np.flatnonzero(bad) + 1}")
    for a in arrs:
        a.setflags(write=False)
    return FeasibleRegion(p_lo, p_hi, q_lo, q_hi, rad)


def symmetric_region(p_max, q_max, s=None, margin=0.9):
    """Region with symmetric boxes and s = margin * hypot(p_max, q_max)."""
    p_max = np.asarray(p_max, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if s is None:
        s = margin * np.hypot(p_max, q_max)
    return make_region(-p_max, p_max, -q_max, q_max, s)


def project(region, j, p, q):
    """Exact Euclidean projection of (p, q) onto the bus-j feasible set."""
    pl = region.pl[j]
    ph = region.ph[j]
    ql = region.ql[j]
    qh = region.qh[j]
    s = region.sr[j]

    bp = min(max(p, pl), ph)
    bq = min(max(q, ql), qh)
    if bp * bp + bq * bq <= s * s:
        return bp, bq

    # Disk is active.  Candidates: free projection onto the circle, each box
    # face intersected with the circle, and the box corners inside the disk.
    cands = []
    norm = math.hypot(p, q)
    if norm > 0.0:
        cands.append((s * p / norm, s * q / norm))
    s2 = s * s
    for pf in (pl, ph):
        rem = s2 - pf * pf
        if rem >= 0.0:
            root = math.sqrt(rem)
            cands.append((pf, root))
            cands.append((pf, -root))
    for qf in (ql, qh):
        rem = s2 - qf * qf
        if rem >= 0.0:
            root = math.sqrt(rem)
            cands.append((root, qf))
            cands.append((-root, qf))
    cands.extend(((pl, ql), (pl, qh), (ph, ql), (ph, qh)))

    best = None
    best_d = np.inf
    for cp, cq in cands:
        if not (pl - FEAS_TOL <= cp <= ph + FEAS_TOL):
            continue
        if not (ql - FEAS_TOL <= cq <= qh + FEAS_TOL):
            continue
        if cp * cp + cq * cq > s2 + FEAS_TOL:
            continue
        d = (cp - p) ** 2 + (cq - q) ** 2
        if d < best_d:
            best_d = d
            best = (min(max(cp, pl), ph), min(max(cq, ql), qh))
    if best is None:
        # Cannot happen for a nonempty region; make_region guarantees one.
        raise EmptyRegion(f"no feasible candidate at bus {j + 1}")
    return best


def max_violation(region, p, q):
    """Largest constraint violation over all buses (0 when feasible)."""
    v = np.maximum(region.p_min - p, p - region.p_max)
    v = np.maximum(v, np.maximum(region.q_min - q, q - region.q_max))
    v = np.maximum(v, np.hypot(p, q) - region.s)
    return float(np.max(np.maximum(v, 0.0)))


def project_all(region, z):
    """Componentwise projection of the stacked vector z = [p; q]."""
    z = np.asarray(z, dtype=float)
    n = region.n
    if z.shape != (2 * n,):
        raise DimensionMismatch(f"z must have length {2 * n}, got {z.shape}")
    out = np.empty_like(z)
    for j in range(n):
        out[j], out[n + j] = project(region, j, z[j], z[n + j])
    return out


def read_limits(path, n, s_base_mva=1.0):
    """Limits CSV `bus,p_min,p_max,q_min,q_max,s` in kW/kVar/kVA -> region in p.u."""
    df = pd.read_csv(path, comment="#")
    df.columns = [c.strip().lower() for c in df.columns]
    scale = 1.0 / (1000.0 * float(s_base_mva))
    cols = {name: np.zeros(n) for name in ("p_min", "p_max", "q_min", "q_max", "s")}
    seen = np.zeros(n, dtype=bool)
    for _, r in df.iterrows():
        j = int(r["bus"])
        if not 1 <= j <= n:
            raise DimensionMismatch(f"limits bus {j} outside 1..{n}")
        seen[j - 1] = True
        for name in cols:
            cols[name][j - 1] = float(r[name]) * scale
    if not seen.all():
        raise DimensionMismatch(f"limits missing for buses {np.flatnonzero(~seen) + 1}")
    return make_region(cols["p_min"], cols["p_max"], cols["q_min"],
                       cols["q_max"], cols["s"])

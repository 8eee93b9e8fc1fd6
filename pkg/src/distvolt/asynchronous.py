"""Discrete-event engine for the delayed, randomly-activated iteration.

One global tick activates one bus, which reads possibly stale dual values
from its neighbors' output caches (bounded staleness), runs the same
per-bus kernel as the synchronous solver, and publishes its new dual before
bumping its local clock.  Staleness is counted on the global clock: a read
with delay tau returns the value that was current tau ticks ago, and every
drawn delay is bounded by chi, so no read ever uses information older than
chi ticks.

Determinism: a fixed seed fixes the activation sequence and every delay
draw, so runs replay bit-for-bit.  The engine is single-threaded; per-bus
state has a single writer and published values are immutable floats, which
is what makes the replay contract cheap to honor.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import StaleBeyondChi
from .solver import (PrimalDualState, bus_update, bus_voltage, sync_step,
                     validate_params, relative_error, DIVERGENCE_NORM)

ACTIVATION_LAWS = ("uniform", "round_robin", "simultaneous")
DELAY_LAWS = ("uniform", "fixed_max", "zero")


@dataclass(frozen=True)
class AsyncSchedule:
    """Activation and delay policy for the engine."""

    seed: int = 0
    chi: int = 0
    delay_law: str = "uniform"          # neighbor dual reads
    self_delay_law: str = "uniform"     # the bus's own (p, q, lambda) read
    activation: str = "uniform"
    shared_neighbor_tau: bool = False   # one draw for all neighbor reads of a tick
    relayed: bool = False               # model two-hop reads as relayed one-hop

    def __post_init__(self):
        if self.activation not in ACTIVATION_LAWS:
            raise ValueError(f"unknown activation law {self.activation!r}")
        for law in (self.delay_law, self.self_delay_law):
            if law not in DELAY_LAWS:
                raise ValueError(f"unknown delay law {law!r}")
        if self.chi < 0:
            raise ValueError("chi must be >= 0")
        if self.activation == "simultaneous" and self.chi != 0:
            raise ValueError("simultaneous activation requires chi = 0")


class _History:
    """Published values with the tick at which each became current.

    Reading "as of" tick u returns the newest entry with stamp <= u; if that
    entry has been dropped, the oldest retained one is returned, which is
    never older (as a current-value) than the retention horizon.
    """

    __slots__ = ("stamps", "values", "keep")

    def __init__(self, keep):
        self.stamps = deque()
        self.values = deque()
        self.keep = max(int(keep), 1)

    def publish(self, stamp, value):
        self.stamps.append(stamp)
        self.values.append(value)
        while len(self.stamps) > self.keep:
            self.stamps.popleft()
            self.values.popleft()

    def read(self, u):
        for i in range(len(self.stamps) - 1, -1, -1):
            if self.stamps[i] <= u:
                return self.values[i]
        return self.values[0]


@dataclass
class BusWorker:
    """Per-bus local clock, self history, and dual output cache."""

    clock: int = 0
    out: _History = None
    own: _History = None
    last_view: object = None


@dataclass
class DelayedView:
    """What an activated bus saw: its own delayed triple and the dual values
    on its squared-matrix row support (ascending bus order)."""

    bus: int
    tau_self: int
    p: float
    q: float
    lam: float
    lam_row: list
    taus: list

    @property
    def max_tau_neighbors(self):
        other = [t for t in self.taus if t is not None]
        return max(other) if other else 0


@dataclass
class TickRecord:
    tick: int
    bus: int
    tau_self: int
    max_tau_nbr: int
    residual: float
    rel_err: float


@dataclass
class AsyncResult:
    state: PrimalDualState
    trace: list
    converged: bool
    status: str
    ticks: int
    residual: float


class AsyncSimulation:
    """Stateful engine over a network/region/cost with validated parameters."""

    def __init__(self, model, region, cost, params, schedule, state0=None,
                 w_ref=None, validate=True, rng=None):
        if validate:
            params = validate_params(params, model)
        self.model = model
        self.region = region
        self.cost = cost
        self.params = params
        self.schedule = schedule
        self.rng = rng if rng is not None else np.random.default_rng(schedule.seed)
        self.w_ref = w_ref
        n = model.n
        if state0 is None:
            from .solver import initial_state
            state0 = initial_state(model, region)
        self.p = state0.p.copy()
        self.q = state0.q.copy()
        self.lam = state0.lam.copy()
        self.v = state0.v.copy()
        self.tick_count = 0
        keep = schedule.chi + 1
        self.workers = []
        for j in range(n):
            w = BusWorker(clock=0, out=_History(keep), own=_History(keep))
            w.out.publish(0, float(self.lam[j]))
            w.own.publish(0, (float(self.p[j]), float(self.q[j]), float(self.lam[j])))
            self.workers.append(w)
        self._act_buf = []
        self._act_pos = 0
        self._tau_buf = []
        self._tau_pos = 0

    # -- draws (buffered; one generator call covers many ticks) ----------

    _BUF = 4096

    def _next_activation(self):
        if self._act_pos >= len(self._act_buf):
            self._act_buf = [int(x) for x in
                             self.rng.integers(0, self.model.n, size=self._BUF)]
            self._act_pos = 0
        val = self._act_buf[self._act_pos]
        self._act_pos += 1
        return val

    def _next_tau(self):
        if self._tau_pos >= len(self._tau_buf):
            self._tau_buf = [int(x) for x in
                             self.rng.integers(0, self.schedule.chi + 1,
                                               size=self._BUF)]
            self._tau_pos = 0
        val = self._tau_buf[self._tau_pos]
        self._tau_pos += 1
        return val

    def _draw_tau(self, law):
        chi = self.schedule.chi
        if law == "zero" or chi == 0:
            return 0
        if law == "fixed_max":
            return chi
        return self._next_tau()

    def draw_activation(self):
        if self.schedule.activation == "round_robin":
            return self.tick_count % self.model.n
        return self._next_activation()

    def draw_delays(self, j):
        """(tau_self, taus aligned with the b2 support, None at the self slot)."""
        support = self.model.b2_support[j]
        sched = self.schedule
        tau_self = self._draw_tau(sched.self_delay_law)
        if sched.shared_neighbor_tau:
            shared = self._draw_tau(sched.delay_law)
            return tau_self, [None if k == j else shared for k in support]
        return tau_self, [None if k == j else self._draw_tau(sched.delay_law)
                          for k in support]

    # -- reads ----------------------------------------------------------

    def read_neighbor_lambda(self, k, u):
        """Dual of bus k as of tick u.  Two-hop reads are relayed through an
        intermediate neighbor in the `relayed` model; the merged delay is the
        single draw already applied to u, so both models return the same
        value by construction."""
        return self.workers[k].out.read(u)

    def build_view(self, j, tau_self, taus):
        """Assemble the delayed view for bus j at the current tick."""
        chi = self.schedule.chi
        t = self.tick_count
        if tau_self > chi or any(tau is not None and tau > chi for tau in taus):
            raise StaleBeyondChi(f"drawn delay exceeds chi={chi} at tick {t}")
        own_p, own_q, own_lam = self.workers[j].own.read(max(t - tau_self, 0))
        lam_row = []
        support = self.model.b2_support[j]
        for k, tau in zip(support, taus):
            if k == j:
                lam_row.append(own_lam)
            else:
                lam_row.append(self.read_neighbor_lambda(k, max(t - tau, 0)))
        view = DelayedView(bus=j, tau_self=tau_self, p=own_p, q=own_q,
                           lam=own_lam, lam_row=lam_row, taus=taus)
        self.workers[j].last_view = view
        return view

    def delayed_view(self, j, tau_self=None, taus=None):
        """Public read-phase helper; draws delays from the schedule when not
        supplied (consuming the RNG stream)."""
        if tau_self is None or taus is None:
            tau_self, taus = self.draw_delays(j)
        return self.build_view(j, tau_self, taus)

    # -- tick -----------------------------------------------------------

    def _apply_bus(self, j, view):
        p1, q1, l1, _, _, _ = bus_update(
            j, view.p, view.q, view.lam, view.lam_row,
            self.model, self.region, self.cost, self.params)
        return p1, q1, l1

    def _write_bus(self, j, p1, q1, l1, stamp):
        self.p[j] = p1
        self.q[j] = q1
        self.lam[j] = l1
        worker = self.workers[j]
        worker.out.publish(stamp, float(l1))
        worker.own.publish(stamp, (float(p1), float(q1), float(l1)))
        worker.clock += 1

    def _refresh_voltage(self, j, view, l1):
        """Local voltage from the fresh own dual and the duals read this tick."""
        lam_vals = [l1 if k == j else view.lam_row[pos]
                    for k, pos in zip(self.model.b_support[j],
                                      self.model.b_in_b2[j])]
        self.v[j] = bus_voltage(self.model, j, lam_vals)

    def tick(self):
        """Advance one global tick; returns the activated bus (or -1 for a
        simultaneous batch)."""
        t = self.tick_count
        if self.schedule.activation == "simultaneous":
            views = [self.build_view(j, *self.draw_delays(j))
                     for j in range(self.model.n)]
            updates = [self._apply_bus(j, v) for j, v in enumerate(views)]
            for j, (p1, q1, l1) in enumerate(updates):
                self._write_bus(j, p1, q1, l1, t + 1)
            lam_new = self.lam
            for j in range(self.model.n):
                self.v[j] = bus_voltage(self.model, j,
                                        lam_new[self.model.b_support[j]])
            self.tick_count = t + 1
            return -1
        j = self.draw_activation()
        view = self.build_view(j, *self.draw_delays(j))
        p1, q1, l1 = self._apply_bus(j, view)
        self._write_bus(j, p1, q1, l1, t + 1)
        self._refresh_voltage(j, view, l1)
        self.tick_count = t + 1
        return j

    # -- inspection ------------------------------------------------------

    @property
    def state(self):
        return PrimalDualState(self.p.copy(), self.q.copy(), self.lam.copy(),
                               self.v.copy(), self.tick_count)

    @property
    def w(self):
        return np.concatenate((self.p, self.q, self.lam))

    def stacked_residual(self):
        """Fixed-point residual of the current stacked state under one
        delay-free sweep (same metric as the synchronous solver)."""
        _, w_tilde = sync_step(self.state, self.params, self.model,
                               self.region, self.cost)
        return float(np.max(np.abs(w_tilde - self.w)))


def run_async(sim, tol=None, rel_err_tol=None, max_ticks=100_000, record=True,
              check_every=1):
    """Drive the simulation until a stop rule fires.

    Stop rules: stacked fixed-point residual below tol, squared relative
    error against the reference below rel_err_tol, or the tick budget.
    """
    trace = []
    status = "max_iter"
    res = math.nan
    while sim.tick_count < max_ticks:
        bus = sim.tick()
        view = sim.workers[bus].last_view if bus >= 0 else None
        check = (sim.tick_count % check_every == 0) or sim.tick_count == max_ticks
        rel = math.nan
        if check:
            res = sim.stacked_residual()
            if sim.w_ref is not None:
                rel = relative_error(sim.w, sim.w_ref)
        if record:
            trace.append(TickRecord(
                tick=sim.tick_count,
                bus=bus,
                tau_self=view.tau_self if view else 0,
                max_tau_nbr=view.max_tau_neighbors if view else 0,
                residual=res,
                rel_err=rel))
        if float(np.max(np.abs(sim.w))) > DIVERGENCE_NORM \
                or (check and not np.isfinite(res)):
            status = "diverged"
            break
        if check and tol is not None and res < tol:
            status = "converged"
            break
        if check and rel_err_tol is not None and sim.w_ref is not None \
                and rel < rel_err_tol:
            status = "converged"
            break
    return AsyncResult(state=sim.state, trace=trace,
                       converged=status == "converged", status=status,
                       ticks=sim.tick_count, residual=res)

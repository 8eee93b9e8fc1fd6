"""Scenario configuration, time-series ingestion, the online constant-term
estimator, and the quasi-static daily simulation loop.

A scenario is one YAML file (paths inside it are relative to the file)
describing the network data, cost coefficients, optional explicit solver
parameters, the activation/delay schedule, and for daily runs the load/PV
profiles.  Each simulated minute refreshes the feasible limits from the PV
availability, re-estimates the voltage-equation constant from measurements,
runs a fixed budget of controller updates, and logs the network-wide
voltage mismatch plus the optimality residual.
"""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .acflow import solve_ac
from .asynchronous import AsyncSchedule, AsyncSimulation, run_async
from .errors import ConfigError, MissingMeasurement, StepSizeTooLarge
from .feasible import make_region, project_all, read_limits
from .network import linear_voltage, load_feeder, with_loads
from .solver import (QuadraticCost, SolverParams, default_params, initial_state,
                     kkt_residual, relaxation_limit, solve_sync, sync_step,
                     validate_params)

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    root: Path
    network: dict
    cost: dict
    solver: dict
    schedule: dict
    mode: str
    daily: dict

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        if not isinstance(raw, dict) or "network" not in raw:
            raise ConfigError(f"{path}: scenario must be a mapping with a 'network' section")
        mode = raw.get("mode", "sync")
        if mode not in ("sync", "async"):
            raise ConfigError(f"{path}: mode must be 'sync' or 'async', got {mode!r}")
        return cls(root=path.parent,
                   network=raw["network"],
                   cost=raw.get("cost", {}),
                   solver=raw.get("solver", {}),
                   schedule=raw.get("schedule", {}),
                   mode=mode,
                   daily=raw.get("daily", {}))

    def _path(self, name):
        return self.root / name

    def build_model(self):
        net = self.network
        for key in ("feeder", "limits"):
            if key not in net:
                raise ConfigError(f"network section needs a '{key}' file")
        model = load_feeder(
            self._path(net["feeder"]),
            self._path(net["loads"]) if net.get("loads") else None,
            s_base_mva=net.get("s_base_mva", 1.0),
            v_base_kv=net.get("v_base_kv", 1.0),
            v0_pu=net.get("v0_pu", 1.0),
            k_policy=net.get("k_policy", "exact"),
            k0=net.get("k0"))
        region = read_limits(self._path(net["limits"]), model.n,
                             s_base_mva=net.get("s_base_mva", 1.0))
        return model, region

    def build_cost(self, n):
        return QuadraticCost(self.cost.get("c_p", 0.0), self.cost.get("c_q", 0.0), n=n)

    def build_schedule(self, **overrides):
        cfg = dict(self.schedule)
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return AsyncSchedule(
            seed=int(cfg.get("seed", 0)),
            chi=int(cfg.get("chi", 0)),
            delay_law=cfg.get("delay_law", "uniform"),
            self_delay_law=cfg.get("self_delay_law", "uniform"),
            activation=cfg.get("activation", "uniform"),
            shared_neighbor_tau=bool(cfg.get("shared_neighbor_tau", False)),
            relayed=bool(cfg.get("relayed", False)))

    def build_params(self, model, cost, chi, eta=None):
        cfg = self.solver
        explicit = {k for k in ("alpha_pq", "alpha_lambda", "eta", "beta", "kappa")
                    if k in cfg}
        base = default_params(model, cost, chi=chi)
        if not explicit and eta is None:
            return base
        params = SolverParams(
            alpha_pq=float(cfg.get("alpha_pq", base.alpha_pq)),
            alpha_lambda=float(cfg.get("alpha_lambda", base.alpha_lambda)),
            eta=float(eta if eta is not None else cfg.get("eta", base.eta)),
            beta=float(cfg.get("beta", base.beta)),
            kappa=float(cfg.get("kappa", base.kappa)),
            lipschitz_theta=cost.theta,
            sigma_max=model.sigma_max,
            chi=int(chi),
            n=model.n)
        return validate_params(params, model)


# ---------------------------------------------------------------------------
# Measurements and the online constant-term estimator
# ---------------------------------------------------------------------------

@dataclass
class MeasurementFrame:
    """Per-bus measured half-squared voltages and injections at one instant."""

    v: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @classmethod
    def from_linear(cls, model, p, q):
        return cls(v=linear_voltage(model, p, q), p=np.asarray(p, dtype=float),
                   q=np.asarray(q, dtype=float))

    @classmethod
    def from_ac(cls, model, p, q):
        sol = solve_ac(model, p, q)
        return cls(v=0.5 * sol.u ** 2, p=np.asarray(p, dtype=float),
                   q=np.asarray(q, dtype=float))


def estimate_offset_online(model, frame, j, use_controller_injections=False,
                           state=None):
    """Per-bus estimate of the deviation-form constant from local data.

    Uses the bus's own and its neighbors' measured voltages together with
    the local injection (measured, or the controller's own set-point when
    power measurements are unavailable).  At a linear-model operating point
    the estimate reproduces the constructed constant exactly.
    """
    support = model.b_support[j]
    row = model.B[j]
    vals = frame.v
    if vals is None or np.any(np.isnan(vals[support])):
        raise MissingMeasurement(f"voltage measurements missing around bus {j + 1}")
    acc = 0.0
    ref = 0.0
    for k in support:
        acc += row[k] * vals[k]
        ref += row[k] * model.v_ref[k]
    if use_controller_injections:
        if state is None:
            raise MissingMeasurement("controller state required when skipping power measurements")
        p_m, q_m = state.p[j], state.q[j]
    else:
        if np.isnan(frame.p[j]) or np.isnan(frame.q[j]):
            raise MissingMeasurement(f"injection measurement missing at bus {j + 1}")
        p_m, q_m = frame.p[j], frame.q[j]
    return acc - model.k_ratio * p_m - q_m - ref


def estimate_offsets(model, frame, use_controller_injections=False, state=None):
    est = np.array([estimate_offset_online(model, frame, j,
                                           use_controller_injections, state)
                    for j in range(model.n)])
    return est


def model_with_offsets(model, dev_offset):
    dev = np.asarray(dev_offset, dtype=float).copy()
    bal = dev + model.B @ model.v_ref
    for arr in (dev, bal):
        arr.setflags(write=False)
    return replace(model, dev_offset=dev, balance_offset=bal)


# ---------------------------------------------------------------------------
# Daily profiles
# ---------------------------------------------------------------------------

def synthetic_profiles(cfg, base_p_load, base_q_load, p_max_file, minutes):
    """Sinusoidal load (evening peak) and a solar bell (midday peak)."""
    base = float(cfg.get("load_base", 0.75))
    amp = float(cfg.get("load_amp", 0.25))
    peak = float(cfg.get("load_peak_minute", 1140))
    pv_peak = float(cfg.get("pv_peak_minute", 720))
    width = float(cfg.get("pv_width_minutes", 360))
    frac = float(cfg.get("pv_peak_frac", 1.0))
    scale = float(cfg.get("load_scale", 1.0))
    base_p_load = scale * np.asarray(base_p_load, dtype=float)
    base_q_load = scale * np.asarray(base_q_load, dtype=float)
    n = base_p_load.shape[0]
    pv_buses = cfg.get("pv_buses")
    if pv_buses is None:
        pv_buses = [j + 1 for j in range(n) if p_max_file[j] > 0.0]
    t = np.arange(minutes)
    lf = base + amp * np.cos(2.0 * np.pi * (t - peak) / 1440.0)
    p_load = np.outer(lf, base_p_load)
    q_load = np.outer(lf, base_q_load)
    pv = np.full((minutes, n), np.nan)
    arg = (t - pv_peak) / width
    bell = np.where(np.abs(arg) <= 1.0, np.cos(0.5 * np.pi * arg) ** 2, 0.0)
    for j1 in pv_buses:
        pv[:, j1 - 1] = frac * p_max_file[j1 - 1] * bell
    return p_load, q_load, pv


def read_series(path, n, s_base_mva):
    """Time-series CSV minute,bus,p_kw,q_kvar,pv_kw -> per-minute p.u. arrays."""
    import pandas as pd
    df = pd.read_csv(path, comment="#")
    df.columns = [c.strip().lower() for c in df.columns]
    minutes = int(df["minute"].max()) + 1
    scale = 1.0 / (1000.0 * float(s_base_mva))
    p_load = np.zeros((minutes, n))
    q_load = np.zeros((minutes, n))
    pv = np.full((minutes, n), np.nan)
    for _, r in df.iterrows():
        t, j = int(r["minute"]), int(r["bus"]) - 1
        p_load[t, j] = float(r["p_kw"]) * scale
        q_load[t, j] = float(r["q_kvar"]) * scale
        if "pv_kw" in df.columns and not math.isnan(float(r["pv_kw"])):
            pv[t, j] = float(r["pv_kw"]) * scale
    return p_load, q_load, pv


def limits_for_minute(region0, pv_row):
    """PV buses produce within [0, available]; others keep their file limits."""
    has_pv = ~np.isnan(pv_row)
    if not np.any(has_pv):
        return region0
    p_min = np.where(has_pv, np.maximum(region0.p_min, 0.0), region0.p_min)
    p_max = np.where(has_pv, np.minimum(region0.p_max, pv_row), region0.p_max)
    return make_region(p_min, np.maximum(p_max, p_min), region0.q_min,
                       region0.q_max, region0.s)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else FLOAT_FMT % c
                        if isinstance(c, float) else c for c in row])


def run_static(scenario, mode=None, seed=None, chi=None, eta=None, out_dir=None,
               tol=None, max_iter=None):
    """Static solve (Fig.-3 style): deep reference first, then the requested
    run logging its residual and relative error per iteration."""
    model, region = scenario.build_model()
    cost = scenario.build_cost(model.n)
    mode = mode or scenario.mode
    schedule = scenario.build_schedule(seed=seed, chi=chi)
    chi_eff = schedule.chi if mode == "async" else 0
    params = scenario.build_params(model, cost, chi=chi_eff, eta=eta)
    tol = float(tol if tol is not None else scenario.solver.get("tol", 1e-10))
    max_iter = int(max_iter if max_iter is not None else
                   scenario.solver.get("max_iter", 20_000))

    state0 = initial_state(model, region)
    ref_params = scenario.build_params(model, cost, chi=0)
    deep = solve_sync(state0, ref_params, model, region, cost,
                      tol=1e-12, max_iter=max(max_iter, 30_000), record=False)
    w_ref = deep.state.w

    if mode == "sync":
        result = solve_sync(state0, params, model, region, cost, tol=tol,
                            max_iter=max_iter, w_ref=w_ref)
        rows = [(int(r[0]), float(r[1]), float(r[2])) for r in result.trace]
        header = ["iter", "residual", "rel_err_vs_wstar"]
        final_state = result.state
        status = result.status
        residual = result.residual
        ticks = result.iterations
    else:
        sim = AsyncSimulation(model, region, cost, params, schedule,
                              state0=state0, w_ref=w_ref)
        result = run_async(sim, tol=tol, max_ticks=max_iter * model.n)
        rows = [(r.tick, r.bus, r.tau_self, r.max_tau_nbr,
                 float(r.residual), float(r.rel_err)) for r in result.trace]
        header = ["tick", "bus", "tau_self", "max_tau_neighbors",
                  "residual", "rel_err"]
        final_state = result.state
        status = result.status
        residual = result.residual
        ticks = result.ticks

    kkt = kkt_residual(final_state, model, region, cost)
    summary = {
        "mode": mode,
        "status": status,
        "iterations": ticks,
        "residual": residual,
        "kkt_voltage": kkt[0],
        "kkt_injection": kkt[1],
        "kkt_balance": kkt[2],
        "p_kw": list(model.pu_to_kw(final_state.p)),
        "q_kvar": list(model.pu_to_kw(final_state.q)),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "trace.csv", header, rows)
        with open(out / "summary.txt", "w") as fh:
            for key, val in summary.items():
                fh.write(f"{key}: {val}\n")
        summary["trace_path"] = str(out / "trace.csv")
    summary["trace_header"] = header
    summary["trace_rows"] = rows
    summary["state"] = final_state
    summary["model"] = model
    summary["region"] = region
    return summary


def _throttled_steps(budget, n_reads, chi, rng):
    """Step start offsets for barrier execution: each step costs 1 tick plus
    the slowest of its reads' delays."""
    used = 0
    starts = []
    while used < budget:
        if chi > 0:
            delay = int(np.max(rng.integers(0, chi + 1, size=n_reads)))
        else:
            delay = 0
        cost = 1 + delay
        if used + cost > budget:
            break
        starts.append(used)
        used += cost
    return starts


def run_daily(scenario, mode=None, seed=None, chi=None, out_dir=None,
              minutes=None, measurement=None, progress=None):
    """Quasi-static daily loop.

    Per minute: refresh PV-dependent limits, re-estimate the constant term
    from measurements at the current operating point, run the per-minute
    update budget (asynchronously, or synchronously throttled by the slowest
    read when delays are configured), and log the voltage mismatch and the
    optimality residual.  Returns the row list; CSV output is flushed per
    minute so partial results survive failures.
    """
    model, region0 = scenario.build_model()
    cost = scenario.build_cost(model.n)
    mode = mode or scenario.mode
    schedule = scenario.build_schedule(seed=seed, chi=chi)
    daily = scenario.daily
    minutes = int(minutes if minutes is not None else daily.get("minutes", 1440))
    per_step = int(daily.get("iterations_per_step", 300))
    measurement = measurement or daily.get("measurement", "linear")
    if measurement not in ("linear", "ac"):
        raise ConfigError(f"measurement must be 'linear' or 'ac', got {measurement!r}")
    use_ctrl = bool(daily.get("use_controller_injections", False))

    params = scenario.build_params(model, cost, chi=schedule.chi)
    if daily.get("series"):
        p_load, q_load, pv = read_series(scenario._path(daily["series"]), model.n,
                                         scenario.network.get("s_base_mva", 1.0))
        minutes = min(minutes, p_load.shape[0])
    else:
        p_max_file = region0.p_max
        p_load, q_load, pv = synthetic_profiles(
            daily.get("synthetic", {}), model.p_load, model.q_load,
            p_max_file, minutes)

    seeds = np.random.SeedSequence(schedule.seed).spawn(2)
    sim_rng = np.random.default_rng(seeds[0])
    throttle_rng = np.random.default_rng(seeds[1])
    n_reads = sum(len(s) - 1 for s in model.b2_support)

    state = initial_state(model, region0)
    rows = []
    step_rows = []
    fh = writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "daily.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["minute", "mode", "voltage_error", "kkt_residual"])
    try:
        for minute in range(minutes):
            truth = with_loads(model, p_load[minute], q_load[minute])
            region = limits_for_minute(region0, pv[minute])
            z = project_all(region, state.z)
            state.p, state.q = z[:model.n], z[model.n:]

            if measurement == "linear":
                frame = MeasurementFrame.from_linear(truth, state.p, state.q)
            else:
                frame = MeasurementFrame.from_ac(truth, state.p, state.q)
            est = estimate_offsets(model, frame, use_ctrl, state)
            ctrl_model = model_with_offsets(model, est)

            if mode == "async":
                sim = AsyncSimulation(ctrl_model, region, cost, params, schedule,
                                      state0=state, validate=False, rng=sim_rng)
                budget = per_step * model.n
                for _ in range(budget):
                    sim.tick()
                state = sim.state
                steps_done = per_step
            else:
                starts = _throttled_steps(per_step, n_reads, schedule.chi,
                                          throttle_rng)
                for _ in starts:
                    state, _ = sync_step(state, params, ctrl_model, region, cost)
                steps_done = len(starts)

            if measurement == "linear":
                v_now = linear_voltage(truth, state.p, state.q)
            else:
                v_now = 0.5 * solve_ac(truth, state.p, state.q).u ** 2
            verr = float(np.linalg.norm(v_now - model.v_ref))
            kkt = kkt_residual(state, ctrl_model, region, cost)
            kkt_max = float(max(kkt))
            rows.append((minute, mode, verr, kkt_max))
            step_rows.append((minute, mode, steps_done, steps_done * (model.n if mode == "async" else 1)))
            if writer is not None:
                writer.writerow([minute, mode, FLOAT_FMT % verr, FLOAT_FMT % kkt_max])
                fh.flush()
            if progress is not None and minute % progress == 0:
                print(f"  minute {minute:4d}  verr={verr:.3e} kkt={kkt_max:.2e} steps={steps_done}")
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        _write_csv(Path(out_dir) / "daily_steps.csv",
                   ["minute", "mode", "steps", "updates"], step_rows)
    return {"rows": rows, "steps": step_rows, "model": model, "state": state,
            "mode": mode, "minutes": minutes}

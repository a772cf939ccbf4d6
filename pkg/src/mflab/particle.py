"""N-particle SDE ensembles: integrators, forces, and replica orchestration.

Replicas are advanced in fixed batches of 256 with one counter-based RNG
stream per batch keyed by (master_seed, batch index), so results are
bit-identical for any worker count; workers only ever receive batch indices
(the plan itself is inherited at fork time).
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import EmpiricalMeasure, ModelSpec, Torus

__all__ = [
    "ParticleState",
    "ReplicaPlan",
    "Observable",
    "ObservableSeries",
    "GaussianLine",
    "UniformTorus",
    "WrappedGaussianTorus",
    "CompactUniform",
    "em_step",
    "pair_force",
    "simulate_ensemble",
    "observable_powers",
    "DivergenceError",
]

BATCH_SIZE = 256  # fixed batch partition; part of the determinism contract


# ---------------------------------------------------------------------------
# initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianLine:
    mean: float = 0.0
    var: float = 1.0

    def sample(self, rng, shape, spec):
        return rng.normal(self.mean, math.sqrt(self.var), size=shape)


@dataclass(frozen=True)
class UniformTorus:
    def sample(self, rng, shape, spec):
        return rng.uniform(0.0, spec.period, size=shape)


@dataclass(frozen=True)
class WrappedGaussianTorus:
    mean: float = np.pi
    var: float = 0.25

    def sample(self, rng, shape, spec):
        return rng.normal(self.mean, math.sqrt(self.var), size=shape) % spec.period


@dataclass(frozen=True)
class CompactUniform:
    lo: float = -1.0
    hi: float = 1.0

    def sample(self, rng, shape, spec):
        return rng.uniform(self.lo, self.hi, size=shape)


InitialLaw = GaussianLine | UniformTorus | WrappedGaussianTorus | CompactUniform


# ---------------------------------------------------------------------------
# plan, state, observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicaPlan:
    N: int
    R: int
    dt: float
    T: float
    record_times: tuple[float, ...]
    master_seed: int
    initial_law: InitialLaw
    integrator: str = "em"             # "em" | "baoab" (baoab: Langevin only)
    velocity_var: float | None = None  # Langevin initial velocity variance

    def __post_init__(self):
        if self.dt <= 0 or self.R < 1 or self.N < 1:
            raise ValueError("need dt > 0, R >= 1, N >= 1")
        if self.integrator not in ("em", "baoab"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        snapped = tuple(sorted(round(round(t / self.dt) * self.dt, 12)
                               for t in self.record_times))
        if any(t > self.T + 1e-12 for t in snapped):
            raise ValueError("record time beyond the horizon")
        object.__setattr__(self, "record_times", snapped)

    def record_steps(self) -> list[int]:
        return [int(round(t / self.dt)) for t in self.record_times]

    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def batches(self) -> list[tuple[int, int]]:
        """(start, size) per batch; the partition is independent of workers."""
        out = []
        start = 0
        while start < self.R:
            out.append((start, min(BATCH_SIZE, self.R - start)))
            start += BATCH_SIZE
        return out


@dataclass
class ParticleState:
    positions: np.ndarray
    velocities: np.ndarray | None
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_1d(np.asarray(self.positions, dtype=float))
        if self.velocities is not None:
            self.velocities = np.atleast_1d(np.asarray(self.velocities, dtype=float))
            if self.velocities.shape != self.positions.shape:
                raise ValueError("positions/velocities shape mismatch")

    @property
    def N(self) -> int:
        return self.positions.shape[-1]


@dataclass(frozen=True)
class Observable:
    """Named single-particle test function; fn(x, v) -> per-particle values.

    `w3_sup` is the sup of |phi|, |phi'|, |phi''|, |phi'''| on the support,
    used by the concentration experiment.
    """

    name: str
    fn: object
    w3_sup: float | None = None

    def empirical_mean(self, positions, velocities):
        return self.fn(positions, velocities).mean(axis=-1)


def observable_powers(base: Observable, m: int) -> list[Observable]:
    """phi, phi^2, ..., phi^m as separate observables."""
    def power_fn(p):
        return lambda x, v: base.fn(x, v) ** p
    return [base] + [Observable(f"{base.name}^{p}", power_fn(p))
                     for p in range(2, m + 1)]


@dataclass
class ObservableSeries:
    """Per replica, per record time: each observable mean and Q(mu)^2."""

    times: np.ndarray                  # (n_times,)
    names: tuple[str, ...]
    values: np.ndarray                 # (R, n_times, n_obs), NaN where diverged
    q_squared: np.ndarray              # (R, n_times)
    diverged: np.ndarray               # (R,) bool

    def valid(self) -> np.ndarray:
        return ~self.diverged

    def series(self, name: str, time_index: int) -> np.ndarray:
        j = self.names.index(name)
        return self.values[self.valid(), time_index, j]

    def n_valid(self) -> int:
        return int(self.valid().sum())


class DivergenceError(RuntimeError):
    def __init__(self, count, total):
        super().__init__(f"{count}/{total} replicas diverged (> 0.1% budget)")
        self.count = count


# ---------------------------------------------------------------------------
# forces and integrators
# ---------------------------------------------------------------------------

def pair_force(positions: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """F_i = -(kappa/N) sum_j grad W(x_i - x_j), batched over leading axes.

    Cosine potentials use per-mode trig sums (O(N * modes)); anything else
    falls back to the direct O(N^2) pairwise evaluation.
    """
    x = np.asarray(positions, dtype=float)
    if spec.kappa == 0.0:
        return np.zeros_like(x)
    pot = spec.interaction
    if pot.family == "cosine_sum":
        L = spec.period if spec.period is not None else (pot.period or 2 * np.pi)
        out = np.zeros_like(x)
        for n, wn in enumerate(pot.params, start=1):
            if wn == 0.0:
                continue
            kn = 2.0 * np.pi * n / L
            sin, cos = np.sin(kn * x), np.cos(kn * x)
            c = cos.mean(axis=-1, keepdims=True)
            s = sin.mean(axis=-1, keepdims=True)
            out += wn * kn * (sin * c - cos * s)
        return spec.kappa * out
    if x.ndim == 1:
        diffs = x[:, None] - x[None, :]
        return -spec.kappa * pot.grad_w(diffs, spec.period).mean(axis=-1)
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    for r in range(flat.shape[0]):  # direct path: bound the (N, N) workspace
        diffs = flat[r][:, None] - flat[r][None, :]
        out[r] = -spec.kappa * pot.grad_w(diffs, spec.period).mean(axis=-1)
    return out.reshape(x.shape)


def _drift_force(x, spec):
    return -spec.grad_confinement(x) + pair_force(x, spec)


def _step_overdamped(x, spec, dt, noise):
    return x + _drift_force(x, spec) * dt + noise


def _step_langevin_em(x, v, spec, dt, noise):
    force = _drift_force(x, spec)
    x_new = x + v * dt
    v_new = v + (-0.5 * spec.beta * v + force) * dt + noise
    return x_new, v_new


def _step_langevin_baoab(x, v, spec, dt, xi):
    c1 = math.exp(-0.5 * spec.beta * dt)
    c2 = math.sqrt((1.0 - c1 * c1) / spec.beta)
    v = v + 0.5 * dt * _drift_force(x, spec)
    x = x + 0.5 * dt * v
    v = c1 * v + c2 * xi
    x = x + 0.5 * dt * v
    v = v + 0.5 * dt * _drift_force(x, spec)
    return x, v


def _wrap_positions(x, spec):
    if isinstance(spec.geometry, Torus):
        return x % spec.geometry.period
    return x


def em_step(state: ParticleState, spec: ModelSpec, dt: float,
            rng: np.random.Generator) -> ParticleState:
    """One explicit Euler-Maruyama step of the coupled system.

    The interaction force uses the empirical measure of the current state;
    noise enters positions for overdamped runs and velocities for Langevin.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sq = math.sqrt(dt)
    if spec.is_kinetic:
        if state.velocities is None:
            raise ValueError("langevin step needs velocities")
        noise = sq * rng.standard_normal(state.positions.shape)
        x, v = _step_langevin_em(state.positions, state.velocities, spec, dt, noise)
        new = ParticleState(_wrap_positions(x, spec), v, state.time + dt)
    else:
        noise = sq * rng.standard_normal(state.positions.shape)
        x = _step_overdamped(state.positions, spec, dt, noise)
        new = ParticleState(_wrap_positions(x, spec), None, state.time + dt)
    if not np.all(np.isfinite(new.positions)):
        raise DivergenceError(1, 1)
    return new


# ---------------------------------------------------------------------------
# ensemble runner
# ---------------------------------------------------------------------------

def _batch_rng(master_seed: int, batch_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(batch_index,))))


def _run_batch(plan: ReplicaPlan, spec: ModelSpec, observables, batch_index: int,
               start: int, size: int):
    rng = _batch_rng(plan.master_seed, batch_index)
    shape = (size, plan.N)
    x = plan.initial_law.sample(rng, shape, spec)
    if spec.is_kinetic:
        if isinstance(plan.initial_law, CompactUniform):
            v = rng.uniform(plan.initial_law.lo, plan.initial_law.hi, size=shape)
        else:
            v_var = plan.velocity_var if plan.velocity_var is not None \
                else 1.0 / spec.beta
            v = rng.normal(0.0, math.sqrt(v_var), size=shape)
    else:
        v = None

    n_obs = len(observables)
    steps_to_record = plan.record_steps()
    values = np.full((size, len(steps_to_record), n_obs), np.nan)
    q_sq = np.full((size, len(steps_to_record)), np.nan)
    alive = np.ones(size, dtype=bool)

    def record(slot):
        for j, obs in enumerate(observables):
            values[alive, slot, j] = obs.empirical_mean(
                x[alive], None if v is None else v[alive])
        z_sq = x ** 2 if v is None else x ** 2 + v ** 2
        q_sq[alive, slot] = 1.0 + z_sq[alive].mean(axis=-1)

    record_map = {}
    for slot, step in enumerate(steps_to_record):
        record_map.setdefault(step, []).append(slot)
    for slot in record_map.get(0, []):
        record(slot)

    sq = math.sqrt(plan.dt)
    for step in range(1, plan.n_steps() + 1):
        noise = sq * rng.standard_normal(shape)
        if spec.is_kinetic:
            if plan.integrator == "baoab":
                xn, vn = _step_langevin_baoab(x, v, spec, plan.dt, noise / sq)
            else:
                xn, vn = _step_langevin_em(x, v, spec, plan.dt, noise)
            bad = ~(np.isfinite(xn).all(axis=-1) & np.isfinite(vn).all(axis=-1))
            keep = alive & ~bad
            x[keep], v[keep] = _wrap_positions(xn[keep], spec), vn[keep]
            alive = alive & ~bad
        else:
            xn = _step_overdamped(x, spec, plan.dt, noise)
            bad = ~np.isfinite(xn).all(axis=-1)
            keep = alive & ~bad
            x[keep] = _wrap_positions(xn[keep], spec)
            alive = alive & ~bad
        for slot in record_map.get(step, []):
            record(slot)
    return batch_index, values, q_sq, ~alive


_FORK_CTX: dict = {}


def _worker(batch_args):
    plan, spec, observables = _FORK_CTX["args"]
    return _run_batch(plan, spec, observables, *batch_args)


def simulate_ensemble(plan: ReplicaPlan, spec: ModelSpec, observables,
                      threads: int = 1) -> ObservableSeries:
    """Run R independent replicas and collect observables at the record times.

    The reduction is keyed by batch index, so the output is independent of
    the execution order and of the worker count.  Replicas that blow up are
    excluded and counted; more than 0.1% of them fails the run.
    """
    if plan.integrator == "baoab" and not spec.is_kinetic:
        raise ValueError("baoab integrator is for Langevin dynamics")
    observables = list(observables)
    batches = plan.batches()
    jobs = [(i, start, size) for i, (start, size) in enumerate(batches)]
    results = {}
    if threads <= 1 or len(jobs) == 1:
        for job in jobs:
            idx, vals, q, div = _run_batch(plan, spec, observables, *job)
            results[idx] = (vals, q, div)
    else:
        _FORK_CTX["args"] = (plan, spec, observables)
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
            for idx, vals, q, div in pool.map(_worker, jobs, chunksize=1):
                results[idx] = (vals, q, div)
        _FORK_CTX.clear()

    n_times = len(plan.record_times)
    values = np.empty((plan.R, n_times, len(observables)))
    q_sq = np.empty((plan.R, n_times))
    diverged = np.zeros(plan.R, dtype=bool)
    for i, (start, size) in enumerate(batches):
        vals, q, div = results[i]
        values[start:start + size] = vals
        q_sq[start:start + size] = q
        diverged[start:start + size] = div
    n_div = int(diverged.sum())
    if n_div > 0.001 * plan.R:
        raise DivergenceError(n_div, plan.R)
    return ObservableSeries(times=np.asarray(plan.record_times),
                            names=tuple(o.name for o in observables),
                            values=values, q_squared=q_sq, diverged=diverged)

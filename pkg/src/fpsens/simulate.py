"""Synchronous coupling of particle systems under Euler-Maruyama stepping.

Two ensembles evolve side by side under different parameters but share the
same Brownian increments trajectory by trajectory. The mean p-th power of the
pairwise gap |X - X'| then upper-bounds the p-Wasserstein distance between
the two empirical laws at every step, which is the whole point: the moment
curve is the cheap certificate, the transport solver the exact one.

Randomness is counter-based: trajectory i consumes a Philox stream keyed by
(master_seed, tagged index), so results are bitwise reproducible for any
shard schedule and any thread count, and ensembles of different sizes agree
on their common prefix.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import OrderRangeError, SimulationDivergedError, ValidationError
from .model import LangevinModel, ParameterizedModel, divergence_fd_batch, sqrt_spd_batch

Array = np.ndarray

# trajectories whose norm leaves this ball are declared divergent
BLOWUP_RADIUS = 1e8

# shard size for deterministic parallel reduction
SHARD_SIZE = 4096

_SQRT2 = math.sqrt(2.0)
_MASK64 = (1 << 64) - 1
_INDEX_BITS = 56

# purpose tags for substream derivation (top byte of the second key word)
PURPOSE_TRAJECTORY = 0
PURPOSE_INITIAL = 1
PURPOSE_BOOTSTRAP = 2


@dataclass(frozen=True)
class RngStreamSpec:
    """Family of counter-based substreams derived from one master seed.

    Substream (purpose, index) is keyed by the 128-bit Philox key
    (master_seed, purpose << 56 | index): a pure function of its label,
    independent of execution order. Standard normals come from inverting the
    Gaussian CDF on uniforms placed at bin centers, (raw + 0.5) / 2^64, so no
    value ever hits an endpoint.
    """

    master_seed: int

    def __post_init__(self) -> None:
        if not (0 <= self.master_seed <= _MASK64):
            raise ValidationError(f"master_seed must fit in 64 bits, got {self.master_seed}")

    def _key(self, purpose: int, index: int) -> np.ndarray:
        if not (0 <= index < (1 << _INDEX_BITS)):
            raise ValidationError(f"stream index out of range: {index}")
        if not (0 <= purpose < 256):
            raise ValidationError(f"purpose tag out of range: {purpose}")
        word = (purpose << _INDEX_BITS) | index
        return np.array([self.master_seed, word], dtype=np.uint64)

    def normals(self, purpose: int, index: int, n: int) -> Array:
        raw = Philox(key=self._key(purpose, index)).random_raw(n)
        u = (raw.astype(np.float64) + 0.5) / 2.0 ** 64
        return ndtri(u)

    def generator(self, purpose: int, index: int) -> np.random.Generator:
        return np.random.Generator(Philox(key=self._key(purpose, index)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps and optional snapshot steps."""

    t_end: float
    n_steps: int
    snapshot_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValidationError(f"t_end must be positive, got {self.t_end}")
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        idx = tuple(int(i) for i in self.snapshot_indices)
        if idx != tuple(sorted(set(idx))):
            raise ValidationError(f"snapshot indices must be sorted and unique, got {idx}")
        if idx and (idx[0] < 0 or idx[-1] > self.n_steps):
            raise ValidationError(f"snapshot indices must lie in [0, {self.n_steps}], got {idx}")
        object.__setattr__(self, "snapshot_indices", idx)

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> Array:
        return self.dt * np.arange(self.n_steps + 1)

    @classmethod
    def with_snapshots(cls, t_end: float, n_steps: int, n_snapshots: int) -> "TimeGrid":
        """Evenly spaced snapshots including both endpoints."""
        if n_snapshots < 2:
            raise ValidationError(f"need at least 2 snapshots, got {n_snapshots}")
        idx = np.unique(np.round(np.linspace(0, n_steps, n_snapshots)).astype(int))
        return cls(t_end=t_end, n_steps=n_steps, snapshot_indices=tuple(int(i) for i in idx))


@dataclass(frozen=True)
class MomentCurve:
    """Per-step mean and standard error of |X - X'|^p for one order p."""

    order: float
    times: Array
    values: Array
    standard_errors: Array

    def at_step(self, k: int) -> tuple[float, float]:
        return float(self.values[k]), float(self.standard_errors[k])


@dataclass(frozen=True)
class CoupledEnsemble:
    """Result of a synchronous-coupling run.

    `moments[p]` holds the gap moment curve of order p over the whole grid;
    `snapshots[k]` the pair of particle clouds retained at step k, aligned so
    row i of each side is the same trajectory.
    """

    n_traj: int
    dim: int
    grid: TimeGrid
    moment_orders: tuple[float, ...]
    moments: dict
    snapshots: dict
    master_seed: int

    def moment(self, p: float) -> MomentCurve:
        return self.moments[float(p)]

    def snapshot(self, k: int) -> tuple[Array, Array]:
        return self.snapshots[int(k)]


@dataclass(frozen=True)
class Leg:
    """One side of the coupled pair: batched drift term and noise map at a fixed parameter.

    `drift(x)` maps an (n, d) state block to its full drift (including any
    divergence correction); `noise(x, db)` maps the block and its Brownian
    increments to the stochastic update.
    """

    drift: Callable[[Array], Array]
    noise: Callable[[Array, Array], Array]


def _batched(call: Callable[[Array, Array], Array], a: Array, dim: int,
             vectorized: bool) -> Callable[[Array], Array]:
    if vectorized:
        return lambda x: np.asarray(call(x, a), dtype=float)

    def batch(x: Array) -> Array:
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = call(x[i], a)
        return out

    return batch


def _batched_matrix(call: Callable[[Array, Array], Array], a: Array, dim: int,
                    vectorized: bool) -> Callable[[Array], Array]:
    if vectorized:
        return lambda x: np.asarray(call(x, a), dtype=float)

    def batch(x: Array) -> Array:
        n = x.shape[0]
        out = np.empty((n, dim, dim))
        for i in range(n):
            out[i] = call(x[i], a)
        return out

    return batch


def fokker_planck_leg(model: ParameterizedModel, a) -> Leg:
    """Particle dynamics matching the flow: drift + div(diffusion), noise sqrt(2) sqrt(A) dB."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (model.param_dim,):
        raise ValidationError(f"parameter shape {a.shape} != ({model.param_dim},)")
    drift_b = _batched(model.drift, a, model.dim, model.vectorized)
    diff_b = _batched_matrix(model.diffusion, a, model.dim, model.vectorized)
    if model.diffusion_divergence is not None:
        div_b = _batched(model.diffusion_divergence, a, model.dim, model.vectorized)
    else:
        # central differences on the batched diffusion; analytic is preferred
        def div_b(x: Array) -> Array:
            return divergence_fd_batch(lambda y, _a: diff_b(y), x, a)

    def drift(x: Array) -> Array:
        return drift_b(x) + div_b(x)

    def noise(x: Array, db: Array) -> Array:
        sig = sqrt_spd_batch(diff_b(x))
        if model.dim == 1:
            return _SQRT2 * sig[:, 0, 0, None] * db
        return _SQRT2 * np.einsum("nij,nj->ni", sig, db)

    return Leg(drift=drift, noise=noise)


def langevin_leg(model: LangevinModel, a, beta: float) -> Leg:
    """Overdamped dynamics: drift -grad V(x, a), additive noise sqrt(2/beta) dB."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (model.param_dim,):
        raise ValidationError(f"parameter shape {a.shape} != ({model.param_dim},)")
    if not (math.isfinite(beta) and beta > 0):
        raise ValidationError(f"inverse temperature must be positive, got {beta}")
    amp = math.sqrt(2.0 / beta)
    grad_b = _batched(model.grad_potential, a, model.dim, model.vectorized)

    def drift(x: Array) -> Array:
        return -grad_b(x)

    def noise(x: Array, db: Array) -> Array:
        return amp * db

    return Leg(drift=drift, noise=noise)


def step_em(state_pair: tuple[Array, Array], legs: tuple[Leg, Leg], dt: float,
            shared_increment: Array) -> tuple[Array, Array]:
    """One synchronous Euler-Maruyama step: both legs consume the same increment.

    Accepts single states (d,) or blocks (n, d); non-finite arithmetic
    propagates, divergence policing is the driver's job.
    """
    x, xp = state_pair
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    db = np.asarray(shared_increment, dtype=float)
    single = x.ndim == 1
    if single:
        x, xp, db = x[None, :], xp[None, :], db[None, :]
    leg_a, leg_b = legs
    out = (x + dt * leg_a.drift(x) + leg_a.noise(x, db),
           xp + dt * leg_b.drift(xp) + leg_b.noise(xp, db))
    if single:
        return out[0][0], out[1][0]
    return out


def _coerce_pairs(initial_pairs, dim: int) -> tuple[Array, Array]:
    if isinstance(initial_pairs, tuple) and len(initial_pairs) == 2:
        x0 = np.asarray(initial_pairs[0], dtype=float)
        x0p = np.asarray(initial_pairs[1], dtype=float)
    else:
        pairs = list(initial_pairs)
        if not pairs:
            raise ValidationError("initial_pairs must be nonempty")
        x0 = np.asarray([p[0] for p in pairs], dtype=float)
        x0p = np.asarray([p[1] for p in pairs], dtype=float)
    x0 = np.atleast_2d(x0)
    x0p = np.atleast_2d(x0p)
    if x0.shape != x0p.shape:
        raise ValidationError(f"initial marginals disagree in shape: {x0.shape} vs {x0p.shape}")
    if x0.ndim != 2 or x0.shape[1] != dim:
        raise ValidationError(f"initial states must be (n, {dim}), got {x0.shape}")
    if x0.shape[0] < 1:
        raise ValidationError("initial_pairs must be nonempty")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x0p))):
        raise ValidationError("initial states must be finite")
    return x0, x0p


def _check_orders(moment_orders) -> tuple[float, ...]:
    orders = tuple(float(p) for p in moment_orders)
    if not orders:
        raise OrderRangeError("need at least one moment order")
    for p in orders:
        if not (math.isfinite(p) and p >= 2):
            raise OrderRangeError(f"moment orders must be >= 2, got {p}")
    if len(set(orders)) != len(orders):
        raise OrderRangeError(f"duplicate moment orders in {orders}")
    return orders


def _run_shard(legs: tuple[Leg, Leg], x0: Array, x0p: Array, lo: int, grid: TimeGrid,
               orders: tuple[float, ...], rng: RngStreamSpec,
               snapshot_set: frozenset) -> tuple[Array, Array, dict]:
    """Advance one contiguous block of trajectories over the full grid.

    Everything in here is a pure function of (inputs, master seed), so shards
    can run on any thread in any order.
    """
    n, d = x0.shape
    n_steps = grid.n_steps
    dt = grid.dt
    sqdt = math.sqrt(dt)
    leg_a, leg_b = legs

    z = np.empty((n, n_steps * d))
    for i in range(n):
        z[i] = rng.normals(PURPOSE_TRAJECTORY, lo + i, n_steps * d)
    z = z.reshape(n, n_steps, d)
    z *= sqdt

    x = x0.copy()
    xp = x0p.copy()
    n_orders = len(orders)
    sums = np.zeros((n_orders, n_steps + 1))
    sumsqs = np.zeros((n_orders, n_steps + 1))
    snaps = {}

    def record(k: int) -> None:
        gap = np.linalg.norm(x - xp, axis=1)
        for j, p in enumerate(orders):
            y = gap ** p
            sums[j, k] = np.sum(y)
            sumsqs[j, k] = np.sum(y * y)
        if k in snapshot_set:
            snaps[k] = (x.copy(), xp.copy())

    record(0)
    for k in range(n_steps):
        db = z[:, k, :]
        x = x + dt * leg_a.drift(x) + leg_a.noise(x, db)
        xp = xp + dt * leg_b.drift(xp) + leg_b.noise(xp, db)
        bad = ~(np.isfinite(x).all(axis=1) & np.isfinite(xp).all(axis=1))
        bad |= (np.linalg.norm(x, axis=1) > BLOWUP_RADIUS)
        bad |= (np.linalg.norm(xp, axis=1) > BLOWUP_RADIUS)
        if np.any(bad):
            raise SimulationDivergedError(lo + int(np.argmax(bad)), k + 1)
        record(k + 1)
    return sums, sumsqs, snaps


def _reduce_shards(results: Sequence[tuple], n: int, grid: TimeGrid,
                   orders: tuple[float, ...]) -> tuple[dict, dict]:
    n_orders = len(orders)
    total = np.zeros((n_orders, grid.n_steps + 1))
    total_sq = np.zeros((n_orders, grid.n_steps + 1))
    snap_parts: dict = {}
    # fixed reduction order: shard index, never completion order
    for sums, sumsqs, snaps in results:
        total += sums
        total_sq += sumsqs
        for k, pair in snaps.items():
            snap_parts.setdefault(k, []).append(pair)

    times = grid.times
    moments = {}
    for j, p in enumerate(orders):
        mean = total[j] / n
        if n > 1:
            var = (total_sq[j] - n * mean * mean) / (n - 1)
            se = np.sqrt(np.clip(var, 0.0, None) / n)
        else:
            se = np.zeros_like(mean)
        moments[p] = MomentCurve(order=p, times=times, values=mean, standard_errors=se)

    snapshots = {}
    for k, parts in snap_parts.items():
        snapshots[k] = (np.concatenate([a for a, _ in parts], axis=0),
                        np.concatenate([b for _, b in parts], axis=0))
    return moments, snapshots


def _run_coupled(legs: tuple[Leg, Leg], dim: int, initial_pairs, grid: TimeGrid,
                 moment_orders, rng: RngStreamSpec, threads: int,
                 shard_size: int) -> CoupledEnsemble:
    x0, x0p = _coerce_pairs(initial_pairs, dim)
    orders = _check_orders(moment_orders)
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    n = x0.shape[0]
    snapshot_set = frozenset(grid.snapshot_indices)

    bounds = [(lo, min(lo + shard_size, n)) for lo in range(0, n, shard_size)]

    def job(b):
        lo, hi = b
        return _run_shard(legs, x0[lo:hi], x0p[lo:hi], lo, grid, orders, rng, snapshot_set)

    if threads == 1 or len(bounds) == 1:
        results = [job(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, bounds))

    moments, snapshots = _reduce_shards(results, n, grid, orders)
    return CoupledEnsemble(n_traj=n, dim=dim, grid=grid, moment_orders=orders,
                           moments=moments, snapshots=snapshots,
                           master_seed=rng.master_seed)


def simulate_coupled(model: ParameterizedModel, a, a_prime, initial_pairs, grid: TimeGrid,
                     moment_orders, rng: RngStreamSpec, *, threads: int = 1,
                     shard_size: int = SHARD_SIZE) -> CoupledEnsemble:
    """Run the two-parameter synchronous coupling for a drift/diffusion model.

    Both legs see identical Brownian increments; only the parameter differs.
    `initial_pairs` is either a pair of (n, dim) arrays or an iterable of
    (x0, x0') pairs, already coupled by the caller.
    """
    legs = (fokker_planck_leg(model, a), fokker_planck_leg(model, a_prime))
    return _run_coupled(legs, model.dim, initial_pairs, grid, moment_orders, rng,
                        threads, shard_size)


def simulate_langevin_coupled(model: LangevinModel, a, a_prime, beta: float,
                              beta_prime: float, initial_pairs, grid: TimeGrid,
                              moment_orders, rng: RngStreamSpec, *, threads: int = 1,
                              shard_size: int = SHARD_SIZE) -> CoupledEnsemble:
    """Synchronous coupling for the overdamped sampler with parameter and temperature mismatch."""
    legs = (langevin_leg(model, a, beta), langevin_leg(model, a_prime, beta_prime))
    return _run_coupled(legs, model.dim, initial_pairs, grid, moment_orders, rng,
                        threads, shard_size)

"""End-to-end experiment orchestration: configure, couple, simulate, measure, verify.

An experiment is one coupled run of a gallery model under two parameter
settings, measured three ways at every snapshot: the Monte Carlo gap moment,
the exact transport distance on a fixed-stride subcloud, and the applicable
closed-form envelope. The verdict policy is one-sided: a snapshot passes when
the empirical distance minus z standard errors stays below the envelope.

Configs are TOML with a strict schema (unknown keys are hard errors), and
every run is a pure function of the config plus master seed: identical inputs
give byte-identical curves.csv regardless of thread count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import bounds as bounds_mod
from .errors import (CapacityError, ConfigError, ExperimentStageError, FpsensError,
                     ValidationError)
from .gallery import make_model, normalize_model_id
from .model import (LangevinModel, LangevinProbeReport, ParameterizedModel,
                    ProbeReport, ProbeSpec, probe_constants, probe_langevin)
from .oracle import coupled_gap_oracle
from .simulate import (PURPOSE_BOOTSTRAP, PURPOSE_INITIAL, RngStreamSpec, TimeGrid,
                       simulate_coupled, simulate_langevin_coupled)
from .transport import (PointCloud, dual_feasibility_check, wasserstein)

Array = np.ndarray

ENVELOPE_CHOICES = ("theorem1", "example_p2", "langevin", "langevin_p2_corrected")
CSV_COLUMNS = ("p", "t", "w_hat_pp", "w_hat_se", "moment_pp", "moment_se",
               "envelope", "oracle", "verdict")

# absolute slack for 0 <= 0 style comparisons in verdicts and sandwiches
VERDICT_ATOL = 1e-12
SANDWICH_ATOL = 1e-9


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitialSpec:
    """One marginal's initial condition: point mass, isotropic Gaussian, or CSV cloud."""

    kind: str
    location: tuple = ()
    mean: tuple = ()
    std: float = 0.0
    path: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    model_id: str
    model_options: tuple          # sorted (key, value) pairs for the gallery constructor
    dim: int
    a: float
    a_prime: float
    beta: Optional[float]
    beta_prime: Optional[float]
    orders: tuple
    n_traj: int
    master_seed: int
    envelope: str
    grid: TimeGrid
    initial_first: InitialSpec
    initial_second: InitialSpec
    subcloud: int
    transport_cap: int
    bootstrap: int
    certificates: bool
    z_threshold: float
    probe_enabled: bool
    probe_pairs: int
    probe_box: float
    constants_override: tuple     # sorted (key, value) pairs, possibly empty
    output_dir: str

    def model_kwargs(self) -> dict:
        return dict(self.model_options)

    def overrides(self) -> dict:
        return dict(self.constants_override)


_MODEL_KEYS = {
    "heat": {"dim", "param_min", "param_max"},
    "ou": {"dim", "k", "sigma", "param_bound"},
    "langevin_quadratic": {"dim", "k"},
    "langevin_logcosh": {"dim", "k"},
}

_RUN_KEYS = {"a", "a_prime", "orders", "n_traj", "master_seed", "envelope",
             "beta", "beta_prime"}
_GRID_KEYS = {"t_end", "n_steps", "snapshots", "snapshot_indices"}
_INITIAL_KEYS = {"kind", "location", "mean", "std", "path"}
_TRANSPORT_KEYS = {"subcloud", "cap", "bootstrap", "certificates"}
_VERDICT_KEYS = {"z"}
_PROBE_KEYS = {"enabled", "pairs", "box"}
_OVERRIDE_KEYS = {"L1", "L2", "m", "k", "L3"}
_OUTPUT_KEYS = {"dir"}
_TOP_KEYS = {"model", "run", "grid", "initial", "transport", "verdict", "probe",
             "envelope_constants", "output"}


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}.{key}'"
                              if where else f"unknown key '{key}'")


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required key '{where}.{key}'")
    return table[key]


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{where}' must be a number, got {value!r}")
    return float(value)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{where}' must be an integer, got {value!r}")
    return value


def _as_vector(value, dim: int, where: str) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),) * dim
    if isinstance(value, list) and value and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        if len(value) != dim:
            raise ConfigError(f"'{where}' has length {len(value)}, expected {dim}")
        return tuple(float(v) for v in value)
    raise ConfigError(f"'{where}' must be a number or list of {dim} numbers, got {value!r}")


def _parse_initial(table: dict, dim: int, where: str, base_dir: str) -> InitialSpec:
    _reject_unknown(table, _INITIAL_KEYS, where)
    kind = _need(table, "kind", where)
    if kind == "point":
        loc = _as_vector(_need(table, "location", where), dim, f"{where}.location")
        extra = set(table) - {"kind", "location"}
        if extra:
            raise ConfigError(f"keys {sorted(extra)} not valid for '{where}' with kind='point'")
        return InitialSpec(kind="point", location=loc)
    if kind == "gaussian":
        mean = _as_vector(_need(table, "mean", where), dim, f"{where}.mean")
        std = _as_float(_need(table, "std", where), f"{where}.std")
        if std < 0:
            raise ConfigError(f"'{where}.std' must be >= 0, got {std}")
        extra = set(table) - {"kind", "mean", "std"}
        if extra:
            raise ConfigError(f"keys {sorted(extra)} not valid for '{where}' with kind='gaussian'")
        return InitialSpec(kind="gaussian", mean=mean, std=std)
    if kind == "file":
        path = _need(table, "path", where)
        if not isinstance(path, str):
            raise ConfigError(f"'{where}.path' must be a string")
        extra = set(table) - {"kind", "path"}
        if extra:
            raise ConfigError(f"keys {sorted(extra)} not valid for '{where}' with kind='file'")
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return InitialSpec(kind="file", path=path)
    raise ConfigError(f"'{where}.kind' must be point, gaussian, or file, got {kind!r}")


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    """Validate a parsed config mapping and freeze it into an ExperimentConfig.

    Unknown keys anywhere are hard errors; the message carries the dotted path.
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    _reject_unknown(data, _TOP_KEYS, "")

    model_tbl = _need(data, "model", "config")
    if not isinstance(model_tbl, dict):
        raise ConfigError("'model' must be a table")
    model_id = normalize_model_id(str(_need(model_tbl, "id", "model")))
    allowed = _MODEL_KEYS[model_id] | {"id"}
    _reject_unknown(model_tbl, allowed, "model")
    dim = _as_int(model_tbl.get("dim", 1), "model.dim")
    if dim < 1:
        raise ConfigError(f"'model.dim' must be >= 1, got {dim}")

    run_tbl = _need(data, "run", "config")
    _reject_unknown(run_tbl, _RUN_KEYS, "run")
    a = _as_float(_need(run_tbl, "a", "run"), "run.a")
    a_prime = _as_float(_need(run_tbl, "a_prime", "run"), "run.a_prime")
    orders_raw = _need(run_tbl, "orders", "run")
    if not isinstance(orders_raw, list) or not orders_raw:
        raise ConfigError("'run.orders' must be a nonempty list")
    orders = tuple(_as_float(p, "run.orders") for p in orders_raw)
    if len(set(orders)) != len(orders):
        raise ConfigError(f"'run.orders' has duplicates: {orders}")
    for p in orders:
        if p < 2:
            raise ConfigError(f"'run.orders' entries must be >= 2, got {p}")
    n_traj = _as_int(_need(run_tbl, "n_traj", "run"), "run.n_traj")
    if n_traj < 1:
        raise ConfigError(f"'run.n_traj' must be >= 1, got {n_traj}")
    master_seed = _as_int(_need(run_tbl, "master_seed", "run"), "run.master_seed")
    if master_seed < 0:
        raise ConfigError(f"'run.master_seed' must be >= 0, got {master_seed}")
    envelope = str(_need(run_tbl, "envelope", "run"))
    if envelope not in ENVELOPE_CHOICES:
        raise ConfigError(f"'run.envelope' must be one of {ENVELOPE_CHOICES}, got {envelope!r}")

    is_langevin = model_id.startswith("langevin")
    beta = beta_prime = None
    if is_langevin:
        beta = _as_float(_need(run_tbl, "beta", "run"), "run.beta")
        beta_prime = _as_float(_need(run_tbl, "beta_prime", "run"), "run.beta_prime")
        if beta <= 0 or beta_prime <= 0:
            raise ConfigError("inverse temperatures must be positive")
    elif "beta" in run_tbl or "beta_prime" in run_tbl:
        raise ConfigError(f"'run.beta' is only valid for Langevin models, model is {model_id}")

    if envelope in ("langevin", "langevin_p2_corrected") and not is_langevin:
        raise ConfigError(f"envelope '{envelope}' requires a Langevin model, got {model_id}")
    if envelope in ("theorem1", "example_p2") and is_langevin:
        raise ConfigError(f"envelope '{envelope}' requires a drift/diffusion model, got {model_id}")
    if envelope in ("example_p2", "langevin_p2_corrected") and orders != (2.0,):
        raise ConfigError(f"envelope '{envelope}' is quadratic only; set orders = [2]")

    grid_tbl = _need(data, "grid", "config")
    _reject_unknown(grid_tbl, _GRID_KEYS, "grid")
    t_end = _as_float(_need(grid_tbl, "t_end", "grid"), "grid.t_end")
    n_steps = _as_int(_need(grid_tbl, "n_steps", "grid"), "grid.n_steps")
    if "snapshots" in grid_tbl and "snapshot_indices" in grid_tbl:
        raise ConfigError("give either 'grid.snapshots' or 'grid.snapshot_indices', not both")
    if "snapshot_indices" in grid_tbl:
        raw = grid_tbl["snapshot_indices"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("'grid.snapshot_indices' must be a nonempty list")
        idx = tuple(_as_int(i, "grid.snapshot_indices") for i in raw)
        grid = TimeGrid(t_end=t_end, n_steps=n_steps, snapshot_indices=idx)
    else:
        n_snaps = _as_int(grid_tbl.get("snapshots", 11), "grid.snapshots")
        grid = TimeGrid.with_snapshots(t_end=t_end, n_steps=n_steps, n_snapshots=n_snaps)

    init_tbl = _need(data, "initial", "config")
    if not isinstance(init_tbl, dict):
        raise ConfigError("'initial' must be a table")
    has_sub = any(isinstance(v, dict) for v in init_tbl.values())
    if has_sub:
        _reject_unknown(init_tbl, {"first", "second"}, "initial")
        first = _parse_initial(_need(init_tbl, "first", "initial"), dim,
                               "initial.first", base_dir)
        second = _parse_initial(_need(init_tbl, "second", "initial"), dim,
                                "initial.second", base_dir)
    else:
        shared = _parse_initial(init_tbl, dim, "initial", base_dir)
        first = second = shared

    tr_tbl = data.get("transport", {})
    _reject_unknown(tr_tbl, _TRANSPORT_KEYS, "transport")
    subcloud = _as_int(tr_tbl.get("subcloud", 2048), "transport.subcloud")
    cap = _as_int(tr_tbl.get("cap", 4096), "transport.cap")
    n_boot = _as_int(tr_tbl.get("bootstrap", 20), "transport.bootstrap")
    certificates = tr_tbl.get("certificates", True)
    if not isinstance(certificates, bool):
        raise ConfigError("'transport.certificates' must be a boolean")
    if subcloud < 1 or cap < 1 or n_boot < 2:
        raise ConfigError("transport sizes must be positive (bootstrap >= 2)")

    v_tbl = data.get("verdict", {})
    _reject_unknown(v_tbl, _VERDICT_KEYS, "verdict")
    z = _as_float(v_tbl.get("z", 3.0), "verdict.z")
    if z < 0:
        raise ConfigError(f"'verdict.z' must be >= 0, got {z}")

    probe_tbl = data.get("probe", {})
    _reject_unknown(probe_tbl, _PROBE_KEYS, "probe")
    probe_enabled = probe_tbl.get("enabled", True)
    if not isinstance(probe_enabled, bool):
        raise ConfigError("'probe.enabled' must be a boolean")
    probe_pairs = _as_int(probe_tbl.get("pairs", 128), "probe.pairs")
    probe_box = _as_float(probe_tbl.get("box", 4.0), "probe.box")

    ov_tbl = data.get("envelope_constants", {})
    _reject_unknown(ov_tbl, _OVERRIDE_KEYS, "envelope_constants")
    override = tuple(sorted((k, _as_float(v, f"envelope_constants.{k}"))
                            for k, v in ov_tbl.items()))

    out_tbl = data.get("output", {})
    _reject_unknown(out_tbl, _OUTPUT_KEYS, "output")
    out_dir = out_tbl.get("dir", os.path.join("results", model_id))
    if not isinstance(out_dir, str):
        raise ConfigError("'output.dir' must be a string")
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(base_dir, out_dir)

    model_opts = {k: v for k, v in model_tbl.items() if k != "id"}
    model_opts["dim"] = dim
    # heat intensities must cover both run parameters or the floor is a lie
    if model_id == "heat":
        lo = model_opts.pop("param_min", min(a, a_prime))
        hi = model_opts.pop("param_max", max(a, a_prime))
        lo, hi = _as_float(lo, "model.param_min"), _as_float(hi, "model.param_max")
        if not (0 < lo <= min(a, a_prime) and max(a, a_prime) <= hi):
            raise ConfigError(
                f"heat intensity range [{lo}, {hi}] must be positive and cover a={a}, a'={a_prime}")
        model_opts["param_range"] = (lo, hi)

    return ExperimentConfig(
        model_id=model_id, model_options=tuple(sorted(model_opts.items())), dim=dim,
        a=a, a_prime=a_prime, beta=beta, beta_prime=beta_prime, orders=orders,
        n_traj=n_traj, master_seed=master_seed, envelope=envelope, grid=grid,
        initial_first=first, initial_second=second, subcloud=subcloud,
        transport_cap=cap, bootstrap=n_boot, certificates=certificates,
        z_threshold=z, probe_enabled=probe_enabled, probe_pairs=probe_pairs,
        probe_box=probe_box, constants_override=override, output_dir=out_dir)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment config; paths resolve relative to the file."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# initial clouds


def sample_initial(spec: InitialSpec, n: int, seed: int, stream_index: int = 0) -> PointCloud:
    """Materialize one marginal's initial cloud deterministically.

    Point masses are tiled, Gaussians drawn by inverse CDF from the
    (seed, stream_index) substream, files loaded and validated; the file's
    row count must equal n so the coupling stays square.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if spec.kind == "point":
        return PointCloud(np.tile(np.asarray(spec.location, dtype=float), (n, 1)))
    if spec.kind == "gaussian":
        d = len(spec.mean)
        z = RngStreamSpec(seed).normals(PURPOSE_INITIAL, stream_index, n * d)
        pts = spec.std * z.reshape(n, d) + np.asarray(spec.mean, dtype=float)
        return PointCloud(pts)
    if spec.kind == "file":
        cloud = PointCloud.from_csv(spec.path)
        if cloud.n != n:
            raise ConfigError(f"cloud file {spec.path} has {cloud.n} rows, expected n_traj={n}")
        return cloud
    raise ConfigError(f"unknown initial kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# report structures


@dataclass
class CurveRow:
    p: float
    step: int
    t: float
    w_hat_pp: float
    w_hat_se: float
    moment_pp: float
    moment_se: float
    envelope: float
    oracle: Optional[float]
    coupling_pp: float
    verdict: str = ""


@dataclass(frozen=True)
class TolerancePolicy:
    """One-sided verdict policy: pass iff w_hat_pp - z * se <= envelope + atol."""

    z: float = 3.0
    atol: float = VERDICT_ATOL


@dataclass
class VerdictEntry:
    p: float
    t: float
    passed: bool
    margin: float   # envelope - (w_hat_pp - z se); negative means violation


@dataclass
class VerdictTable:
    entries: list
    passed: bool
    failures: list  # (p, t) witnesses


def check_bound(rows, policy: TolerancePolicy = TolerancePolicy()) -> VerdictTable:
    """Apply the one-sided policy to every (p, t) row and name the violators."""
    entries = []
    failures = []
    for row in rows:
        lower = row.w_hat_pp - policy.z * row.w_hat_se
        margin = row.envelope + policy.atol - lower
        ok = margin >= 0.0
        entries.append(VerdictEntry(p=row.p, t=row.t, passed=ok, margin=float(margin)))
        if not ok:
            failures.append((row.p, row.t))
    return VerdictTable(entries=entries, passed=not failures, failures=failures)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    w0p: dict
    constants: dict
    side_envelopes: list
    vacuous: dict
    probe: Optional[object]
    certificates: list
    warnings: list
    verdicts: VerdictTable
    passed: bool
    output_dir: str

    def rows_for(self, p: float):
        return [r for r in self.rows if r.p == float(p)]


# ---------------------------------------------------------------------------
# experiment driver


def _stride_indices(n: int, size: int) -> Array:
    size = min(n, size)
    stride = n // size
    return np.arange(size) * stride


def _gap_norms(xa: Array, xb: Array) -> Array:
    return np.linalg.norm(xa - xb, axis=1)


def _build_model(config: ExperimentConfig):
    return make_model(config.model_id, **config.model_kwargs())


def _envelope_factory(config: ExperimentConfig, model, w0p: dict, captured: list):
    """Resolve per-order envelope callables plus any side-by-side companions.

    Returns (envelopes, constants_echo, side, vacuous) where envelopes maps
    p to a BoundEnvelope. For quadratic Langevin runs both the as-printed and
    the corrected envelope are always computed so reports can show them side
    by side, whichever one was selected for the verdict.
    """
    ov = config.overrides()
    env = {}
    echo = {}
    side = []
    vacuous = {}

    if config.envelope in ("theorem1", "example_p2"):
        c = model.constants
        L1 = ov.get("L1", c.L1)
        L2 = ov.get("L2", c.L2)
        m = ov.get("m", c.m)
        delta_a = abs(config.a - config.a_prime)
        for p in config.orders:
            if config.envelope == "theorem1":
                tc = bounds_mod.theorem1_constants(L1, L2, m, p)
                env[p] = bounds_mod.theorem1_bound(w0p[p], tc, delta_a)
                echo[p] = {"L1": tc.L1, "L2": tc.L2, "m": tc.m, "C1": tc.C1, "C2": tc.C2}
            else:
                env[p] = bounds_mod.example_p2_bound(w0p[p], L1, m, delta_a)
                echo[p] = {"L1": L1, "m": m}
        return env, echo, side, vacuous

    k = ov.get("k", model.k)
    L3 = ov.get("L3", model.L3)
    delta_a = abs(config.a - config.a_prime)
    delta_sb = abs(math.sqrt(2.0 / config.beta) - math.sqrt(2.0 / config.beta_prime))
    for p in config.orders:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            lc = bounds_mod.langevin_constants(k, L3, config.dim, p)
        for w in caught:
            captured.append(f"bounds: {w.message}")
        printed = bounds_mod.langevin_bound(w0p[p], lc, delta_a, delta_sb)
        echo[p] = {"k": lc.k, "L3": lc.L3, "lam": lc.lam, "K1": lc.K1, "K2": lc.K2}
        if p == 2.0:
            corrected = bounds_mod.langevin_p2_corrected_bound(
                w0p[p], k, config.dim, delta_sb, delta_a=delta_a, L3=L3)
            chosen = printed if config.envelope == "langevin" else corrected
            other = corrected if config.envelope == "langevin" else printed
            env[p] = chosen
            vacuous[p] = chosen.vacuous
            side.append({"p": p, "tag": other.tag, "vacuous": other.vacuous,
                         "values": [other(float(t)) for t in
                                    config.grid.times[list(config.grid.snapshot_indices)]]})
        else:
            if config.envelope != "langevin":
                raise ConfigError("corrected envelope exists only at p = 2")
            env[p] = printed
            vacuous[p] = printed.vacuous
    return env, echo, side, vacuous


def _oracle_delta0(config: ExperimentConfig) -> Optional[Array]:
    first, second = config.initial_first, config.initial_second
    if first == second:
        return np.zeros(config.dim)
    if first.kind == "point" and second.kind == "point":
        return (np.asarray(first.location, dtype=float)
                - np.asarray(second.location, dtype=float))
    return None


def _oracle_value(config: ExperimentConfig, model, p: float, t: float,
                  delta0: Optional[Array]) -> Optional[float]:
    if delta0 is None:
        return None
    kwargs = dict(a=config.a, a_prime=config.a_prime, p=p, t=t,
                  delta0=delta0, dim=config.dim)
    if isinstance(model, LangevinModel):
        kwargs.update(k=model.k, beta=config.beta, beta_prime=config.beta_prime)
    elif config.model_id == "ou":
        kwargs.update(k=dict(config.model_options).get("k", 1.0))
    try:
        return coupled_gap_oracle(config.model_id, **kwargs)
    except FpsensError:
        return None


def run_experiment(config: ExperimentConfig, *, threads: int = 1,
                   make_plots: bool = False,
                   output_dir: Optional[str] = None) -> ExperimentReport:
    """Execute the full pipeline and write report.json + curves.csv (+ plots).

    Any stage failure is re-raised as ExperimentStageError naming the stage,
    after flushing whatever partial report exists with a `failed` marker.
    """
    out_dir = output_dir if output_dir is not None else config.output_dir
    partial = {"failed": None}
    state = {}

    def fail(stage: str, exc: Exception):
        partial["failed"] = {"stage": stage, "error": str(exc)}
        try:
            os.makedirs(out_dir, exist_ok=True)
            _write_failed_marker(out_dir, config, partial["failed"])
        except OSError:
            pass
        raise ExperimentStageError(stage, exc) from exc

    captured_warnings: list = []

    # -- configure
    try:
        model = _build_model(config)
        rng = RngStreamSpec(config.master_seed)
    except Exception as exc:
        fail("configure", exc)

    # -- sample-initial
    try:
        same_spec = config.initial_first == config.initial_second
        cloud_a = sample_initial(config.initial_first, config.n_traj,
                                 config.master_seed, stream_index=0)
        if same_spec:
            cloud_b = cloud_a
        else:
            cloud_b = sample_initial(config.initial_second, config.n_traj,
                                     config.master_seed, stream_index=1)
        if cloud_a.dim != config.dim or cloud_b.dim != config.dim:
            raise ConfigError(
                f"initial clouds have dim {cloud_a.dim}/{cloud_b.dim}, model needs {config.dim}")
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("sample-initial", exc)

    # -- initial-coupling
    try:
        if same_spec:
            x0 = cloud_a.points
            x0p = cloud_a.points.copy()
        else:
            if config.dim > 1 and config.n_traj > config.transport_cap:
                raise CapacityError(
                    f"optimal initial coupling needs an assignment solve of size "
                    f"{config.n_traj} > cap {config.transport_cap} in dim {config.dim}")
            p_ref = config.orders[0]
            res = wasserstein(cloud_a, cloud_b, p_ref, cap=config.transport_cap)
            x0 = cloud_a.points.copy()
            x0p = cloud_b.points[res.plan].copy()
        gaps0 = _gap_norms(x0, x0p)
        w0p = {p: float(np.mean(gaps0 ** p)) for p in config.orders}
        state["w0p"] = w0p
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("initial-coupling", exc)

    # -- probe
    probe_report = None
    try:
        if config.probe_enabled:
            pspec = ProbeSpec(n_pairs=config.probe_pairs, box_radius=config.probe_box,
                              seed=config.master_seed,
                              param_low=min(config.a, config.a_prime),
                              param_high=max(config.a, config.a_prime))
            if isinstance(model, LangevinModel):
                probe_report = probe_langevin(model, pspec)
            else:
                probe_report = probe_constants(model, pspec)
            if not probe_report.passed:
                captured_warnings.append(
                    f"probe: declared constants violated on {probe_report.failures}")
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("probe", exc)

    # -- simulate
    try:
        if isinstance(model, LangevinModel):
            ensemble = simulate_langevin_coupled(
                model, config.a, config.a_prime, config.beta, config.beta_prime,
                (x0, x0p), config.grid, config.orders, rng, threads=threads)
        else:
            ensemble = simulate_coupled(
                model, config.a, config.a_prime, (x0, x0p), config.grid,
                config.orders, rng, threads=threads)
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("simulate", exc)

    # -- transport
    try:
        snap_steps = list(config.grid.snapshot_indices)
        sub_idx = _stride_indices(config.n_traj,
                                  min(config.subcloud,
                                      config.transport_cap if config.dim > 1 else config.subcloud))
        n_sub = sub_idx.size
        jobs = []
        for si, step in enumerate(snap_steps):
            xa, xb = ensemble.snapshot(step)
            for pi, p in enumerate(config.orders):
                jobs.append((si, step, pi, p, xa, xb))

        def solve(job):
            si, step, pi, p, xa, xb = job
            ca = PointCloud(xa[sub_idx])
            cb = PointCloud(xb[sub_idx])
            res = wasserstein(ca, cb, p, cap=config.transport_cap)
            cert = None
            if config.certificates:
                cert = dual_feasibility_check(res, ca, cb)
            boots = np.empty(config.bootstrap)
            for b in range(config.bootstrap):
                bidx = (si * len(config.orders) + pi) * config.bootstrap + b
                gen = rng.generator(PURPOSE_BOOTSTRAP, bidx)
                take = gen.integers(0, n_sub, size=n_sub)
                rb = wasserstein(PointCloud(ca.points[take]), PointCloud(cb.points[take]),
                                 p, cap=config.transport_cap)
                boots[b] = rb.cost
            se = float(np.std(boots, ddof=1))
            coupling_pp = float(np.mean(_gap_norms(ca.points, cb.points) ** p))
            if res.cost > coupling_pp + SANDWICH_ATOL:
                raise ValidationError(
                    f"transport cost {res.cost} exceeds its own coupling cost "
                    f"{coupling_pp} at (p={p}, step={step})")
            return (si, step, pi, p, res.cost, se, coupling_pp, cert)

        if threads == 1 or len(jobs) == 1:
            solved = [solve(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                solved = list(ex.map(solve, jobs))
        state["transport"] = {(si, pi): rec for rec in solved
                              for si, pi in [(rec[0], rec[2])]}
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("transport", exc)

    # -- envelope
    try:
        envelopes, const_echo, side, vacuous = _envelope_factory(
            config, model, state["w0p"], captured_warnings)
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("envelope", exc)

    # -- assemble rows + verdicts
    try:
        delta0 = _oracle_delta0(config)
        rows = []
        certificates = []
        times = config.grid.times
        for pi, p in enumerate(config.orders):
            curve = ensemble.moment(p)
            for si, step in enumerate(snap_steps):
                _, _, _, _, cost, se, coupling_pp, cert = state["transport"][(si, pi)]
                t = float(times[step])
                mom, mom_se = curve.at_step(step)
                rows.append(CurveRow(
                    p=p, step=step, t=t, w_hat_pp=cost, w_hat_se=se,
                    moment_pp=mom, moment_se=mom_se,
                    envelope=float(envelopes[p](t)),
                    oracle=_oracle_value(config, model, p, t, delta0),
                    coupling_pp=coupling_pp))
                if cert is not None:
                    certificates.append({
                        "p": p, "step": step, "passed": cert.passed,
                        "max_violation": cert.max_violation,
                        "max_slackness": cert.max_slackness,
                        "duality_gap": cert.duality_gap})
                    if not cert.passed:
                        captured_warnings.append(
                            f"transport: certificate failed at (p={p}, step={step})")
        policy = TolerancePolicy(z=config.z_threshold)
        table = check_bound(rows, policy)
        for row, entry in zip(rows, table.entries):
            row.verdict = "pass" if entry.passed else "fail"
        report = ExperimentReport(
            config=config, rows=rows, w0p=state["w0p"], constants=const_echo,
            side_envelopes=side, vacuous=vacuous, probe=probe_report,
            certificates=certificates, warnings=captured_warnings,
            verdicts=table, passed=table.passed, output_dir=out_dir)
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("verdict", exc)

    # -- write-outputs
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_curves(os.path.join(out_dir, "curves.csv"), report.rows)
        write_report_json(os.path.join(out_dir, "report.json"), report)
        if make_plots:
            render_plots(report.rows, os.path.join(out_dir, "plots"))
    except ExperimentStageError:
        raise
    except Exception as exc:
        fail("write-outputs", exc)

    return report


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_curves(path: str, rows) -> None:
    """Emit the fixed-column curves table; float text is shortest-exact."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.p), _fmt(r.t), _fmt(r.w_hat_pp), _fmt(r.w_hat_se),
                        _fmt(r.moment_pp), _fmt(r.moment_se), _fmt(r.envelope),
                        _fmt(r.oracle), r.verdict])


def read_curves(path: str):
    """Load a curves.csv back into CurveRow records (coupling_pp not stored there)."""
    rows = []
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValidationError(f"unexpected curves header {header}")
        for rec in reader:
            rows.append(CurveRow(
                p=float(rec[0]), step=-1, t=float(rec[1]), w_hat_pp=float(rec[2]),
                w_hat_se=float(rec[3]), moment_pp=float(rec[4]), moment_se=float(rec[5]),
                envelope=float(rec[6]), oracle=float(rec[7]) if rec[7] else None,
                coupling_pp=math.nan, verdict=rec[8]))
    return rows


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "model": {"id": config.model_id, **config.model_kwargs()},
        "a": config.a, "a_prime": config.a_prime,
        "beta": config.beta, "beta_prime": config.beta_prime,
        "orders": list(config.orders), "n_traj": config.n_traj,
        "master_seed": config.master_seed, "envelope": config.envelope,
        "grid": {"t_end": config.grid.t_end, "n_steps": config.grid.n_steps,
                 "snapshot_indices": list(config.grid.snapshot_indices)},
        "subcloud": config.subcloud, "transport_cap": config.transport_cap,
        "bootstrap": config.bootstrap, "z": config.z_threshold,
        "constants_override": dict(config.constants_override),
    }


def _probe_echo(probe) -> Optional[dict]:
    if probe is None:
        return None
    if isinstance(probe, LangevinProbeReport):
        return {"kind": "langevin", "passed": probe.passed,
                "failures": list(probe.failures),
                "min_convexity_quotient": probe.min_convexity_quotient,
                "max_param_quotient": probe.max_param_quotient,
                "declared_k": probe.declared_k, "declared_L3": probe.declared_L3}
    return {"kind": "drift_diffusion", "passed": probe.passed,
            "failures": list(probe.failures),
            "max_joint_quotient": probe.max_joint_quotient,
            "max_divergence_quotient": probe.max_divergence_quotient,
            "min_eigenvalue": probe.min_eigenvalue,
            "max_growth_ratio": probe.max_growth_ratio,
            "declared": {"L1": probe.declared.L1, "L2": probe.declared.L2,
                         "m": probe.declared.m, "C": probe.declared.C}}


def write_report_json(path: str, report: ExperimentReport) -> None:
    doc = {
        "failed": None,
        "passed": report.passed,
        "config": _config_echo(report.config),
        "w0p": {str(p): v for p, v in report.w0p.items()},
        "constants": {str(p): v for p, v in report.constants.items()},
        "side_envelopes": report.side_envelopes,
        "vacuous": {str(p): v for p, v in report.vacuous.items()},
        "probe": _probe_echo(report.probe),
        "certificates": report.certificates,
        "warnings": report.warnings,
        "failures": [{"p": p, "t": t} for p, t in report.verdicts.failures],
        "rows": [{"p": r.p, "t": r.t, "w_hat_pp": r.w_hat_pp, "w_hat_se": r.w_hat_se,
                  "moment_pp": r.moment_pp, "moment_se": r.moment_se,
                  "envelope": r.envelope, "oracle": r.oracle,
                  "coupling_pp": r.coupling_pp, "verdict": r.verdict}
                 for r in report.rows],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_failed_marker(out_dir: str, config: ExperimentConfig, failed: dict) -> None:
    doc = {"failed": failed, "passed": False, "config": _config_echo(config)}
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def render_plots(rows, plot_dir: str) -> None:
    """One SVG per order: empirical distance, moment curve, envelope, oracle."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "fpsens"

    os.makedirs(plot_dir, exist_ok=True)
    orders = sorted({r.p for r in rows})
    for p in orders:
        sub = [r for r in rows if r.p == p]
        ts = [r.t for r in sub]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        w = np.array([r.w_hat_pp for r in sub])
        se = np.array([r.w_hat_se for r in sub])
        ax.errorbar(ts, w, yerr=3 * se, fmt="o-", capsize=3, label="empirical W_p^p")
        ax.plot(ts, [r.moment_pp for r in sub], "s--", label="moment E|X-X'|^p")
        ax.plot(ts, [r.envelope for r in sub], "k-", lw=2, label="envelope")
        if all(r.oracle is not None for r in sub):
            ax.plot(ts, [r.oracle for r in sub], ":", label="exact")
        ax.set_xlabel("t")
        ax.set_ylabel(f"order {p:g} distance")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        tag = f"{p:g}".replace(".", "_")
        fig.savefig(os.path.join(plot_dir, f"wp_{tag}.svg"),
                    metadata={"Date": None})
        plt.close(fig)

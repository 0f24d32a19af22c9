"""Config schemas and runnable scenarios behind the command line.

Every runner takes a validated config (``dict`` of tables) and returns an
:class:`Outcome` holding named invariant checks, scalar metrics and CSV
tables.  Runners never touch the file system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import experiments as ex
from .bridge import BridgeProblem, chain_messages, continuum_residual, solve_bridge
from .errors import ConfigError
from .kernels import (
    MeasurementCoupling,
    NonRelativistic,
    TwoLevelParams,
    build_factor,
    dynamical_from_hamiltonian,
    dynamical_matrix,
    free_particle,
    harmonic,
    kernel_moments,
    measurement_covariance,
    measurement_kernel,
    truncate_two_level,
)
from .lattice import Grid, TimeMesh, make_grid
from .quantization import (
    DensityMatrix,
    SrcState,
    assemble_density,
    observables,
    src_step,
    vn_step,
)

# --------------------------------------------------------------------------
# checks and outcomes


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str = "<="

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return False
        return {"<=": v <= t, "<": v < t, ">=": v >= t, ">": v > t}[self.op]

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "comparison": self.op,
            "passed": self.passed,
        }


@dataclass
class Outcome:
    checks: list[Check] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list]] = field(default_factory=dict)
    sweep_metric: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    def check(self, name, value, threshold, op="<="):
        self.checks.append(Check(name, float(value), float(threshold), op))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# --------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Param:
    default: Any
    kind: str = "float"  # float | int | str | bool | floats | choice
    rule: Optional[str] = None  # positive | nonneg | unit | open_unit | min2
    choices: tuple = ()


def _validate_value(key: str, p: Param, v) -> tuple[Any, Optional[str]]:
    if p.kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return v, f"{key}: expected a number, got {v!r}"
        v = float(v)
        if not math.isfinite(v):
            return v, f"{key}: must be finite"
    elif p.kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            return v, f"{key}: expected an integer, got {v!r}"
    elif p.kind == "bool":
        if not isinstance(v, bool):
            return v, f"{key}: expected true/false, got {v!r}"
    elif p.kind == "str" or p.kind == "choice":
        if not isinstance(v, str):
            return v, f"{key}: expected a string, got {v!r}"
        if p.kind == "choice" and v not in p.choices:
            return v, f"{key}: {v!r} is not one of {', '.join(p.choices)}"
    elif p.kind == "floats":
        if not isinstance(v, list) or not v or any(isinstance(e, bool) or not isinstance(e, (int, float)) for e in v):
            return v, f"{key}: expected a non-empty list of numbers"
        v = [float(e) for e in v]
    rule = p.rule
    vals = v if isinstance(v, list) else [v]
    if rule == "positive" and any(not e > 0 for e in vals):
        return v, f"{key}: must be > 0, got {v!r}"
    if rule == "nonneg" and any(e < 0 for e in vals):
        return v, f"{key}: must be >= 0, got {v!r}"
    if rule == "unit" and any(not 0 <= e <= 1 for e in vals):
        return v, f"{key}: must lie in [0, 1], got {v!r}"
    if rule == "open_unit" and any(not abs(e) < 1 for e in vals):
        return v, f"{key}: |value| must be < 1, got {v!r}"
    if rule == "min2" and v < 2:
        return v, f"{key}: must be >= 2, got {v!r}"
    return v, None


Schema = dict[str, dict[str, Param]]


def _grid_table(x_min, x_max, n):
    return {"x_min": Param(x_min), "x_max": Param(x_max), "n_points": Param(n, "int", "min2")}


SCHEMAS: dict[str, Schema] = {
    "two_slit": {
        "grid": _grid_table(-10.0, 10.0, 201),
        "physics": {
            "mass": Param(1.0, rule="positive"),
            "hbar": Param(1.0, rule="positive"),
            "x_slit": Param(1.0, rule="positive"),
            "source": Param(0.0),
            "eps_source": Param(0.5, rule="positive"),
            "eps_screen": Param(2.0, rule="positive"),
            "objectivity": Param(True, "bool"),
            "internal_kappa": Param(0.5, rule="nonneg"),
        },
    },
    "bridge": {
        "grid": _grid_table(-8.0, 8.0, 64),
        "mesh": {"epsilon": Param(0.1, rule="positive"), "n_steps": Param(10, "int", "positive")},
        "physics": {
            "mass": Param(1.0, rule="positive"),
            "lambda": Param(2.1, rule="positive"),
            "mean_start": Param(-2.0),
            "var_start": Param(0.5, rule="positive"),
            "mean_end": Param(2.0),
            "var_end": Param(0.5, rule="positive"),
        },
        "solver": {
            "tolerance": Param(1e-10, rule="positive"),
            "max_iterations": Param(1000, "int", "positive"),
            "residual_limit": Param(1e-8, rule="positive"),
            "marginal_limit": Param(1e-4, rule="positive"),
        },
    },
    "src_evolution": {
        "grid": _grid_table(-8.0, 8.0, 32),
        "mesh": {"epsilon": Param(1e-3, rule="positive"), "n_steps": Param(1000, "int", "positive")},
        "physics": {
            "model": Param("rabi", "choice", choices=("rabi", "free")),
            "hbar": Param(1.0, rule="positive"),
            "mass": Param(1.0, rule="positive"),
            "kernel_epsilon": Param(0.25, rule="positive"),
            "E0": Param(0.0),
            "E1": Param(1.0),
            "omega": Param(1.0, rule="nonneg"),
            "D": Param(0.5),
            "center": Param(0.5),
            "momentum": Param(0.8),
        },
        "solver": {
            "oracle_tolerance": Param(1e-3, rule="positive"),
            "conservation_tolerance": Param(1e-10, rule="positive"),
            "identity_tolerance": Param(1e-12, rule="positive"),
            "record_every": Param(100, "int", "positive"),
        },
    },
    "classical_path": {
        "mesh": {"epsilon": Param(0.02, rule="positive"), "duration": Param(1.0, rule="positive")},
        "physics": {
            "mass": Param(1.0, rule="positive"),
            "kappa": Param(1.0),
            "x0": Param(1.0),
            "xn": Param(2.0),
        },
        "solver": {
            "tolerance": Param(1e-10, rule="positive"),
            "max_iterations": Param(200, "int", "positive"),
        },
    },
    "momentum_measurement": {
        "grid": _grid_table(-2.4, 2.4, 385),
        "physics": {
            "k_values": Param([-2.0, -1.0, 0.0, 1.0, 2.0], "floats"),
            "amplitudes": Param([1.0, 2.0, 3.0, 2.0, 1.5], "floats"),
            "phases": Param([0.0, 0.3, 0.0, -1.0, 2.0], "floats"),
            "sigma": Param(0.05, rule="positive"),
            "g": Param(1.0),
            "tau": Param(1.0, rule="positive"),
            "hbar": Param(1.0, rule="positive"),
            "system_mass": Param(1.0, rule="positive"),
            "device_mass": Param(2.0, rule="positive"),
            "coupling": Param(0.5, rule="open_unit"),
            "kernel_epsilon": Param(0.04, rule="positive"),
            "kernel_points": Param(41, "int", "min2"),
            "kernel_half_width": Param(2.0, rule="positive"),
        },
        "solver": {
            "weight_tolerance": Param(1e-4, rule="positive"),
            "moment_tolerance": Param(1e-6, rule="positive"),
        },
    },
    "coin": {
        "physics": {"p": Param(0.3, rule="unit")},
        "solver": {"n_samples": Param(100_000, "int", "positive")},
    },
    "drift_check": {
        "grid": _grid_table(-6.0, 6.0, 401),
        "mesh": {"epsilon": Param(0.01, rule="positive"), "duration": Param(0.5, rule="positive")},
        "physics": {
            "gamma": Param(1.0, rule="positive"),
            "v": Param(0.5),
            "h_diff": Param(1.0, rule="positive"),
        },
        "solver": {
            "order_tolerance": Param(0.2, rule="positive"),
            "transport_tolerance": Param(1e-4, rule="positive"),
        },
    },
    "convergence_sweep": {
        "grid": _grid_table(-8.0, 8.0, 32),
        "mesh": {
            "epsilons": Param([1e-2, 5e-3, 2.5e-3], "floats", "positive"),
            "duration": Param(1.0, rule="positive"),
        },
        "physics": {
            "target": Param(
                "euler_oracle",
                "choice",
                choices=("euler_oracle", "row_mass", "drift", "classical_path", "continuum"),
            ),
            "mass": Param(1.0, rule="positive"),
            "hbar": Param(1.0, rule="positive"),
            "kappa": Param(2.0),
            "kernel_epsilon": Param(0.25, rule="positive"),
        },
        "solver": {"slope_tolerance": Param(0.1, rule="positive")},
    },
}

EXPERIMENTS = tuple(SCHEMAS)
TOP_LEVEL = {"experiment", "seed", "output_dir"}

SWEEPABLE = {
    "epsilon": ("mesh", "epsilon"),
    "n_points": ("grid", "n_points"),
    "lambda": ("physics", "lambda"),
    "sigma": ("physics", "sigma"),
}

# expected log-log order of the per-run sweep metric against the swept value
SWEEP_ORDERS = {
    ("drift_check", "epsilon"): (1.0, 0.2),
    ("classical_path", "epsilon"): (2.0, 0.3),
    ("bridge", "epsilon"): (1.0, 0.3),
}


def validate_config(raw: dict) -> dict:
    """Fill defaults and check types and ranges; report every problem at once."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    name = raw.get("experiment")
    if name is None:
        raise ConfigError("missing key: experiment", ["experiment: required"])
    if name not in SCHEMAS:
        raise ConfigError(
            f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}",
            [f"experiment: {name!r} is not one of {', '.join(EXPERIMENTS)}"],
        )
    schema = SCHEMAS[name]
    problems: list[str] = []
    out: dict[str, Any] = {"experiment": name}
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        problems.append(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    out["seed"] = seed
    out_dir = raw.get("output_dir", "runs")
    if not isinstance(out_dir, str):
        problems.append(f"output_dir: expected a string, got {out_dir!r}")
    out["output_dir"] = out_dir
    for key, value in raw.items():
        if key in TOP_LEVEL:
            continue
        if key not in schema:
            problems.append(f"{key}: unknown key for experiment {name!r} (tables: {', '.join(schema)})")
        elif not isinstance(value, dict):
            problems.append(f"{key}: expected a table")
    for table, params in schema.items():
        given = raw.get(table, {})
        given = given if isinstance(given, dict) else {}
        section = {}
        for key in given:
            if key not in params:
                problems.append(f"{table}.{key}: unknown parameter (allowed: {', '.join(params)})")
        for key, p in params.items():
            if key in given:
                v, err = _validate_value(f"{table}.{key}", p, given[key])
                if err:
                    problems.append(err)
                section[key] = v
            else:
                section[key] = list(p.default) if isinstance(p.default, list) else p.default
        out[table] = section
    if not problems:
        problems.extend(_cross_checks(out))
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    return out


def _cross_checks(cfg: dict) -> list[str]:
    problems = []
    g = cfg.get("grid")
    if g is not None and not g["x_max"] > g["x_min"]:
        problems.append("grid.x_max: must exceed grid.x_min")
    ph = cfg.get("physics", {})
    if cfg["experiment"] == "momentum_measurement":
        n = len(ph["k_values"])
        for key in ("amplitudes", "phases"):
            if len(ph[key]) != n:
                problems.append(f"physics.{key}: needs {n} entries to match physics.k_values")
    if cfg["experiment"] == "src_evolution" and ph["model"] == "rabi" and not ph["E1"] > ph["E0"]:
        problems.append("physics.E1: must exceed physics.E0")
    me = cfg.get("mesh", {})
    if cfg["experiment"] == "classical_path":
        n = round(me["duration"] / me["epsilon"])
        if n < 2 or not math.isclose(n * me["epsilon"], me["duration"], rel_tol=1e-9):
            problems.append("mesh.epsilon: must divide mesh.duration into at least two steps")
    if cfg["experiment"] == "convergence_sweep" and len(me["epsilons"]) < 2:
        problems.append("mesh.epsilons: needs at least two values")
    return problems


def set_param(cfg: dict, name: str, value) -> dict:
    """Copy of ``cfg`` with a sweepable parameter replaced."""
    table, key = SWEEPABLE[name]
    new = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
    new[table][key] = value
    return new


def sweep_target(cfg: dict, name: str) -> tuple[str, str]:
    if name not in SWEEPABLE:
        raise ConfigError(
            f"parameter {name!r} is not sweepable; choose from {', '.join(SWEEPABLE)}",
            [f"--param: {name!r} is not sweepable"],
        )
    table, key = SWEEPABLE[name]
    schema = SCHEMAS[cfg["experiment"]]
    if key not in schema.get(table, {}):
        raise ConfigError(
            f"experiment {cfg['experiment']!r} has no parameter {table}.{key}",
            [f"--param: {name!r} does not apply to {cfg['experiment']!r}"],
        )
    return table, key


# --------------------------------------------------------------------------
# helpers


def _grid(cfg) -> Grid:
    g = cfg["grid"]
    return make_grid(g["x_min"], g["x_max"], g["n_points"])


def _gauss(x, mean, var):
    return np.exp(-((x - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def gaussian_bridge_moments(a0, s0, an, sn, tau, r):
    """Mean and variance at fraction ``r`` of a Gaussian bridge with diffusion ``tau``.

    ``s0``/``sn`` are endpoint variances; the endpoint coupling ``c`` solves
    ``c^2 + tau c - s0 sn = 0`` for the entropy-optimal Gaussian coupling.
    """
    c = 0.5 * (-tau + math.sqrt(tau * tau + 4 * s0 * sn))
    mean = (1 - r) * a0 + r * an
    var = (1 - r) ** 2 * s0 + r * r * sn + 2 * r * (1 - r) * c + tau * r * (1 - r)
    return mean, var


def _curve_rows(*cols):
    return list(zip(*[np.asarray(c).tolist() for c in cols]))


def _unitary(H: np.ndarray, dt: float, hbar: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    return (V * np.exp(-1j * w * dt / hbar)) @ V.conj().T


# --------------------------------------------------------------------------
# runners


def run_two_slit(cfg, seed: int, strict: bool) -> Outcome:
    ph = cfg["physics"]
    grid = _grid(cfg)
    internal = None if ph["objectivity"] else harmonic(ph["mass"], ph["internal_kappa"], 0.3)
    setup = ex.make_slit_setup(
        grid, ph["x_slit"], ph["eps_source"], ph["eps_screen"], ph["mass"], ph["hbar"], internal, strict
    )
    setup = ex.SlitSetup(setup.x_slit, setup.F0, setup.F1, setup.G1, setup.G0, grid, ph["source"])
    r = ex.two_slit(setup)
    o = Outcome()
    dx = grid.dx
    o.check("closed_form_vs_path_sum", r.closed_form_gap, 1e-12)
    o.check("non_additivity_l1", r.non_additivity, 1e-3, ">")
    o.check("normalization_both", abs(r.P_both.sum() * dx - 1.0), 1e-12)
    o.check("normalization_single", max(abs(r.P_plus.sum() * dx - 1), abs(r.P_minus.sum() * dx - 1)), 1e-12)
    interference_mass = float(r.interference_term.sum() * dx)
    o.metrics.update(
        C=r.C,
        Z_plus=r.Z_plus,
        Z_minus=r.Z_minus,
        Z_both=r.Z_both,
        interference_mass=interference_mass,
        max_abs_delta_S=float(np.max(np.abs(r.delta_S))),
        objective=setup.objective,
    )
    o.sweep_metric = interference_mass
    o.tables["screen"] = (
        ["x", "P_plus", "P_minus", "P_both", "P_both_raw", "interference"],
        _curve_rows(r.x, r.P_plus, r.P_minus, r.P_both, r.P_both_raw, r.interference_term),
    )
    return o


def run_bridge(cfg, seed: int, strict: bool) -> Outcome:
    ph, me, so = cfg["physics"], cfg["mesh"], cfg["solver"]
    grid = _grid(cfg)
    mesh = TimeMesh(me["epsilon"], me["n_steps"])
    hbar = mesh.total_T / ph["lambda"]
    spec = free_particle(ph["mass"])
    factors = tuple(build_factor(spec, grid, mesh.epsilon, hbar, strict=strict) for _ in range(mesh.n_steps))
    x = grid.points
    p0 = _gauss(x, ph["mean_start"], ph["var_start"])
    pn = _gauss(x, ph["mean_end"], ph["var_end"])
    p0 /= p0.sum() * grid.dx
    pn /= pn.sum() * grid.dx
    pair = solve_bridge(
        BridgeProblem(factors, p0, pn, so["tolerance"], so["max_iterations"]), raise_on_failure=False
    )
    born = pair.born()
    n = mesh.n_steps
    tau = n * hbar * mesh.epsilon / ph["mass"]
    err = 0.0
    for l in range(1, n):
        m, v = gaussian_bridge_moments(ph["mean_start"], ph["var_start"], ph["mean_end"], ph["var_end"], tau, l / n)
        err = max(err, float(np.max(np.abs(born[l] - _gauss(x, m, v)))))
    o = Outcome()
    o.check("endpoint_l1_residual", pair.residual, so["residual_limit"])
    o.check("sweeps_used", pair.iterations, so["max_iterations"])
    o.check("interior_vs_closed_form", err, so["marginal_limit"])
    o.metrics.update(hbar_cycle=hbar, iterations=pair.iterations, residual=pair.residual, interior_error=err)
    # continuum residual of the messages, first order in the step
    harmonic_free = NonRelativistic(ph["mass"])
    rf, rb = continuum_residual(pair, harmonic_free, mesh.epsilon, ph["lambda"], mesh.total_T)
    o.metrics.update(continuum_residual_forward=rf, continuum_residual_backward=rb)
    o.sweep_metric = rf
    rows = [(l, i, born[l, i]) for l in range(n + 1) for i in range(grid.n_points)]
    o.tables["marginals"] = (["step", "x_index", "p"], rows)
    rows = [(l, i, pair.forward[l, i], pair.backward[l, i]) for l in range(n + 1) for i in range(grid.n_points)]
    o.tables["messages"] = (["step", "x_index", "mu_fwd", "mu_bwd"], rows)
    return o


def _src_setup(cfg, strict):
    ph = cfg["physics"]
    hbar = ph["hbar"]
    if ph["model"] == "rabi":
        params = TwoLevelParams(ph["E0"], ph["E1"], ph["omega"], ph["D"], hbar)
        rho0 = DensityMatrix(np.diag([1.0, 0.0]).astype(complex), hbar, 1.0)

        def H_at(t):
            return truncate_two_level(params, t).astype(complex)

        return rho0, H_at, np.arange(2.0), ph["omega"] != 0 and ph["D"] != 0
    grid = _grid(cfg)
    x = grid.points
    psi = np.exp(-((x - ph["center"]) ** 2) / 2 + 1j * ph["momentum"] * x)
    rho = np.outer(psi, psi.conj())
    rho /= np.trace(rho).real * grid.dx
    F = build_factor(free_particle(ph["mass"]), grid, ph["kernel_epsilon"], hbar, strict=strict)
    H = dynamical_matrix(F, ph["kernel_epsilon"], hbar, warn=False).hamiltonian

    def H_at(t):
        return H

    return DensityMatrix(rho, hbar, grid.dx), H_at, x, False


def run_src_evolution(cfg, seed: int, strict: bool) -> Outcome:
    me, so = cfg["mesh"], cfg["solver"]
    rho0, H_at, x, driven = _src_setup(cfg, strict)
    hbar, w = rho0.hbar_cycle, rho0.weight
    dt, n = me["epsilon"], me["n_steps"]
    o = Outcome()

    # one SRC step on the mirrored pair reproduces one commutator step
    H0 = H_at(0.0)
    J = dynamical_from_hamiltonian(H0, hbar)
    P = rho0.rho.real - rho0.rho.imag
    state = src_step(SrcState.from_matrix(P), J, dt)
    via_src = assemble_density(state.P_A, hbar, w, tol=1e-8)
    via_vn = vn_step(rho0, H0, dt)
    o.check("src_vs_vn_step", float(np.max(np.abs(via_src.rho - via_vn.rho))), so["identity_tolerance"])
    o.check("src_transpose_lock", state.transpose_defect, so["identity_tolerance"])

    rho = rho0
    U = np.eye(rho0.rho.shape[0], dtype=complex)
    H_static = None if driven else H0
    U_step = None if driven else _unitary(H0, dt, hbar)
    records, dev, tr_err, herm = [], 0.0, 0.0, 0.0
    for l in range(n + 1):
        if l % so["record_every"] == 0 or l == n:
            exact = U @ rho0.rho @ U.conj().T
            dev = max(dev, float(np.max(np.abs(rho.rho - exact))))
            rec = {"step": l, "t": l * dt, **observables(rho, x)}
            records.append(rec)
        tr_err = max(tr_err, abs(rho.trace - 1.0))
        herm = max(herm, rho.hermiticity_defect)
        if l == n:
            break
        t = l * dt
        rho = vn_step(rho, H_static if H_static is not None else H_at(t), dt)
        U = (U_step if U_step is not None else _unitary(H_at(t + 0.5 * dt), dt, hbar)) @ U
    o.check("oracle_max_deviation", dev, so["oracle_tolerance"])
    o.check("trace_conservation", tr_err, so["conservation_tolerance"])
    o.check("hermiticity", herm, so["conservation_tolerance"])
    o.metrics.update(final_purity=records[-1]["purity"], oracle_deviation=dev)
    o.sweep_metric = dev
    cols = ["step", "t", "trace_re", "purity", "pos_mean", "pos_var"]
    o.tables["observables"] = (cols, [[r[c] for c in cols] for r in records])
    return o


def _path_problem(cfg) -> ex.PathProblem:
    ph, me = cfg["physics"], cfg["mesh"]
    n = int(round(me["duration"] / me["epsilon"]))
    if n < 2 or not math.isclose(n * me["epsilon"], me["duration"], rel_tol=1e-9):
        raise ConfigError(
            "mesh.duration must be a multiple (>= 2) of mesh.epsilon",
            ["mesh.epsilon: does not divide mesh.duration into >= 2 steps"],
        )
    spec = harmonic(ph["mass"], ph["kappa"]) if ph["kappa"] != 0 else free_particle(ph["mass"])
    return ex.PathProblem(ph["x0"], ph["xn"], spec, TimeMesh(me["epsilon"], n))


def run_classical_path(cfg, seed: int, strict: bool) -> Outcome:
    ph, so = cfg["physics"], cfg["solver"]
    prob = _path_problem(cfg)
    res = ex.classical_path(prob, so["tolerance"], so["max_iterations"])
    o = Outcome()
    o.check("newton_residual", res.max_residual, so["tolerance"])
    m, eps, n = ph["mass"], prob.mesh.epsilon, prob.mesh.n_steps
    # the stationarity condition is linear for quadratic potentials
    k2 = m / eps**2
    A = np.diag(np.full(n - 1, 2 * k2 + ph["kappa"])) - k2 * (np.eye(n - 1, k=1) + np.eye(n - 1, k=-1))
    b = np.zeros(n - 1)
    b[0] += k2 * ph["x0"]
    b[-1] += k2 * ph["xn"]
    direct = np.linalg.solve(A, b)
    o.check("matches_linear_solve", float(np.max(np.abs(res.path[1:-1] - direct))), 1e-10)
    if ph["kappa"] > 0:
        cont = ex.harmonic_continuum_path(ph["x0"], ph["xn"], math.sqrt(ph["kappa"] / m), res.times)
    elif ph["kappa"] == 0:
        cont = ph["x0"] + (ph["xn"] - ph["x0"]) * res.times / res.times[-1]
    else:
        w = math.sqrt(-ph["kappa"] / m)
        T = res.times[-1]
        cont = (ph["x0"] * np.sin(w * (T - res.times)) + ph["xn"] * np.sin(w * res.times)) / math.sin(w * T)
    gap = float(np.max(np.abs(res.path - cont)))
    o.metrics.update(iterations=res.iterations, method=res.method, continuum_gap=gap)
    if res.note:
        o.notes.append(res.note)
    o.sweep_metric = gap
    o.tables["path"] = (["t", "x", "continuum"], _curve_rows(res.times, res.path, cont))
    return o


def run_momentum_measurement(cfg, seed: int, strict: bool) -> Outcome:
    ph, so = cfg["physics"], cfg["solver"]
    amps = np.asarray(ph["amplitudes"]) * np.exp(1j * np.asarray(ph["phases"]))
    setup = ex.PointerSetup(np.asarray(ph["k_values"]), amps, ph["sigma"], ph["g"], ph["tau"], _grid(cfg), ph["hbar"])
    r = ex.momentum_measurement(setup, coverage=8.0)
    o = Outcome()
    rec = r.peak_weights()
    o.check("peak_weight_error", float(np.max(np.abs(rec - r.weights))), so["weight_tolerance"])
    o.check("pointer_mass", abs(r.density.sum() * (r.X[1] - r.X[0]) - 1.0), so["weight_tolerance"])

    spec = MeasurementCoupling(ph["system_mass"], ph["device_mass"], ph["coupling"])
    half, npts = ph["kernel_half_width"], ph["kernel_points"]
    gk = make_grid(-half, half, npts)
    eps_k = ph["kernel_epsilon"]
    F = measurement_kernel(spec, gk, gk, eps_k, ph["hbar"], strict)
    centre = (npts // 2) * npts + npts // 2
    mean, second = kernel_moments(F, centre)
    C = measurement_covariance(spec, eps_k, ph["hbar"])
    o.check("kernel_mean", float(np.max(np.abs(mean))), so["moment_tolerance"])
    o.check("kernel_covariance", float(np.max(np.abs(second - C))), so["moment_tolerance"])
    o.metrics.update(recovered_weights=rec.tolist(), target_weights=r.weights.tolist(), covariance=C.tolist())
    o.sweep_metric = float(np.max(np.abs(rec - r.weights)))
    o.tables["pointer"] = (["x", "value"], _curve_rows(r.X, r.density))
    return o


def run_coin(cfg, seed: int, strict: bool) -> Outcome:
    p = cfg["physics"]["p"]
    r = ex.coin_two_stage(p, cfg["solver"]["n_samples"], seed)
    o = Outcome()
    o.check("exact_law", max(abs(r.exact[0] - (1 - p)), abs(r.exact[1] - p)), 1e-15)
    o.check("empirical_within_3sigma", r.deviation, 3 * r.sigma + 1e-15)
    o.metrics.update(
        exact=list(r.exact), empirical=list(r.empirical), noise=list(r.noise), flip_probability=r.flip_probability
    )
    o.tables["law"] = (
        ["outcome", "exact", "empirical"],
        [("heads", r.exact[0], r.empirical[0]), ("tails", r.exact[1], r.empirical[1])],
    )
    return o


def run_drift_check(cfg, seed: int, strict: bool) -> Outcome:
    ph, me, so = cfg["physics"], cfg["mesh"], cfg["solver"]
    grid = _grid(cfg)
    eps = me["epsilon"]
    coarse = ex.drift_frame_check(ph["gamma"], ph["v"], eps, ph["h_diff"], grid)
    fine = ex.drift_frame_check(ph["gamma"], ph["v"], eps / 2, ph["h_diff"], grid)
    o = Outcome()
    sym_order = math.log2(coarse.sym_residual / fine.sym_residual)
    o.check("sym_order_deviation", abs(sym_order - 1.0), so["order_tolerance"])
    if ph["v"] == 0:
        o.check("antisym_residual_no_drift", coarse.antisym_residual, 1e-10)
    else:
        anti_order = math.log2(coarse.antisym_residual / fine.antisym_residual)
        o.check("antisym_order_deviation", abs(anti_order - 1.0), so["order_tolerance"])
    steps = max(1, int(round(me["duration"] / eps)))
    terr = ex.transported_gaussian_error(ph["gamma"], ph["v"], eps, ph["h_diff"], grid, steps)
    o.check("transported_gaussian", terr, so["transport_tolerance"])
    o.metrics.update(
        sym_residual=coarse.sym_residual,
        antisym_residual=coarse.antisym_residual,
        sym_residual_half=fine.sym_residual,
        antisym_residual_half=fine.antisym_residual,
        transport_error=terr,
    )
    o.sweep_metric = coarse.sym_residual
    o.tables["residuals"] = (
        ["epsilon", "sym_residual", "antisym_residual"],
        [(eps, coarse.sym_residual, coarse.antisym_residual), (eps / 2, fine.sym_residual, fine.antisym_residual)],
    )
    return o


# convergence targets: (metric function of epsilon, expected order)


def _target_euler(cfg, strict):
    ph, me = cfg["physics"], cfg["mesh"]
    grid = _grid(cfg)
    x = grid.points
    psi = np.exp(-((x - 0.5) ** 2) / 2 + 0.8j * x)
    rho = np.outer(psi, psi.conj())
    rho /= np.trace(rho).real * grid.dx
    rho0 = DensityMatrix(rho, ph["hbar"], grid.dx)
    F = build_factor(free_particle(ph["mass"]), grid, ph["kernel_epsilon"], ph["hbar"], strict=strict)
    H = dynamical_matrix(F, ph["kernel_epsilon"], ph["hbar"], warn=False).hamiltonian
    exact = _unitary(H, me["duration"], ph["hbar"])
    target = exact @ rho0.rho @ exact.conj().T

    def metric(eps):
        n = int(round(me["duration"] / eps))
        r = rho0
        for _ in range(n):
            r = vn_step(r, H, eps)
        return float(np.max(np.abs(r.rho - target)))

    return metric, 1.0


def _target_row_mass(cfg, strict):
    ph = cfg["physics"]
    grid = _grid(cfg)
    x = grid.points
    spec = harmonic(ph["mass"], ph["kappa"])
    inner = np.abs(x) <= 2.0

    def metric(eps):
        F = build_factor(spec, grid, eps, ph["hbar"], strict=strict)
        rem = F.row_mass() - (1 - eps * spec.V(x) / ph["hbar"])
        return float(np.max(np.abs(rem[inner])))

    return metric, 2.0


def _target_drift(cfg, strict):
    grid = _grid(cfg)
    return (lambda eps: ex.drift_frame_check(1.0, 0.5, eps, 1.0, grid).sym_residual), 1.0


def _target_classical(cfg, strict):
    ph, me = cfg["physics"], cfg["mesh"]
    omega = math.sqrt(ph["kappa"] / ph["mass"])

    def metric(eps):
        n = int(round(me["duration"] / eps))
        prob = ex.PathProblem(1.0, 2.0, harmonic(ph["mass"], ph["kappa"]), TimeMesh(eps, n))
        res = ex.classical_path(prob)
        return float(np.max(np.abs(res.path - ex.harmonic_continuum_path(1.0, 2.0, omega, res.times))))

    return metric, 2.0


def _target_continuum(cfg, strict):
    ph, me = cfg["physics"], cfg["mesh"]
    grid = _grid(cfg)
    spec = harmonic(ph["mass"], ph["kappa"])
    x = grid.points

    def metric(eps):
        n = int(round(me["duration"] / eps))
        T = (2 * n + 1) * eps
        lam = T / ph["hbar"]
        fs = [build_factor(spec, grid, eps, ph["hbar"], t=l * eps, strict=strict) for l in range(n)]
        pair = chain_messages(fs, np.exp(-(x**2) / 2), np.exp(-((x - 0.5) ** 2)))
        return max(continuum_residual(pair, spec, eps, lam, T))

    return metric, 1.0


TARGETS: dict[str, Callable] = {
    "euler_oracle": _target_euler,
    "row_mass": _target_row_mass,
    "drift": _target_drift,
    "classical_path": _target_classical,
    "continuum": _target_continuum,
}


def run_convergence_sweep(cfg, seed: int, strict: bool) -> Outcome:
    ph, me = cfg["physics"], cfg["mesh"]
    metric, order = TARGETS[ph["target"]](cfg, strict)
    eps = sorted(me["epsilons"], reverse=True)
    if len(eps) < 2:
        raise ConfigError("mesh.epsilons needs at least two values", ["mesh.epsilons: fewer than two values"])
    errs = [metric(e) for e in eps]
    slope = ex.fit_slope(eps, errs)
    o = Outcome()
    o.check("slope_deviation", abs(slope - order), ph.get("slope_tolerance", cfg["solver"]["slope_tolerance"]))
    o.metrics.update(target=ph["target"], expected_order=order, slope=slope, errors=errs, epsilons=eps)
    o.tables["convergence"] = (["epsilon", "error"], list(zip(eps, errs)))
    return o


RUNNERS: dict[str, Callable[[dict, int, bool], Outcome]] = {
    "two_slit": run_two_slit,
    "bridge": run_bridge,
    "src_evolution": run_src_evolution,
    "classical_path": run_classical_path,
    "momentum_measurement": run_momentum_measurement,
    "coin": run_coin,
    "drift_check": run_drift_check,
    "convergence_sweep": run_convergence_sweep,
}

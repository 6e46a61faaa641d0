"""Experiment configs, the four-stage FGA pipeline, error norms and reports."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .atoms import AtomSet
from .baselines import BeamSet, beams_from_problem, fd_wave_1d, gbm_propagate, gbm_reconstruct, spectral_wave_2d
from .decompose import MeshSpec, build_phase_mesh, init_atoms, split_branches
from .expr import evaluate, parse_expression
from .flow import LOG_DERIVATIVE, FlowSettings, propagate
from .reconstruct import Grid, GridField, evaluate_field
from .scene import WaveProblem

METHODS = ("fga", "gbm")
REFERENCES = ("fd", "spectral")
BUILTIN = ("table1", "example2", "example3")


class ConfigError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


def number(v) -> float:
    """Numbers or expression text such as ``"1/64"`` or ``"2^-11"``."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, str):
        e = parse_expression(v)
        return float(evaluate(e))
    raise ConfigError(f"expected a number, got {v!r}")


def _numbers(v):
    if isinstance(v, (list, tuple)):
        return [number(x) for x in v]
    return number(v)


def eps_label(eps: float) -> str:
    """File-name friendly label, ``1_64`` for 1/64."""
    f = Fraction(eps).limit_denominator(1 << 20)
    if abs(float(f) - eps) <= 1e-15 * eps:
        return f"{f.numerator}_{f.denominator}"
    return f"{eps:.6g}".replace(".", "p")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Parsed experiment description.  ``raw`` keeps the source mapping for the report."""

    name: str
    problem: WaveProblem
    t_final: float
    epsilons: list
    mesh: dict
    flow: dict
    recon: dict
    methods: list
    reference: dict
    gbm: dict
    compare: str = "field"
    l2: str = "weighted"
    theta_factor: float = 6.0
    prune: float | None = 1e-12
    overrides: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            pr = raw["problem"]
            d = int(pr["d"])
            eps_list = [number(e) for e in raw["epsilons"]]
            if not eps_list:
                raise ConfigError("the epsilon list is empty")
            if any(not e > 0 for e in eps_list):
                raise ConfigError("every epsilon must be positive")
            methods = list(raw.get("methods", ["fga"]))
            if not methods:
                raise ConfigError("no methods selected")
            for m in methods:
                if m not in METHODS:
                    raise ConfigError(f"unknown method {m!r}")
            ref = dict(raw.get("reference") or {})
            if ref and ref.get("method") not in REFERENCES:
                raise ConfigError(f"unknown reference {ref.get('method')!r}")
            problem = WaveProblem.from_strings(
                d=d, epsilon=eps_list[0], lo=_numbers(pr["lo"]), hi=_numbers(pr["hi"]),
                speed=str(pr["speed"]), S0=str(pr["S0"]),
                A0=tuple(str(s) for s in pr.get("A0", ["0", "0"])),
                B0=tuple(str(s) for s in pr.get("B0", ["0", "0"])),
            )
            overrides = {}
            for k, v in (raw.get("overrides") or {}).items():
                overrides[number(k)] = v
            compare = raw.get("compare", "field")
            if compare not in ("field", "amplitude"):
                raise ConfigError("compare must be 'field' or 'amplitude'")
            l2 = raw.get("l2", "weighted")
            if l2 not in ("weighted", "unweighted"):
                raise ConfigError("l2 must be 'weighted' or 'unweighted'")
            prune = raw.get("prune", 1e-12)
            return cls(
                name=str(raw.get("name", "experiment")),
                problem=problem,
                t_final=number(pr["T"]),
                epsilons=eps_list,
                mesh=dict(raw.get("mesh") or {}),
                flow=dict(raw.get("flow") or {}),
                recon=dict(raw.get("reconstruction") or {}),
                methods=methods,
                reference=ref,
                gbm=dict(raw.get("gbm") or {}),
                compare=compare,
                l2=l2,
                theta_factor=number(raw.get("theta_factor", 6.0)),
                prune=None if prune is None else number(prune),
                overrides=overrides,
                output=dict(raw.get("output") or {}),
                raw=copy.deepcopy(raw),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    @classmethod
    def builtin(cls, name: str) -> "ExperimentConfig":
        if name not in BUILTIN:
            raise ConfigError(f"no built-in config {name!r}; choose from {BUILTIN}")
        text = resources.files("fgawave.configs").joinpath(f"{name}.yaml").read_text()
        return cls.from_dict(yaml.safe_load(text))

    # per-epsilon views

    def section(self, name: str, eps: float) -> dict:
        base = getattr(self, name)
        for k, v in self.overrides.items():
            if math.isclose(k, eps, rel_tol=1e-12):
                return _merge(base, v.get(name, {}) if name != "recon" else v.get("reconstruction", {}))
        return base

    def problem_at(self, eps: float) -> WaveProblem:
        return self.problem.with_epsilon(eps)

    def theta(self, eps: float) -> float:
        """Cutoff radius of the window transform."""
        return self.theta_factor * math.sqrt(eps)

    def recon_theta(self, eps: float) -> float:
        """Cutoff radius of the field summation (defaults to the transform's)."""
        f = self.section("recon", eps).get("theta_factor")
        return self.theta(eps) if f is None else number(f) * math.sqrt(eps)

    def mesh_spec(self, eps: float) -> MeshSpec:
        m = self.section("mesh", eps)
        d = self.problem.d
        h = m.get("h")
        try:
            return MeshSpec(
                d=d,
                dq=_numbers(m.get("dq", h)), dp=_numbers(m.get("dp", h)), dy=_numbers(m.get("dy", h)),
                Nq=m["Nq"], Np=m["Np"], q0=_numbers(m.get("q0", 0.0)), theta=self.theta(eps),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"incomplete mesh section: {exc}") from None

    def flow_settings(self, eps: float) -> FlowSettings:
        f = self.section("flow", eps)
        return FlowSettings(dt=number(f.get("dt", "2^-10")), t_final=self.t_final,
                            p_min=number(f.get("p_min", 1e-6)),
                            prefactor_form=f.get("prefactor_form", LOG_DERIVATIVE))

    def grid(self, eps: float) -> Grid:
        r = self.section("recon", eps)
        d = self.problem.d
        dx = _numbers(r["dx"])
        if "shape" in r:
            return Grid(np.broadcast_to(_numbers(r.get("x0", self.problem.box.lo)), (d,)),
                        np.broadcast_to(dx, (d,)), np.broadcast_to(r["shape"], (d,)))
        lo = _numbers(r.get("lo", list(self.problem.box.lo)))
        hi = _numbers(r.get("hi", list(self.problem.box.hi)))
        return Grid.from_box(lo, hi, dx)


# ---------------------------------------------------------------------------
# norms and fits

def error_norms(u: GridField, v: GridField, weighted: bool = True, amplitude: bool = False) -> tuple[float, float]:
    """(max |u - v|, l2) on identical grids; ``amplitude`` compares |u| and |v|."""
    if u.grid != v.grid:
        raise GridMismatch("fields live on different grids")
    diff = np.abs(u.values) - np.abs(v.values) if amplitude else u.values - v.values
    diff = np.abs(diff)
    linf = float(diff.max()) if diff.size else 0.0
    w = u.grid.cell if weighted else 1.0
    return linf, float(math.sqrt(float(np.sum(diff ** 2)) * w))


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r2: float
    flagged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_order(errors, r2_min: float = 0.95) -> OrderFit:
    """Least-squares slope of log e against log eps; poor fits are flagged."""
    pts = [(float(a), float(b)) for a, b in errors]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(a <= 0 or b <= 0 for a, b in pts):
        raise ValueError("epsilons and errors must be positive")
    x = np.log([a for a, _ in pts])
    y = np.log([b for _, b in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r2, r2 < r2_min)


def restrict(f: GridField, grid: Grid) -> GridField:
    """Pick the nodes of ``grid`` out of a finer field that contains them."""
    g = f.grid
    if g == grid:
        return f
    if g.d != grid.d:
        raise GridMismatch("dimension mismatch")
    sl = []
    for j in range(g.d):
        stride = grid.dx[j] / g.dx[j]
        off = (grid.x0[j] - g.x0[j]) / g.dx[j]
        if abs(stride - round(stride)) > 1e-9 or abs(off - round(off)) > 1e-6:
            raise GridMismatch("target grid is not a strided subset of the reference grid")
        s, o = int(round(stride)), int(round(off))
        stop = o + (grid.shape[j] - 1) * s + 1
        if o < 0 or stop > g.shape[j]:
            raise GridMismatch("target grid extends past the reference grid")
        sl.append(slice(o, stop, s))
    return GridField(grid, f.values[tuple(sl)], f.label)


# ---------------------------------------------------------------------------
# pipeline stages

def fga_decompose(cfg: ExperimentConfig, eps: float) -> AtomSet:
    pr = cfg.problem_at(eps)
    spec = cfg.mesh_spec(eps)
    spec.check_scaling(eps)
    mesh = build_phase_mesh(pr, spec, cfg.flow_settings(eps).p_min)
    return init_atoms(split_branches(pr), mesh, spec, eps, cfg.prune)


def fga_propagate(cfg: ExperimentConfig, eps: float, atoms: AtomSet, samples: int = 0, max_atoms: int = 1000):
    """Returns propagated atoms and, if ``samples`` > 0, trajectory rows (eps, t, atom, sign, Q, P, a)
    for an evenly strided subset of at most ``max_atoms`` atoms."""
    settings = cfg.flow_settings(eps)
    if samples <= 0:
        return propagate(atoms, settings, cfg.problem.speed), None
    nsteps, _ = settings.schedule()
    per = max(1, nsteps // samples)
    rows = []
    cur = atoms
    done = 0
    pick = np.arange(0, len(atoms), max(1, -(-len(atoms) // max_atoms)))
    _traj_rows(rows, eps, cur, pick)
    while done < nsteps:
        k = min(per, nsteps - done)
        t_end = min(settings.t_final, (done + k) * settings.dt)
        seg = FlowSettings(settings.dt, t_end - cur.t, settings.p_min, settings.prefactor_form)
        cur = propagate(cur, seg, cfg.problem.speed)
        done += k
        _traj_rows(rows, eps, cur, pick)
    cur.census = dict(atoms.census, **{k: v for k, v in cur.census.items() if k in ("dead", "alive")})
    return cur, rows


def _traj_rows(rows, eps, atoms: AtomSet, pick):
    a = atoms.a
    for i in pick:
        rows.append([eps, atoms.t, int(i), int(atoms.sign[i])] + atoms.Q[i].tolist() + atoms.P[i].tolist()
                    + [float(a[i].real), float(a[i].imag)])


def fga_reconstruct(cfg: ExperimentConfig, eps: float, atoms: AtomSet) -> GridField:
    grid = cfg.grid(eps)
    return GridField(grid, evaluate_field(atoms, grid, eps, cfg.recon_theta(eps)), "fga")


def run_fga(cfg: ExperimentConfig, eps: float, return_atoms: bool = False):
    """Decompose, propagate, reconstruct.  Returns the field and the atom census,
    plus the propagated atoms when ``return_atoms`` is set."""
    atoms = fga_decompose(cfg, eps)
    atoms, _ = fga_propagate(cfg, eps, atoms)
    field_ = fga_reconstruct(cfg, eps, atoms)
    if return_atoms:
        return field_, dict(atoms.census), atoms
    return field_, dict(atoms.census)


def gbm_beams(cfg: ExperimentConfig, eps: float) -> BeamSet:
    g = cfg.section("gbm", eps)
    pr = cfg.problem_at(eps)
    if "single" in g:
        # one beam reproducing a width-sqrt(eps) Gaussian centred at y
        y = number(g["single"]["y"])
        b = beams_from_problem(pr, 1.0, 1, y0=y, drop_tol=0.0)
        keep = np.abs(b.A) > 0
        return BeamSet(b.y[keep], b.xi[keep], b.S[keep], b.M[keep],
                       b.A[keep] * math.sqrt(2.0 * math.pi * eps), b.sign[keep], weight=1.0)
    return beams_from_problem(pr, number(g["dy0"]), int(g["n"]), y0=number(g.get("y0", 0.0)),
                              drop_tol=number(g.get("drop_tol", 0.0)))


def run_gbm(cfg: ExperimentConfig, eps: float) -> tuple[GridField, dict]:
    beams = gbm_beams(cfg, eps)
    out = gbm_propagate(beams, cfg.flow_settings(eps).dt, cfg.t_final, cfg.problem.speed)
    grid = cfg.grid(eps)
    theta = None if cfg.gbm.get("cutoff", True) is False else cfg.recon_theta(eps)
    info = {"beams": len(out), "im_M_initial_min": float(beams.M.imag.min()) if len(beams) else None,
            "im_M_final_min": float(out.M.imag.min()) if len(out) else None,
            "lost_positivity": out.lost_positivity}
    return GridField(grid, gbm_reconstruct(out, grid, eps, theta), "gbm"), info


def run_reference(cfg: ExperimentConfig, eps: float) -> tuple[GridField, dict]:
    ref = cfg.section("reference", eps)
    pr = cfg.problem_at(eps)
    kind = ref.get("method")
    if kind == "fd":
        res = fd_wave_1d(pr, number(ref["dx"]), number(ref["dt"]), cfg.t_final)
        return res.field, {"method": "fd", "energy_ratio": res.energy_ratio, "boundary_max": res.boundary_max}
    if kind == "spectral":
        d = pr.d
        dx = np.broadcast_to(_numbers(ref["dx"]), (d,))
        x0 = np.broadcast_to(_numbers(ref.get("x0", list(pr.box.lo))), (d,))
        if "shape" in ref:
            shape = np.broadcast_to(ref["shape"], (d,))
        else:
            shape = np.round((np.asarray(pr.box.hi) - np.asarray(pr.box.lo)) / dx).astype(int)
        f = spectral_wave_2d(pr, Grid(x0, dx, shape), cfg.t_final)
        return f, {"method": "spectral"}
    raise ConfigError("no reference method configured")


# ---------------------------------------------------------------------------
# comparison and reporting

@dataclass
class ExperimentReport:
    name: str
    rows: list                     # one dict per epsilon
    orders: dict                   # method -> norm -> OrderFit dict
    config: dict
    timings: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict, repr=False)   # (method, label) -> GridField
    atoms: dict = field(default_factory=dict, repr=False)    # label -> propagated AtomSet

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": self.rows, "orders": self.orders, "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["name"], d["rows"], d["orders"], d["config"])

    def errors(self, method: str, norm: str) -> list[float]:
        return [r["methods"][method][norm] for r in self.rows]


def run_comparison(cfg: ExperimentConfig, methods=None, keep_fields: bool = True,
                   keep_atoms: bool = False) -> ExperimentReport:
    methods = list(methods or cfg.methods)
    if not cfg.reference:
        raise ConfigError("comparison needs a reference method")
    amplitude = cfg.compare == "amplitude"
    weighted = cfg.l2 == "weighted"
    rows, timings, fields, kept = [], {}, {}, {}
    for eps in cfg.epsilons:
        label = eps_label(eps)
        t0 = time.perf_counter()
        ref_field, ref_info = run_reference(cfg, eps)
        timings[f"reference/{label}"] = time.perf_counter() - t0
        grid = cfg.grid(eps)
        ref_on_grid = restrict(ref_field, grid)
        if keep_fields:
            fields[(ref_info["method"], label)] = ref_on_grid
        row = {"epsilon": eps, "label": label, "reference": ref_info, "methods": {}}
        for m in methods:
            t0 = time.perf_counter()
            if m == "fga":
                f, info, atoms = run_fga(cfg, eps, return_atoms=True)
                if keep_atoms:
                    kept[label] = atoms
            else:
                f, info = run_gbm(cfg, eps)
            timings[f"{m}/{label}"] = time.perf_counter() - t0
            linf, l2 = error_norms(f, ref_on_grid, weighted, amplitude)
            row["methods"][m] = {"linf": linf, "l2": l2, "census": info}
            if keep_fields:
                fields[(m, label)] = f
        rows.append(row)
    orders = {}
    if len(cfg.epsilons) >= 2:
        for m in methods:
            orders[m] = {}
            for norm in ("linf", "l2"):
                pts = [(r["epsilon"], r["methods"][m][norm]) for r in rows]
                if all(e > 0 for _, e in pts):
                    orders[m][norm] = convergence_order(pts).to_dict()
    return ExperimentReport(cfg.name, rows, orders, cfg.raw, timings, fields, kept)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return o


def emit_report(report: ExperimentReport, out_dir, write_fields: bool = True) -> list[Path]:
    """report.json (deterministic), timings.json and one CSV per stored field."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "timings.json"]
    paths[0].write_text(json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n")
    paths[1].write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    if write_fields:
        for (method, label), f in sorted(report.fields.items()):
            paths.append(f.write_csv(out / f"field_{method}_{label}.csv"))
    return paths


def write_trajectories(rows, d: int, path) -> Path:
    path = Path(path)
    head = ["eps", "t", "atom", "sign"] + [f"Q{j + 1}" for j in range(d)] + [f"P{j + 1}" for j in range(d)] + ["re_a", "im_a"]
    with path.open("w") as fh:
        fh.write(",".join(head) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in r) + "\n")
    return path

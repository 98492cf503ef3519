"""Reproducible experiment runner: configs, sweeps, reports and output files.

Every data file is a pure function of the resolved configuration; wall times
go to a separate ``timings.json`` so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import __version__
from .bpt import SpectralDensity, cycle_charge, total_charge_winding
from .dynamics import Ammeter, make_plan, measure_pumped_charge
from .errors import AdiapumpError, ConfigInvalid, MismatchedRuns
from .lab import (
    HalfLineGrid,
    grid_mourre,
    hs_norm_check,
    pull_through_check,
    pump_mourre,
    refinement_study,
    trace_formula_check,
)
from .model import demo_model, load_model, model_from_dict, model_to_dict
from .scattering import lead_mode, scattering_matrix, scattering_matrix_gf

__all__ = [
    "KINDS",
    "RunConfig",
    "ConvergenceReport",
    "RunOutput",
    "load_config",
    "config_hash",
    "run",
    "compare",
    "write_output",
    "worker_count",
]

KINDS = ("smatrix", "bpt", "evolve", "sweep-eps", "sweep-ammeter", "lab", "compare")

DEFAULT_TOLERANCES = {
    "relative_error": 0.10,
    "ammeter_agreement": 0.05,
    "winding_residual": 1e-6,
    "unitarity": 1e-10,
    "route_agreement": 1e-8,
    "norm_drift": 1e-10,
    "lab_error": 0.03,
    "pull_ratio": 1.5,
}

_PARAM_DEFAULTS: dict[str, dict[str, Any]] = {
    "smatrix": {"s": {"start": 0.0, "stop": 1.0, "num": 21}, "energies": [0.5, 1.0, 2.0, 3.0, 3.5],
                "reference": "neumann"},
    "bpt": {"mu": 2.0, "n_epochs": 401},
    "evolve": {"eps": 0.04, "ammeter": 30.0, "lead_length": None, "kind": "position",
               "filter": False, "mu": 2.0, "width": 4.0, "dt": 0.05, "measure_dt": 0.1},
    "sweep-eps": {"eps": [0.16, 0.08, 0.04, 0.02], "ammeter": 30.0, "kind": "position",
                  "mu": 2.0, "width": 4.0, "dt": 0.05, "n_epochs": 401},
    "sweep-ammeter": {"eps": 0.04, "ammeters": [20.0, 40.0, 60.0], "kinds": ["position", "dilation"],
                      "mu": 2.0, "width": 4.0, "dt": 0.05, "tail_extra": 160.0, "measure_dt": 5.0},
    "lab": {"check": "hs_norm", "N": None, "h": None, "levels": 3,
            "g": {"name": "E_exp", "c": 1.0}, "f": {"name": "gaussian"},
            "window": None, "n_epochs": 21, "lead_length": 200},
    "compare": {"bpt": None, "dynamics": None},
}

_NEEDS_MODEL = {"smatrix", "bpt", "evolve", "sweep-eps", "sweep-ammeter"}
_TOP_KEYS = {"kind", "model", "params", "out", "tolerances", "budget_seconds"}


@dataclass
class RunConfig:
    """Validated experiment configuration."""

    kind: str
    model: dict | None
    params: dict
    out: str | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    budget_seconds: float = 900.0
    base_dir: Path = field(default_factory=Path.cwd)

    def canonical(self) -> dict:
        """Resolved content that determines every data file."""
        return {"kind": self.kind, "model": self.model, "params": self.params,
                "tolerances": self.tolerances}

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None, model_file: str | None = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a JSON object")
        extra = set(d) - _TOP_KEYS
        if extra:
            raise ConfigInvalid(f"unknown keys {sorted(extra)}")
        kind = d.get("kind")
        if kind not in KINDS:
            raise ConfigInvalid(f"kind must be one of {KINDS}, got {kind!r}")
        base_dir = Path(base_dir or Path.cwd())
        params = dict(_PARAM_DEFAULTS[kind])
        given = d.get("params", {}) or {}
        if not isinstance(given, dict):
            raise ConfigInvalid("params must be an object")
        bad = set(given) - set(params)
        if bad:
            raise ConfigInvalid(f"unknown params for {kind}: {sorted(bad)}")
        params.update(given)
        tol = dict(DEFAULT_TOLERANCES)
        tgiven = d.get("tolerances", {}) or {}
        bad = set(tgiven) - set(tol)
        if bad:
            raise ConfigInvalid(f"unknown tolerances {sorted(bad)}")
        tol.update({k: float(v) for k, v in tgiven.items()})
        model = None
        ref = model_file or d.get("model")
        if kind in _NEEDS_MODEL or (kind == "lab" and params.get("check") == "mourre_pump"):
            if ref is None:
                raise ConfigInvalid(f"{kind} needs a model")
            model = _resolve_model(ref, base_dir)
        budget = float(d.get("budget_seconds", 900.0))
        if not budget > 0:
            raise ConfigInvalid("budget_seconds must be positive")
        cfg = cls(kind, model, params, d.get("out"), tol, budget, base_dir)
        _validate_params(cfg)
        return cfg


def _resolve_model(ref, base_dir: Path) -> dict:
    try:
        if isinstance(ref, dict):
            return model_to_dict(model_from_dict(ref))
        if ref == "demo":
            return model_to_dict(demo_model())
        p = Path(ref)
        if not p.is_absolute():
            p = base_dir / p
        return model_to_dict(load_model(p))
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"model file not found: {exc.filename}") from exc


def _validate_params(cfg: RunConfig):
    p = cfg.params

    def positive(name, v):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigInvalid(f"{name} must be a positive number")

    if cfg.kind in ("evolve", "sweep-ammeter"):
        positive("eps", p["eps"])
    if cfg.kind == "sweep-eps":
        if not isinstance(p["eps"], list) or len(p["eps"]) < 2:
            raise ConfigInvalid("sweep-eps needs a list of at least two eps values")
        for e in p["eps"]:
            positive("eps", e)
    if cfg.kind in ("evolve", "sweep-eps"):
        positive("ammeter", p["ammeter"])
        if p["kind"] not in ("position", "dilation"):
            raise ConfigInvalid("kind must be position or dilation")
    if cfg.kind == "sweep-ammeter":
        for a in p["ammeters"]:
            positive("ammeter", a)
        for k in p["kinds"]:
            if k not in ("position", "dilation"):
                raise ConfigInvalid(f"unknown ammeter kind {k!r}")
    if cfg.kind == "lab" and p["check"] not in ("hs_norm", "trace", "pull_through", "mourre", "mourre_pump"):
        raise ConfigInvalid(f"unknown lab check {p['check']!r}")
    if cfg.kind == "compare" and (not p["bpt"] or not p["dynamics"]):
        raise ConfigInvalid("compare needs params.bpt and params.dynamics")
    if "mu" in p:
        try:
            lead_mode(p["mu"])
        except AdiapumpError as exc:
            raise ConfigInvalid(str(exc)) from exc


def load_config(path, kind: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a run config, or a bare model file combined with ``kind`` and ``overrides``."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
    if isinstance(d, dict) and "n_leads" in d:
        if kind is None:
            raise ConfigInvalid("a model file needs a subcommand")
        d = {"kind": kind, "model": d, "params": overrides or {}}
        return RunConfig.from_dict(d, path.parent)
    if isinstance(d, dict) and kind is not None and d.get("kind") != kind:
        raise ConfigInvalid(f"config kind {d.get('kind')!r} does not match subcommand {kind!r}")
    if overrides and isinstance(d, dict):
        d = dict(d)
        d["params"] = {**(d.get("params") or {}), **overrides}
    return RunConfig.from_dict(d, path.parent)


def _canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(_canon_json(cfg.canonical()).encode()).hexdigest()


def model_hash(model_dict: dict) -> str:
    return hashlib.sha256(_canon_json(model_dict).encode()).hexdigest()


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("ADIAPUMP_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _jsonable(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


# ------------------------------------------------------------------ reports


@dataclass
class ConvergenceReport:
    """Rows of dynamics-vs-BPT comparisons plus named verdicts."""

    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def columns(self, n_leads: int) -> list[str]:
        cols = ["eps", "a"]
        cols += [f"Q_dyn_{j}" for j in range(n_leads)]
        cols += [f"Q_bpt_{j}" for j in range(n_leads)]
        cols += [f"abs_err_{j}" for j in range(n_leads)]
        cols += [f"rel_err_{j}" for j in range(n_leads)]
        return cols + ["max_rel_err"]

    def table(self) -> list[list]:
        out = []
        for r in self.rows:
            out.append([r["eps"], r["a"], *r["Q_dyn"], *r["Q_bpt"], *r["abs_err"], *r["rel_err"], r["max_rel_err"]])
        return out


def _row(eps, a, q_dyn, q_bpt):
    q_dyn, q_bpt = np.asarray(q_dyn, float), np.asarray(q_bpt, float)
    ab = np.abs(q_dyn - q_bpt)
    scale = max(float(np.max(np.abs(q_bpt))), 1e-300)
    rel = ab / scale
    return {"eps": float(eps), "a": float(a), "Q_dyn": q_dyn.tolist(), "Q_bpt": q_bpt.tolist(),
            "abs_err": ab.tolist(), "rel_err": rel.tolist(), "max_rel_err": float(rel.max())}


@dataclass
class RunOutput:
    """Files to write (name -> text), verdicts and timing information."""

    files: dict
    verdicts: dict
    timings: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def _stamp(cfg_hash: str) -> str:
    return f"# adiapump {__version__} config_sha256={cfg_hash}\n"


def _csv_text(cfg_hash: str, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(_stamp(cfg_hash))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json_text(cfg_hash: str, payload: dict) -> str:
    body = {"tool_version": __version__, "config_sha256": cfg_hash, **payload}
    return json.dumps(body, sort_keys=True, indent=2, default=_jsonable) + "\n"


def write_output(out: RunOutput, directory) -> list[Path]:
    """Write data files and ``timings.json``; files are written only after a run completes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in sorted(out.files.items()):
        p = d / name
        p.write_text(text)
        written.append(p)
    p = d / "timings.json"
    p.write_text(json.dumps(out.timings, sort_keys=True, indent=2) + "\n")
    written.append(p)
    return written


# ------------------------------------------------------------------- kinds


def _model(cfg):
    return model_from_dict(cfg.model)


def _lead_labels(model):
    return [f"lead{j}" for j in range(model.n_leads)]


def _s_values(spec):
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


def _run_smatrix(cfg, h, deadline):
    model = _model(cfg)
    n = model.n_leads
    rows = []
    worst_u, worst_r = 0.0, 0.0
    for s in _s_values(cfg.params["s"]):
        for E in cfg.params["energies"]:
            S = scattering_matrix(model, s, E, cfg.params["reference"])
            G = scattering_matrix_gf(model, s, E, cfg.params["reference"])
            u = S.unitarity_residual()
            worst_u = max(worst_u, u)
            worst_r = max(worst_r, float(np.max(np.abs(S.S - G.S))))
            flat = []
            for j in range(n):
                for i in range(n):
                    flat += [S.S[j, i].real, S.S[j, i].imag]
            rows.append([float(s), float(E), S.mode.k, *flat, u])
    header = ["s", "E", "k"]
    for j in range(n):
        for i in range(n):
            header += [f"re_S{j}{i}", f"im_S{j}{i}"]
    header.append("unitarity_residual")
    verdicts = {"unitarity": worst_u <= cfg.tolerances["unitarity"],
                "route_agreement": worst_r <= cfg.tolerances["route_agreement"]}
    summary = {"kind": "smatrix", "max_unitarity_residual": worst_u,
               "max_route_difference": worst_r, "verdicts": verdicts}
    return {"smatrix.csv": _csv_text(h, header, rows), "summary.json": _json_text(h, summary)}, verdicts, {}


def _bpt_core(model, mu, n_epochs):
    s = np.linspace(0.0, model.path.end, int(n_epochs))
    cc = cycle_charge(model, SpectralDensity.fermi_sea(mu), s)
    w = total_charge_winding(model, mu, s)
    return s, cc, w


def _run_bpt(cfg, h, deadline):
    model = _model(cfg)
    mu = float(cfg.params["mu"])
    s, cc, w = _bpt_core(model, mu, cfg.params["n_epochs"])
    n = model.n_leads
    rows = [[float(si), *map(float, r)] for si, r in zip(s, cc.rate)]
    verdicts = {"winding_residual": w.residual <= cfg.tolerances["winding_residual"]}
    summary = {
        "kind": "bpt", "model_sha256": model_hash(cfg.model), "mu": mu,
        "lead_labels": _lead_labels(model), "Q": cc.Q.tolist(), "grid_error": cc.error_estimate,
        "winding": w.winding, "total_charge": w.total_charge,
        "residuals": {"winding": w.residual, "grid_halving": cc.error_estimate},
        "verdicts": verdicts,
    }
    header = ["s"] + [f"dQ{j}_ds" for j in range(n)]
    return {"bpt.csv": _csv_text(h, header, rows), "summary.json": _json_text(h, summary)}, verdicts, {}


def _evolve_task(model_dict, eps, ammeters, kinds, mu, width, dt, lead_length, filtered,
                 measure_dt, tail_extra, deadline):
    """One propagation; module level so it can run in a worker process."""
    model = model_from_dict(model_dict)
    amax = max(ammeters)
    plan = make_plan(model, eps, amax, mu=mu, width=width, dt=dt, lead_length=lead_length,
                     measure_dt=measure_dt, tail_extra=tail_extra)
    ams = [Ammeter(float(a), k, filtered) for a in ammeters for k in kinds]
    t0 = time.perf_counter()
    res = measure_pumped_charge(model.with_lead_length(plan.lead_length), SpectralDensity.fermi_sea(mu),
                                plan, ams, width=width, deadline=deadline)
    return res, time.perf_counter() - t0


def _run_evolve(cfg, h, deadline):
    p = cfg.params
    model = _model(cfg)
    res, wall = _evolve_task(cfg.model, float(p["eps"]), [float(p["ammeter"])], [p["kind"]], float(p["mu"]),
                             float(p["width"]), float(p["dt"]), p["lead_length"], bool(p["filter"]),
                             float(p["measure_dt"]), 40.0, deadline)
    (label, tr), = res.traces.items()
    n = model.n_leads
    header = ["s"] + [f"I{j}_raw" for j in range(n)] + [f"I{j}_baseline" for j in range(n)] + \
        [f"I{j}_subtracted" for j in range(n)]
    rows = [[float(s), *map(float, tr.current_raw[i]), *map(float, tr.baseline), *map(float, tr.current[i])]
            for i, s in enumerate(tr.epochs)]
    if tr.counting is not None:
        header += [f"N{j}" for j in range(n)]
        rows = [r + list(map(float, tr.counting[i])) for i, r in enumerate(rows)]
    verdicts = {"norm_drift": res.norm_drift <= cfg.tolerances["norm_drift"]}
    summary = {
        "kind": "evolve", "model_sha256": model_hash(cfg.model), "mu": float(p["mu"]),
        "lead_labels": _lead_labels(model), "eps": float(p["eps"]), "ammeter": float(p["ammeter"]),
        "current_kind": p["kind"], "filter": bool(p["filter"]), "plan": res.plan.as_dict(),
        "n_orbitals": res.n_orbitals, "smearing": res.smearing, "norm_drift": res.norm_drift,
        "Q": tr.charge.tolist(), "Q_quadrature": tr.charge_quadrature.tolist(),
        "tolerances": cfg.tolerances, "verdicts": verdicts,
    }
    return ({"currents.csv": _csv_text(h, header, rows), "summary.json": _json_text(h, summary)},
            verdicts, {"propagation_seconds": wall})


def _map_tasks(fn, arg_list):
    nw = worker_count(len(arg_list))
    if nw == 1:
        return [fn(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=nw) as ex:
        futs = [ex.submit(fn, *a) for a in arg_list]
        return [f.result() for f in futs]


def _run_sweep_eps(cfg, h, deadline):
    p = cfg.params
    model = _model(cfg)
    mu = float(p["mu"])
    s, cc, w = _bpt_core(model, mu, p["n_epochs"])
    eps_list = [float(e) for e in p["eps"]]
    args = [(cfg.model, e, [float(p["ammeter"])], [p["kind"]], mu, float(p["width"]), float(p["dt"]),
             None, False, 0.1, 40.0, deadline) for e in eps_list]
    results = _map_tasks(_evolve_task, args)
    report = ConvergenceReport()
    timings = {}
    for e, (res, wall) in zip(eps_list, results):
        (_, tr), = res.traces.items()
        report.rows.append(_row(e, p["ammeter"], tr.charge, cc.Q))
        timings[f"eps={e:g}"] = wall
    order = sorted(report.rows, key=lambda r: -r["eps"])
    errs = [r["max_rel_err"] for r in order]
    tol = cfg.tolerances["relative_error"]
    qscale = float(np.max(np.abs(cc.Q)))
    dyn_total = float(np.sum(order[-1]["Q_dyn"]))
    report.verdicts = {
        "error_strictly_decreasing": all(b < a for a, b in zip(errs, errs[1:])),
        "smallest_eps_within_tolerance": errs[-1] <= tol,
        "bpt_winding_residual": w.residual <= cfg.tolerances["winding_residual"],
        "dynamics_total_matches_winding": abs(dyn_total + w.winding) <= tol * qscale,
    }
    n = model.n_leads
    summary = {
        "kind": "sweep-eps", "model_sha256": model_hash(cfg.model), "mu": mu,
        "lead_labels": _lead_labels(model), "Q_bpt": cc.Q.tolist(), "winding": w.winding,
        "winding_residual": w.residual, "dynamics_total_charge": dyn_total,
        "rows": report.rows, "verdicts": report.verdicts,
    }
    files = {"convergence.csv": _csv_text(h, report.columns(n), report.table()),
             "report.json": _json_text(h, summary)}
    return files, report.verdicts, timings


def _run_sweep_ammeter(cfg, h, deadline):
    p = cfg.params
    model = _model(cfg)
    mu = float(p["mu"])
    s, cc, _ = _bpt_core(model, mu, 401)
    amm = [float(a) for a in p["ammeters"]]
    res, wall = _evolve_task(cfg.model, float(p["eps"]), amm, list(p["kinds"]), mu, float(p["width"]),
                             float(p["dt"]), None, False, float(p["measure_dt"]), float(p["tail_extra"]),
                             deadline)
    n = model.n_leads
    rows = []
    charges = {}
    for tr in res.traces.values():
        am = tr.ammeter
        charges[(am.kind, am.a)] = tr.charge
        rows.append([am.kind, am.a, *map(float, tr.charge)])
    qscale = float(np.max(np.abs(cc.Q)))
    vals = list(charges.values())
    pair = max(float(np.max(np.abs(x - y))) for x in vals for y in vals) / qscale
    spreads = []
    for a in amm:
        at = [charges[(k, a)] for k in p["kinds"]]
        spreads.append(max(float(np.max(np.abs(x - y))) for x in at for y in at) / qscale)
    pos = [charges[("position", a)] for a in amm] if "position" in p["kinds"] else []
    verdicts = {
        "pairwise_within_tolerance": pair <= cfg.tolerances["ammeter_agreement"],
        "spread_decreasing_in_a": all(b < a for a, b in zip(spreads, spreads[1:])),
    }
    summary = {
        "kind": "sweep-ammeter", "model_sha256": model_hash(cfg.model), "mu": mu,
        "lead_labels": _lead_labels(model), "eps": float(p["eps"]), "Q_bpt": cc.Q.tolist(),
        "max_pairwise_relative": pair, "spread_per_a": dict(zip(map(str, amm), spreads)),
        "position_deviation_from_bpt": [float(np.max(np.abs(q - cc.Q))) / qscale for q in pos],
        "position_a_vs_2a": {str(a): float(np.max(np.abs(charges[("position", a)] - charges[("position", 2 * a)])))
                             / qscale for a in amm if ("position", 2 * a) in charges and ("position", a) in charges},
        "plan": res.plan.as_dict(), "verdicts": verdicts,
    }
    header = ["kind", "a"] + [f"Q{j}" for j in range(n)]
    files = {"ammeters.csv": _csv_text(h, header, rows), "report.json": _json_text(h, summary)}
    return files, verdicts, {"propagation_seconds": wall}


def _lab_function(spec, default):
    spec = spec or default
    name = spec.get("name")
    if name == "E_exp":
        c = float(spec.get("c", 1.0))
        return lambda E: E * np.exp(-c * E)
    if name == "gaussian":
        w = float(spec.get("scale", 2.0))
        return lambda a: np.exp(-a**2 / w)
    if name == "odd_gaussian":
        w = float(spec.get("scale", 2.0))
        return lambda a: a * np.exp(-a**2 / w)
    if name == "constant":
        c = float(spec.get("value", 1.0))
        return lambda a: c + 0.0 * a
    raise ConfigInvalid(f"unknown lab function {name!r}")


_LAB_GRIDS = {"hs_norm": (1000, 0.05), "trace": (1000, 0.05), "pull_through": (400, 0.1),
              "mourre": (2000, 0.1), "mourre_pump": (1, 1.0)}


def _run_lab(cfg, h, deadline):
    p = cfg.params
    check = p["check"]
    N0, h0 = _LAB_GRIDS[check]
    grid = HalfLineGrid(int(p["N"] or N0), float(p["h"] or h0))
    tol = cfg.tolerances
    if check in ("hs_norm", "trace"):
        fn = hs_norm_check if check == "hs_norm" else trace_formula_check
        g = _lab_function(p["g"], {"name": "E_exp"})
        f = _lab_function(p["f"], {"name": "gaussian"})
        rs, trend = refinement_study(fn, grid, int(p["levels"]), g=g, f=f)
        r0 = rs[0]
        verdicts = {"error_within_tolerance": r0.error <= tol["lab_error"], "refinement_trend": trend}
        payload = {"check": check, "lhs": r0.lhs, "rhs": r0.rhs, "error": r0.error,
                   "refinement_trend": trend,
                   "levels": [{"N": r.grid.N, "h": r.grid.h, "lhs": r.lhs, "rhs": r.rhs, "error": r.error}
                              for r in rs]}
    elif check == "pull_through":
        spec = {"scale": 4.0, **p["f"]} if p["f"].get("name") == "gaussian" else p["f"]
        f = _lab_function(spec, {"name": "gaussian", "scale": 4.0})
        rs, trend = refinement_study(pull_through_check, grid, int(p["levels"]), f=f,
                                     key=lambda r: r.residual)
        ratios = [a.residual / b.residual for a, b in zip(rs, rs[1:]) if b.residual > 0]
        verdicts = {"refinement_trend": trend or all(r.residual == 0 for r in rs),
                    "ratio_at_least": all(r >= tol["pull_ratio"] for r in ratios)}
        payload = {"check": check, "lhs": None, "rhs": None, "error": rs[0].residual,
                   "refinement_trend": trend, "ratios": ratios,
                   "levels": [{"N": r.grid.N, "h": r.grid.h, "residual": r.residual,
                               "relative": r.relative, "operator_norm": r.operator_norm} for r in rs]}
    elif check == "mourre":
        window = tuple(p["window"] or (1.0, 1.2))
        r = grid_mourre(grid, window)
        verdicts = {"theta_positive": r.theta > 0}
        payload = {"check": check, "lhs": r.theta, "rhs": 2.0 * window[0], "error": abs(r.theta / (2.0 * window[0]) - 1.0),
                   "refinement_trend": None, "dimension": r.dimension, "window": list(window)}
    else:
        window = tuple(p["window"] or (1.8, 2.2))
        model = model_from_dict(cfg.model)
        s = np.linspace(0.0, model.path.end, int(p["n_epochs"]))
        rs = pump_mourre(model, s, window, int(p["lead_length"]))
        th = [r.theta for r in rs]
        verdicts = {"theta_positive_uniformly": min(th) > 0}
        payload = {"check": check, "lhs": min(th), "rhs": 0.0, "error": None, "refinement_trend": None,
                   "window": list(window), "theta": dict(zip(map(repr, map(float, s)), th)),
                   "dimensions": [r.dimension for r in rs]}
    payload["verdicts"] = verdicts
    return {"lab.json": _json_text(h, payload)}, verdicts, {}


def _load_summary(path) -> tuple[dict, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / ("summary.json" if (p / "summary.json").exists() else "report.json")
    try:
        return json.loads(p.read_text()), p.parent
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read {p}: {exc}") from exc


def compare(bpt_output: dict, dynamics_output: dict, tolerance: float = 0.10) -> ConvergenceReport:
    """Cycle-level comparison of a BPT summary with an evolve or sweep summary.

    Raises
    ------
    MismatchedRuns
        If the model hash, Fermi energy or lead labels differ.
    """
    for key in ("model_sha256", "mu", "lead_labels"):
        if bpt_output.get(key) != dynamics_output.get(key):
            raise MismatchedRuns(f"{key} differs: {bpt_output.get(key)!r} vs {dynamics_output.get(key)!r}")
    q_bpt = bpt_output["Q"]
    rep = ConvergenceReport()
    if dynamics_output.get("kind") == "evolve":
        rep.rows.append(_row(dynamics_output["eps"], dynamics_output["ammeter"], dynamics_output["Q"], q_bpt))
    elif dynamics_output.get("kind") == "sweep-eps":
        for r in dynamics_output["rows"]:
            rep.rows.append(_row(r["eps"], r["a"], r["Q_dyn"], q_bpt))
    elif dynamics_output.get("kind") == "bpt":
        rep.rows.append(_row(0.0, 0.0, dynamics_output["Q"], q_bpt))
    else:
        raise MismatchedRuns(f"cannot compare against kind {dynamics_output.get('kind')!r}")
    best = min(rep.rows, key=lambda r: r["eps"])
    rep.verdicts = {"smallest_eps_within_tolerance": best["max_rel_err"] <= tolerance}
    return rep


def _per_epoch(bpt_dir: Path, dyn_dir: Path, dyn: dict, mu: float):
    """Counting charge versus the BPT charge retarded by the ammeter travel time."""
    bcsv, dcsv = bpt_dir / "bpt.csv", dyn_dir / "currents.csv"
    if not (bcsv.exists() and dcsv.exists()):
        return None
    b = np.loadtxt(bcsv, delimiter=",", skiprows=2, ndmin=2)
    d = np.loadtxt(dcsv, delimiter=",", skiprows=2, ndmin=2)
    n = len(dyn["lead_labels"])
    if d.shape[1] < 1 + 4 * n:
        return None
    qb = cumulative_trapezoid(b[:, 1:], b[:, 0], axis=0, initial=0.0)
    delay = dyn["eps"] * dyn["ammeter"] / lead_mode(mu).v
    rows = []
    for r in d:
        s = r[0]
        ret = np.array([np.interp(s - delay, b[:, 0], qb[:, j]) for j in range(n)])
        cnt = r[1 + 3 * n: 1 + 4 * n]
        rows.append([s, *cnt, *ret, *(cnt - ret)])
    header = ["s"] + [f"N{j}_dyn" for j in range(n)] + [f"Q{j}_bpt_retarded" for j in range(n)] + \
        [f"diff{j}" for j in range(n)]
    return header, rows


def _run_compare(cfg, h, deadline):
    bsum, bdir = _load_summary(cfg.base_dir / cfg.params["bpt"])
    dsum, ddir = _load_summary(cfg.base_dir / cfg.params["dynamics"])
    rep = compare(bsum, dsum, cfg.tolerances["relative_error"])
    n = len(bsum["lead_labels"])
    files = {"comparison.csv": _csv_text(h, rep.columns(n), rep.table()),
             "report.json": _json_text(h, {"kind": "compare", "rows": rep.rows, "verdicts": rep.verdicts})}
    if dsum.get("kind") == "evolve":
        pe = _per_epoch(bdir, ddir, dsum, bsum["mu"])
        if pe is not None:
            files["per_epoch.csv"] = _csv_text(h, *pe)
    return files, rep.verdicts, {}


_RUNNERS = {
    "smatrix": _run_smatrix,
    "bpt": _run_bpt,
    "evolve": _run_evolve,
    "sweep-eps": _run_sweep_eps,
    "sweep-ammeter": _run_sweep_ammeter,
    "lab": _run_lab,
    "compare": _run_compare,
}


def run(cfg: RunConfig) -> RunOutput:
    """Execute a configuration and return its files and verdicts (nothing is written).

    Raises
    ------
    BudgetExceeded
        When the wall-time budget runs out; no output is produced.
    """
    t0 = time.perf_counter()
    deadline = time.monotonic() + cfg.budget_seconds
    h = config_hash(cfg)
    files, verdicts, timings = _RUNNERS[cfg.kind](cfg, h, deadline)
    timings = {**timings, "total_seconds": time.perf_counter() - t0, "config_sha256": h}
    return RunOutput(files, {k: bool(v) for k, v in verdicts.items()}, timings)

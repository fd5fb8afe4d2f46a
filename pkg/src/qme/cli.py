"""Command-line front end: ``qme run <config.json>`` and ``qme validate <config.json>``."""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bath import QuadSettings
from .dynamics import evolve, magnetization, positivity_watch, trajectory_to_csv
from .errors import ConvergenceError, QMEError, ValidationError
from .models import all_down_state, build_model, model_spec_from_dict
from .opcore import DensityMatrix, gibbs_state, is_degenerate
from .steady import compare_states, mfg_second_order, null_space_steady, perturbative_state
from .superop import QME_FAMILIES, assemble, build_family, build_free, combine

TASKS = ("steady", "perturbative", "mfg", "compare", "sweep_epsilon", "sweep_beta", "evolve")
PERTURBATIVE_TASKS = ("perturbative", "mfg", "compare")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS = {
    "qme": {"family": "ule", "include_lamb": True, "epsilon": 0.1, "route": "contour"},
    "task": "steady",
    "quad": {},
    "output": {"path": ".", "format": "csv"},
    "seed": 0,
    "eps2_grid": [0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
    "beta_grid": None,
    "evolve": {"t_end": 10.0, "dt": None, "snap_every": 10, "initial": "excited",
               "include_states": False},
    "compare": {"families": list(QME_FAMILIES), "against": "mfg"},
}
_TOP_KEYS = set(DEFAULTS) | {"model"}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(out.get(k), dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(raw: dict, task: str | None = None, epsilon: float | None = None) -> dict:
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in raw:
        raise ValidationError("model required")
    cfg = _merge(DEFAULTS, raw)
    if task is not None:
        cfg["task"] = task
    if epsilon is not None:
        cfg["qme"]["epsilon"] = float(epsilon)
    return cfg


def _quad(cfg) -> QuadSettings:
    names = {f.name for f in fields(QuadSettings)}
    bad = set(cfg["quad"]) - names
    if bad:
        raise ValidationError(f"unknown quad settings: {sorted(bad)}")
    return QuadSettings(**cfg["quad"])


def _families(cfg) -> list[str]:
    fam = cfg["qme"]["family"]
    fams = [fam] if isinstance(fam, str) else list(fam)
    for f in fams:
        if f not in QME_FAMILIES:
            raise ValidationError(f"qme family {f!r} not in {QME_FAMILIES}")
    return fams


def validate(raw) -> list[str]:
    """Schema and physics diagnostics; an empty list means the config is runnable."""
    diags: list[str] = []
    if not isinstance(raw, dict):
        return ["config must be a JSON object"]
    model = raw.get("model")
    if not isinstance(model, dict):
        return ["model required"]
    if "beta" not in model:
        diags.append("beta required")
    elif not isinstance(model["beta"], (int, float)) or not model["beta"] > 0:
        diags.append("beta must be positive")
    task = raw.get("task", DEFAULTS["task"])
    if task not in TASKS:
        diags.append(f"task must be one of {TASKS}")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        diags.append(f"unknown config keys: {sorted(unknown)}")
    if diags:
        return diags
    try:
        cfg = resolve_config(raw)
        _families(cfg)
        quad = _quad(cfg)
        built = build_model(model_spec_from_dict(model), quad)
    except (QMEError, TypeError) as exc:
        return [str(exc)]
    if task in PERTURBATIVE_TASKS:
        tol = built.bohr[0].bin_tol
        if is_degenerate(built.basis, tol):
            diags.append("degenerate spectrum: use steady/evolve")
    return diags


# numeric formatting


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("QME_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Ordered parallel map capped by QME_THREADS."""
    items = list(items)
    n = _workers()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _matrix_rows(tag, beta, m):
    d = m.shape[0]
    return [[tag, beta, n, k, m[n, k].real, m[n, k].imag] for n in range(d) for k in range(d)]


def _build(cfg, beta=None):
    mdict = dict(cfg["model"])
    if beta is not None:
        mdict["beta"] = float(beta)
    return build_model(model_spec_from_dict(mdict), _quad(cfg))


# tasks


def _task_steady(cfg):
    built = _build(cfg)
    basis, bohr, bm = built
    eps = cfg["qme"]["epsilon"]
    rows, meta = [], {}
    rho_g = built.gibbs()
    for fam in _families(cfg):
        L = assemble(basis, bohr, bm, fam, eps, cfg["qme"]["include_lamb"])
        ss = null_space_steady(L)
        cmp = compare_states(ss, rho_g)
        meta[fam] = {"residual": ss.residual, "trace_distance_to_gibbs": cmp.trace_distance}
        for n in range(basis.dim):
            rows.append([fam, n, basis.energies[n], ss.populations[n], rho_g.populations[n],
                         cmp.population_rel_diff[n]])
    header = ["family", "n", "energy", "rho_nn", "gibbs_nn", "delta_rho_nn"]
    return header, rows, meta


def _task_perturbative(cfg):
    betas = cfg["beta_grid"] or [cfg["model"]["beta"]]
    fams = _families(cfg)

    def one(beta):
        basis, bohr, bm = _build(cfg, beta)
        return [(f, perturbative_state(f, basis, bohr, bm, cfg["qme"]["include_lamb"])) for f in fams]

    results = _pmap(one, betas)
    two_level = results[0][0][1].rho2.shape[0] == 2
    rows = []
    for beta, res in zip(betas, results):
        for fam, st in res:
            r = st.rho2
            if two_level:
                # index 1 is the upper level
                rows.append([fam, beta, r[1, 0].real, r[1, 0].imag, r[1, 1].real])
            else:
                rows.extend(_matrix_rows(fam, beta, r))
    if two_level:
        header = ["family", "beta", "re_rho2_pm", "im_rho2_pm", "rho2_pp"]
    else:
        header = ["family", "beta", "n", "m", "re_rho2", "im_rho2"]
    return header, rows, {}


def _task_mfg(cfg):
    betas = cfg["beta_grid"] or [cfg["model"]["beta"]]
    route = cfg["qme"]["route"]

    def one(beta):
        basis, bohr, bm = _build(cfg, beta)
        return mfg_second_order(basis, bohr, bm, route=route)

    rows = []
    for beta, st in zip(betas, _pmap(one, betas)):
        rows.extend(_matrix_rows(route, beta, st.rho2))
    return ["route", "beta", "n", "m", "re_rho2", "im_rho2"], rows, {}


def _task_compare(cfg):
    """Table of each family's zeroth and second order against MFG or Gibbs."""
    built = _build(cfg)
    basis, bohr, bm = built
    against = cfg["compare"]["against"]
    if against not in ("mfg", "gibbs"):
        raise ValidationError("compare.against must be 'mfg' or 'gibbs'")
    ref = mfg_second_order(basis, bohr, bm) if against == "mfg" else None
    rho_g = built.gibbs()
    rows = []
    for fam in cfg["compare"]["families"]:
        if fam not in QME_FAMILIES:
            raise ValidationError(f"unknown family {fam!r}")
        st = perturbative_state(fam, basis, bohr, bm, cfg["qme"]["include_lamb"])
        r2 = st.rho2
        ref2 = ref.rho2 if ref is not None else np.zeros_like(r2)
        off = ~np.eye(basis.dim, dtype=bool)
        d0 = compare_states(st.rho0, rho_g).trace_distance
        dcoh = float(np.max(np.abs(r2 - ref2)[off])) if basis.dim > 1 else 0.0
        dpop = float(np.max(np.abs(np.diag(r2 - ref2)))) if st.populations else float("nan")
        rows.append([fam, d0, dcoh, dpop])
    return ["family", "rho0_trace_distance_to_gibbs", "rho2_coherence_max_diff",
            "rho2_population_max_diff"], rows, {"against": against}


def _task_sweep_epsilon(cfg):
    basis, bohr, bm = _build(cfg)
    fam = _families(cfg)[0]
    free = build_free(basis)
    parts = build_family(basis, bohr, bm, fam, cfg["qme"]["include_lamb"])
    rho_g = gibbs_state(basis, bm.beta)
    grid = [float(x) for x in cfg["eps2_grid"]]

    def one(e2):
        ss = null_space_steady(combine(free, parts, np.sqrt(e2)))
        c = compare_states(ss, rho_g)
        return e2, float(np.max(np.abs(c.population_rel_diff))), c.trace_distance, ss.residual

    out = _pmap(one, grid)
    rows = [[e2, dmax, td, res] for e2, dmax, td, res in out]
    xs = np.log([r[0] for r in out[:4]])
    ys = np.log([r[1] for r in out[:4]])
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(out) >= 2 else float("nan")
    return (["eps2", "max_delta_rho_nn", "trace_distance", "residual"], rows,
            {"family": fam, "loglog_slope_first4": slope})


def _task_sweep_beta(cfg):
    grid = cfg["beta_grid"]
    if not grid:
        raise ValidationError("sweep_beta needs beta_grid")
    fam = _families(cfg)[0]
    eps = cfg["qme"]["epsilon"]

    def one(beta):
        built = _build(cfg, beta)
        basis, bohr, bm = built
        ss = null_space_steady(assemble(basis, bohr, bm, fam, eps, cfg["qme"]["include_lamb"]))
        c = compare_states(ss, built.gibbs())
        return beta, c.trace_distance, float(np.max(np.abs(c.population_rel_diff)))

    rows = [list(r) for r in _pmap(one, sorted(grid, reverse=True))]
    return ["beta", "trace_distance_to_gibbs", "max_delta_rho_nn"], rows, {"family": fam}


def _initial_state(name, built):
    d = built.basis.dim
    if name == "excited":
        m = np.zeros((d, d), dtype=complex)
        m[-1, -1] = 1.0
        return DensityMatrix(m)
    if name == "ground":
        m = np.zeros((d, d), dtype=complex)
        m[0, 0] = 1.0
        return DensityMatrix(m)
    if name == "maximally_mixed":
        return DensityMatrix(np.eye(d, dtype=complex) / d)
    if name == "gibbs":
        return built.gibbs()
    if name == "all_down":
        n = built.metadata.get("n_sites")
        if n is None:
            raise ValidationError("all_down initial state needs a spin chain")
        return DensityMatrix(built.to_energy(all_down_state(n).matrix))
    raise ValidationError(f"unknown initial state {name!r}")


def _task_evolve(cfg, outdir: Path):
    built = _build(cfg)
    basis, bohr, bm = built
    fam = _families(cfg)[0]
    ev = cfg["evolve"]
    L = assemble(basis, bohr, bm, fam, cfg["qme"]["epsilon"], cfg["qme"]["include_lamb"])
    dt = ev["dt"]
    if dt is None:
        dt = 0.05 / float(np.max(np.abs(L.matrix)))
    traj = evolve(L, _initial_state(ev["initial"], built), float(ev["t_end"]), float(dt),
                  int(ev["snap_every"]))
    pos = positivity_watch(traj)
    header = ["t", "trace_dev", "herm_dev", "min_eig"]
    rows = [[t, m.trace_dev, m.herm_dev, m.min_eig] for t, m in zip(traj.times, traj.monitors)]
    meta = {"family": fam, "dt": dt, "converged_at": traj.converged_at,
            "positivity_violated": pos.violated, "first_violation": pos.first_time,
            "min_eigenvalue": pos.min_eigenvalue}
    n = built.metadata.get("n_sites")
    if n is not None:
        mags = [magnetization(traj, i, n, basis) for i in range(n)]
        header += [f"m_{i}" for i in range(n)]
        rows = [r + [m[k] for m in mags] for k, r in enumerate(rows)]
    if ev["include_states"]:
        trajectory_to_csv(traj, outdir / "evolve_states.csv", include_states=True)
    return header, rows, meta


def run(raw: dict, outdir=None, task: str | None = None, epsilon: float | None = None) -> int:
    """Execute one config; returns the process exit code."""
    try:
        cfg = resolve_config(raw, task, epsilon)
        if cfg["task"] not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}")
        diags = validate(dict(raw, task=cfg["task"]))
        if diags:
            raise ValidationError("; ".join(diags))
        out = Path(outdir if outdir is not None else cfg["output"]["path"])
        out.mkdir(parents=True, exist_ok=True)
        np.random.seed(int(cfg["seed"]))
        t = cfg["task"]
        if t == "evolve":
            header, rows, info = _task_evolve(cfg, out)
        else:
            header, rows, info = {
                "steady": _task_steady,
                "perturbative": _task_perturbative,
                "mfg": _task_mfg,
                "compare": _task_compare,
                "sweep_epsilon": _task_sweep_epsilon,
                "sweep_beta": _task_sweep_beta,
            }[t](cfg)
        meta = {"config": cfg, "version": __version__, "results": info,
                "quadrature": {"rtol": _quad(cfg).rtol}}
        meta = _jsonable(meta)
        fmt = cfg["output"]["format"]
        if fmt == "csv":
            (out / f"{t}.csv").write_text(_csv_text(header, rows))
            (out / f"{t}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        elif fmt == "json":
            doc = {"metadata": meta, "columns": header, "rows": _jsonable(rows)}
            (out / f"{t}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        else:
            raise ValidationError("output.format must be 'csv' or 'json'")
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, QMEError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _load(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="qme", description="Quantum master equation steady states")
    sub = ap.add_subparsers(dest="cmd", required=True)
    pr = sub.add_parser("run", help="run a config")
    pr.add_argument("config")
    pr.add_argument("--out", default=None)
    pr.add_argument("--task", choices=TASKS, default=None)
    pr.add_argument("--epsilon", type=float, default=None)
    pv = sub.add_parser("validate", help="check a config")
    pv.add_argument("config")
    args = ap.parse_args(argv)
    try:
        raw = _load(args.config)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.cmd == "validate":
        diags = validate(raw)
        for d in diags:
            print(d)
        return EXIT_OK if not diags else EXIT_VALIDATION
    return run(raw, args.out, args.task, args.epsilon)


if __name__ == "__main__":
    sys.exit(main())

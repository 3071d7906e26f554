"""Task orchestration for a configured run: solves, audits, CSVs, manifest."""
from __future__ import annotations

import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import RunConfig
from .drbsde import RegressionBasis, monotonicity_audit, solve_drbsde
from .forward_sde import TimeGrid, simulate_uncontrolled, write_paths_csv
from .game import (BarrierStop, ConstantControl, Deviation, FixedTimeStop, NeverStop,
                   RandomControl, default_deviations, extract_strategy, saddle_audit)
from .io import file_digest, write_csv
from .kernels import BACKEND
from .model import validate_model
from .pde import (SpaceGrid, compare_pde_probabilistic, solve_double_obstacle_pde,
                  viscosity_residual_check)

MANIFEST_NAME = "manifest.yaml"


@dataclass
class RunManifest:
    config: dict
    version: str
    backend: str
    threads: int
    tasks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    total_seconds: float = 0.0

    @property
    def failed(self) -> bool:
        return any(t["status"] != "passed" for t in self.tasks)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def task(self, name: str) -> dict:
        return next(t for t in self.tasks if t["task"] == name)

    def to_dict(self) -> dict:
        return {
            "artifact": "drgame", "version": self.version, "backend": self.backend,
            "threads": self.threads, "config": self.config, "tasks": self.tasks,
            "outputs": self.outputs, "total_seconds": self.total_seconds,
            "exit_code": self.exit_code,
        }


def _plain(obj):
    """Convert numpy scalars/arrays and infinities into YAML-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


class _Context:
    """Lazily built shared state so each task can pull in what it depends on."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int, dump_paths: bool):
        self.cfg, self.out, self.threads, self.dump_paths = cfg, out, threads, dump_paths
        self.model = cfg.model.build()
        self.grid = TimeGrid(cfg.solver.steps, self.model.horizon)
        b = cfg.solver.basis
        self.basis = RegressionBasis(b.family, b.degree, b.bins, b.local_linear) if b else None
        self.written: list[Path] = []
        self._bundle = self._vp = self._surface = self._coarse = None

    def emit(self, name, header, rows):
        self.written.append(write_csv(self.out / name, header, rows))

    @property
    def bundle(self):
        if self._bundle is None:
            self._bundle = simulate_uncontrolled(self.model, self.grid, self.cfg.solver.paths,
                                                 self.cfg.seed, threads=self.threads)
            if self.dump_paths:
                path = self.out / "paths.csv"
                write_paths_csv(self._bundle, path)
                self.written.append(path)
        return self._bundle

    @property
    def vp(self):
        if self._vp is None:
            self._vp = solve_drbsde(self.model, self.bundle, self.basis, self.cfg.solver.generator)
            self._write_bsde(self._vp)
        return self._vp

    def _write_bsde(self, vp):
        t = vp.grid.nodes
        zn = np.linalg.norm(vp.Z, axis=2)
        rows = [(i, t[i], vp.Y[i].mean(),
                 zn[i].mean() if i < vp.grid.steps else 0.0,
                 vp.dKplus[i].mean() if i < vp.grid.steps else 0.0,
                 vp.dKminus[i].mean() if i < vp.grid.steps else 0.0)
                for i in range(vp.grid.steps + 1)]
        self.emit("bsde_summary.csv",
                  ["step", "t", "mean_y", "mean_abs_z", "mean_dk_plus", "mean_dk_minus"], rows)
        if self.dump_paths:
            M, d = vp.Y.shape[1], vp.Z.shape[2]
            self.emit("bsde_paths.csv",
                      ["path_id", "step", "y", *[f"z{k}" for k in range(d)], "dk_plus", "dk_minus"],
                      ((m, i, vp.Y[i, m], *vp.Z[i, m], vp.dKplus[i, m], vp.dKminus[i, m])
                       for m in range(M) for i in range(vp.grid.steps)))

    def _pde_solve(self, sgrid):
        return solve_double_obstacle_pde(self.model, self.grid, sgrid)

    @property
    def sgrid(self):
        p = self.cfg.pde
        return SpaceGrid(tuple(p.lower), tuple(p.upper), tuple(p.nodes))

    @property
    def surface(self):
        if self._surface is None:
            self._surface = self._pde_solve(self.sgrid)
            s = self._surface
            pts = s.sgrid.points
            d = pts.shape[1]
            self.emit("pde_surface.csv", ["t", *[f"x{k}" for k in range(d)], "u", "contact"],
                      ((s.tgrid.nodes[i], *pts[j], s.u[i].reshape(-1)[j],
                        int(s.contact[i].reshape(-1)[j]))
                       for i in range(s.tgrid.steps + 1) for j in range(pts.shape[0])))
        return self._surface

    @property
    def coarse(self):
        if self._coarse is None and self.cfg.pde.coarse_check:
            self._coarse = self._pde_solve(self.sgrid.halved())
        return self._coarse


def _task_validate(ctx: _Context) -> tuple[str, dict]:
    v = ctx.cfg.validate_
    rep = validate_model(ctx.model, v.probes, ctx.cfg.seed, radius=v.radius)
    entries = rep.to_dict()["entries"]
    rows = [(k, e["violation"], e["tolerance"], e["ok"]) for k, e in entries.items()]
    ctx.emit("validation.csv", ["check", "violation", "tolerance", "ok"], rows)
    head = {"result": "passed" if rep.passed else "failed", "flagged": rep.flagged}
    return ("passed" if rep.passed else "flagged"), head


def _task_bsde(ctx):
    vp = ctx.vp
    inv = vp.invariants()
    head = {"y0": vp.y0, "std_error": vp.std_error, "z0": vp.z0, "generator": vp.generator.tag,
            "invariants_ok": inv["ok"]}
    return ("passed" if inv["ok"] else "flagged"), head


def _task_pde(ctx):
    s = ctx.surface
    rep = viscosity_residual_check(ctx.model, s, ctx.cfg.pde.residual_constant)
    c = rep.counts
    ctx.emit("pde_residuals.csv", ["category", "nodes", "worst", "tolerance"], [
        ("interior", c["interior"], rep.interior_max, rep.tolerance),
        ("lower_gap", c["lower"], rep.lower_gap_max, 1e-12),
        ("lower_sign", c["lower"], rep.lower_sign_min, -rep.tolerance),
        ("upper_gap", c["upper"], rep.upper_gap_max, 1e-12),
        ("upper_residual", c["upper"], rep.upper_residual_max, rep.tolerance),
    ])
    x0 = ctx.model.initial_state
    head = {"u0": float(s.value(0, x0)[0]), "substeps": int(np.sum(s.substeps)),
            "residual_ok": rep.ok, "fitted_constant": rep.fitted_constant}
    # the residual audit is reported but only the cross-check gates the run
    return "passed", head


def _task_cross(ctx):
    cc = ctx.cfg.cross_check
    rep = compare_pde_probabilistic(ctx.surface, ctx.vp, ctx.model, ctx.bundle,
                                    probe_steps=cc.probe_steps, coarse_surface=ctx.coarse,
                                    bias_allowance=cc.bias_allowance)
    rows = [("x0", 0, 0.0, rep.gap, rep.tolerance, rep.ok)]
    rows += [("probe", p["step"], p["t"], p["max_gap"], p["tolerance"], p["ok"])
             for p in rep.probes]
    ctx.emit("crosscheck.csv", ["kind", "step", "t", "gap", "tolerance", "ok"], rows)
    ok = rep.ok and all(p["ok"] for p in rep.probes)
    head = {"u0": rep.u0, "y0": rep.y0, "gap": rep.gap, "tolerance": rep.tolerance,
            "grid_error": rep.grid_error, "target": cc.target, "target_met": rep.gap <= cc.target}
    return ("passed" if ok else "flagged"), head


def _deviations(ctx, eps):
    cfg = ctx.cfg.game
    if cfg.deviations is None:
        return default_deviations(ctx.model, ctx.grid, eps, seed=ctx.cfg.seed + 7)
    out = []
    for d in cfg.deviations:
        control = stop = None
        if d.control != "saddle":
            if hasattr(d.control, "constant"):
                control = ConstantControl(d.control.constant)
            else:
                grid = ctx.model.control_grid_a if d.player == "min" else ctx.model.control_grid_b
                control = RandomControl(grid.shape[0], d.control.random)
        if d.stop == "never":
            stop = NeverStop()
        elif hasattr(d.stop, "fixed_step"):
            stop = FixedTimeStop(d.stop.fixed_step)
        elif hasattr(d.stop, "band_shift"):
            stop = BarrierStop("upper" if d.player == "min" else "lower", eps + d.stop.band_shift)
        out.append(Deviation(d.player, control, stop, d.label))
    return out


def _task_saddle(ctx):
    g = ctx.cfg.game
    vp = ctx.vp
    source = ctx.surface if g.value_source == "pde" else vp
    strat = extract_strategy(ctx.model, source, g.epsilon_stop)
    devs = _deviations(ctx, strat.epsilon_stop)
    rep = saddle_audit(ctx.model, strat, devs, ctx.grid, g.paths or ctx.cfg.solver.paths,
                       ctx.cfg.seed + 1, vp.y0, vp.std_error, g.allowance, g.n_se, ctx.threads)
    rows = [("saddle", rep.saddle.mean, rep.saddle.std_error, not rep.saddle_ok)]
    rows += [(r.label, r.mean, r.std_error, r.violation) for r in rep.rows]
    ctx.emit("saddle_audit.csv", ["label", "mean", "std_error", "violation"], rows)
    head = rep.to_dict()
    head["epsilon_stop"] = strat.epsilon_stop
    head["summary"] = (f"J(saddle)={rep.saddle.mean:.6f} vs Y0={vp.y0:.6f}; "
                       f"{len(rep.violations)} of {len(rep.rows)} deviations flagged")
    return ("passed" if rep.ok else "flagged"), head


def _task_truncation(ctx):
    tr = ctx.cfg.solver.truncation
    rep = monotonicity_audit(ctx.model, ctx.bundle, ctx.basis, tr.n, tr.m, tr.tolerance)
    rows = [(n, m, rep.y0[a, b]) for a, n in enumerate(rep.n_list) for b, m in enumerate(rep.m_list)]
    rows.append(("phi", "phi", rep.y0_phi))
    ctx.emit("truncation_audit.csv", ["n", "m", "y0"], rows)
    return ("passed" if rep.ok else "flagged"), rep.to_dict()


_TASKS = {
    "validate": _task_validate,
    "solve-bsde": _task_bsde,
    "solve-pde": _task_pde,
    "cross-check": _task_cross,
    "saddle-audit": _task_saddle,
    "truncation-audit": _task_truncation,
}


def run(config: RunConfig, out_dir=None, threads: int = 1, dump_paths: bool = False) -> RunManifest:
    """Execute the configured tasks in order and write CSVs plus the manifest."""
    out = Path(out_dir or config.output_dir or "drgame-out")
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    manifest = RunManifest(config.echo(), __version__, BACKEND, int(threads))
    try:
        ctx = _Context(config, out, threads, dump_paths)
    except Exception as exc:
        ctx = None
        manifest.tasks.append({"task": "setup", "status": "error", "error": str(exc)})
    for name in config.tasks if ctx else []:
        t0 = time.perf_counter()
        entry = {"task": name}
        try:
            status, head = _TASKS[name](ctx)
            entry.update(status=status, headline=_plain(head))
        except Exception as exc:
            entry.update(status="error", error=f"{type(exc).__name__}: {exc}",
                         trace=traceback.format_exc(limit=3))
        entry["seconds"] = time.perf_counter() - t0
        manifest.tasks.append(entry)
    if ctx:
        seen = set()
        for p in ctx.written:
            if p.name not in seen:
                seen.add(p.name)
                manifest.outputs.append({"file": p.name, "sha256": file_digest(p)})
    manifest.total_seconds = time.perf_counter() - start
    with open(out / MANIFEST_NAME, "w") as fh:
        yaml.safe_dump(_plain(manifest.to_dict()), fh, sort_keys=False)
    return manifest

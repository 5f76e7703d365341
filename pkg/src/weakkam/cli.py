"""Experiment runner: ``weakkam run <config.json> [--out DIR] [--seed N] [--quiet]``.

A config selects one experiment kind (``cell``, ``aim``, ``lower-fuzz``,
``mather``, ``triangle``). Every run writes its artifacts, a ``report.json``
with per-assertion pass/fail and a ``manifest.json`` with content hashes.
Nothing is written when the config is invalid.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aiming import AimingSchedule, Partition, quadrature_budget, simulate, upper_estimate_check
from .cell import solve_cell, viscosity_residual
from .errors import ConvergenceFailure, InvalidArgument, PreconditionError, PropertyViolation
from .lagrangian import LagrangianSpec
from .lower_bound import GENERATOR_KINDS, anneal_adversary, fuzz, lower_margin
from .mather import (HolonomyBasis, build_lp, lp_report_json, lp_velocity_box, occupation_measure,
                     solve_lp)
from .torus import GridSpec

__all__ = ["ExperimentConfig", "UsageError", "run", "main"]

logger = logging.getLogger("weakkam")

KINDS = ("cell", "aim", "lower-fuzz", "mather", "triangle")
STOCHASTIC = ("lower-fuzz",)


class UsageError(Exception):
    """Invalid command line or config."""


def _section(raw: dict, key: str, defaults: dict) -> dict:
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise UsageError(f"'{key}' must be an object")
    unknown = set(sec) - set(defaults)
    if unknown:
        raise UsageError(f"unknown keys in '{key}': {sorted(unknown)}")
    return defaults | sec


@dataclass
class ExperimentConfig:
    kind: str
    spec: LagrangianSpec
    grid: GridSpec
    seed: int | None
    cell: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    fuzz: dict = field(default_factory=dict)
    lp: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, seed_override: int | None = None) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(raw) - {"kind", "lagrangian", "grid", "seed", "cell", "schedule", "fuzz", "lp", "output"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        kind = raw.get("kind")
        if kind not in KINDS:
            raise UsageError(f"kind must be one of {KINDS}, got {kind!r}")
        if "lagrangian" not in raw:
            raise UsageError("config needs a 'lagrangian' object")
        try:
            spec = LagrangianSpec.from_config(raw["lagrangian"])
        except (InvalidArgument, TypeError, ValueError, KeyError) as exc:
            raise UsageError(f"bad lagrangian: {exc}") from exc
        g = _section(raw, "grid", {"d": spec.d, "n": 256})
        if g["d"] != spec.d:
            raise UsageError("grid dimension differs from the lagrangian dimension")
        try:
            grid = GridSpec(int(g["d"]), int(g["n"]))
        except (InvalidArgument, TypeError, ValueError) as exc:
            raise UsageError(f"bad grid: {exc}") from exc
        seed = seed_override if seed_override is not None else raw.get("seed")
        if seed is not None and (isinstance(seed, bool) or not (isinstance(seed, int) and 0 <= seed < 2**64)):
            raise UsageError("seed must be an integer in [0, 2^64)")
        cfg = cls(
            kind, spec, grid, seed,
            cell=_section(raw, "cell", {"tol": 1e-3, "max_iter": 200_000}),
            schedule=_section(raw, "schedule", {"epsilon": 0.1, "r": 50.0, "kappa": None, "fineness": None,
                                                "partition": "uniform", "strict": True, "start": None}),
            fuzz=_section(raw, "fuzz", {"r": 10.0, "samples": 20, "proposals": 10_000, "segments": 64,
                                        "budget_per_unit_r": 1e-3}),
            lp=_section(raw, "lp", {"n": 64, "M": 8, "v_nodes": 129, "v_radius": None}),
            output=_section(raw, "output", {"trajectory_stride": 1}),
            raw=raw,
        )
        cfg._validate()
        return cfg

    def _validate(self):
        s, f, lp = self.schedule, self.fuzz, self.lp
        needs_seed = self.kind in STOCHASTIC or (self.kind in ("aim", "triangle") and s["start"] is None)
        if needs_seed and self.seed is None:
            raise UsageError(f"kind {self.kind!r} needs a seed")
        if not (self.cell["tol"] > 0 and int(self.cell["max_iter"]) > 0):
            raise UsageError("cell.tol and cell.max_iter must be positive")
        if s["partition"] != "uniform":
            raise UsageError("only the 'uniform' partition rule is supported")
        if not (s["epsilon"] > 0 and s["r"] > 0):
            raise UsageError("schedule.epsilon and schedule.r must be positive")
        if s["kappa"] is not None and not s["kappa"] > 0:
            raise UsageError("schedule.kappa must be positive")
        if s["fineness"] is not None and not s["fineness"] > 0:
            raise UsageError("schedule.fineness must be positive")
        if s["start"] is not None and np.asarray(s["start"], dtype=float).size != self.spec.d:
            raise UsageError("schedule.start must have d coordinates")
        if not (f["r"] > 0 and int(f["samples"]) > 0 and int(f["proposals"]) > 0 and 1 <= int(f["segments"]) <= 64):
            raise UsageError("fuzz needs r > 0, samples > 0, proposals > 0 and 1 <= segments <= 64")
        if int(lp["M"]) < 0 or int(lp["v_nodes"]) < 3 or int(lp["v_nodes"]) % 2 == 0:
            raise UsageError("lp needs M >= 0 and an odd v_nodes >= 3")
        try:
            GridSpec(self.spec.d, int(lp["n"]))
        except InvalidArgument as exc:
            raise UsageError(f"bad lp grid: {exc}") from exc
        if int(self.output["trajectory_stride"]) < 1:
            raise UsageError("output.trajectory_stride must be >= 1")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed if self.seed is not None else 0)

    def start_point(self) -> np.ndarray:
        if self.schedule["start"] is not None:
            return np.asarray(self.schedule["start"], dtype=float).reshape(self.spec.d)
        return self.rng().uniform(0, 1, size=self.spec.d)


class _Run:
    """Collects artifacts in memory so that nothing is written before the run is known to be valid."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}
        self.assertions: list[dict] = []
        self.report: dict = {"kind": cfg.kind, "seed": cfg.seed, "config": cfg.raw,
                             "hbar_estimates": {}, "residuals": {}, "slack": {}}

    def check(self, name: str, passed: bool, **values):
        self.assertions.append({"name": name, "passed": bool(passed)} | values)

    def cell(self):
        c = self.cfg
        t0 = time.perf_counter()
        sol = solve_cell(c.spec, c.grid, tol=c.cell["tol"], max_iter=int(c.cell["max_iter"]))
        self.report["timing_cell_s"] = time.perf_counter() - t0
        self.report["hbar_estimates"]["cell"] = sol.hbar
        self.report["residuals"]["cell_increment_oscillation"] = sol.residual_sup
        self.report["residuals"]["cell_iterations"] = sol.iterations
        meta = sol.to_json() | {"phi_csv": "cell.csv"}
        self.files["cell.json"] = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        self.files["cell.csv"] = sol.phi.to_csv()
        return sol

    def aim(self, sol):
        c, s = self.cfg, self.cfg.schedule
        try:
            sched = AimingSchedule.build(s["epsilon"], sol.phi, c.spec, kappa=s["kappa"], strict=s["strict"])
        except InvalidArgument as exc:
            raise UsageError(f"schedule rejected: {exc}") from exc
        fineness = s["fineness"] if s["fineness"] is not None else sched.delta
        part = Partition.uniform(float(s["r"]), fineness)
        y = c.start_point()
        t0 = time.perf_counter()
        proc = simulate(y, sol.phi, sched.kappa, part, c.spec, sched)
        self.report["timing_aim_s"] = time.perf_counter() - t0
        try:
            up = upper_estimate_check(proc, sol.phi, sol.hbar, s["epsilon"], c.spec, sched, sol.residual_sup)
        except PropertyViolation as exc:
            up = exc.report
        self.report["upper_estimate"] = up
        self.report["schedule"] = sched.to_json()
        self.report["hbar_estimates"]["aiming_average"] = -proc.running_cost / proc.r
        stride = int(c.output["trajectory_stride"])
        self.files["trajectory.csv"] = proc.to_csv(stride=stride)
        header = {"seed": c.seed, "start": list(map(float, y)), "schedule": sched.to_json(), "meta": proc.meta,
                  "stride": stride}
        self.files["trajectory.json"] = json.dumps(header, indent=2, sort_keys=True, default=float) + "\n"
        self.check("upper_estimate", up["passed"] or not up["certified"], status=up["status"],
                   margin=up["margin"], certified=up["certified"])
        margin = lower_margin(proc, sol.phi, sol.hbar)
        slack = sol.residual_sup * proc.r + up["slack"]["quadrature"]
        self.report["slack"]["lower"] = slack
        self.check("lower_estimate_on_trajectory", margin >= -slack, margin=margin, bound=-slack)
        return proc, sched

    def run(self):
        kind = self.cfg.kind
        if kind == "mather":
            self.mather()
            return
        try:
            sol = self.cell()
        except ConvergenceFailure as exc:
            self.report["residuals"]["cell_increment_oscillation"] = exc.residual
            self.check("cell_converged", False, residual=exc.residual, iterations=exc.iterations)
            return
        spec = self.cfg.spec
        self.check("cell_converged", sol.residual_sup < self.cfg.cell["tol"], residual=sol.residual_sup)
        low = spec.potential.max_value - sol.residual_sup
        self.check("hbar_at_least_max_potential", sol.hbar >= low - 1e-12, hbar=sol.hbar, bound=low)
        if kind == "cell":
            self.report["residuals"]["viscosity"] = viscosity_residual(sol, spec)
        elif kind == "aim":
            self.aim(sol)
        elif kind == "lower-fuzz":
            self.lower_fuzz(sol)
        elif kind == "triangle":
            proc, _ = self.aim(sol)
            self.mather()
            est = self.report["hbar_estimates"]
            names = ("cell", "aiming_average", "lp")
            for i, a in enumerate(names):
                for b in names[i + 1:]:
                    self.check(f"triangle_{a}_vs_{b}", abs(est[a] - est[b]) <= 0.05, gap=abs(est[a] - est[b]),
                               bound=0.05)
            lpgrid = GridSpec(spec.d, int(self.cfg.lp["n"]))
            occ = occupation_measure(proc, lpgrid, self._lp_box())
            res = occ.holonomy_residuals(HolonomyBasis(spec.d, 4))
            self.report["residuals"]["occupation_holonomy_max"] = float(res.max(initial=0.0))
            self.report["residuals"]["occupation_action"] = occ.action(spec)
            self.files["occupation_measure.csv"] = occ.to_csv()

    def _lp_box(self):
        lp = self.cfg.lp
        return lp_velocity_box(self.cfg.spec, int(lp["v_nodes"]), lp["v_radius"])

    def mather(self):
        c, lp = self.cfg, self.cfg.lp
        t0 = time.perf_counter()
        try:
            prob = build_lp(c.spec, GridSpec(c.spec.d, int(lp["n"])), self._lp_box(), HolonomyBasis(c.spec.d, int(lp["M"])))
        except (InvalidArgument, PreconditionError) as exc:
            raise UsageError(f"LP setup rejected: {exc}") from exc
        value, measure = solve_lp(prob)
        self.report["timing_lp_s"] = time.perf_counter() - t0
        self.report["hbar_estimates"]["lp"] = -value
        self.report["lp"] = {"value": value} | measure.info
        self.report["residuals"]["lp_primal"] = measure.info["primal_residual"]
        self.report["residuals"]["lp_complementarity"] = measure.info["complementarity"]
        self.files["measure.csv"] = measure.to_csv()
        self.files["lp_report.json"] = lp_report_json(value, measure)
        self.check("lp_complementary_slackness", measure.info["complementarity"] <= 1e-7,
                   value=measure.info["complementarity"], bound=1e-7)
        self.check("lp_primal_feasible", measure.info["primal_residual"] <= 1e-7,
                   value=measure.info["primal_residual"], bound=1e-7)
        return value

    def lower_fuzz(self, sol):
        c, f = self.cfg, self.cfg.fuzz
        r = float(f["r"])
        budget = sol.residual_sup * r + f["budget_per_unit_r"] * r
        self.report["slack"]["lower_budget"] = budget
        base = int(c.seed)
        seeds = [(base + i) % 2**63 for i in range(int(f["samples"]))]
        t0 = time.perf_counter()
        rep = fuzz(sol.phi, sol.hbar, c.spec, kinds=GENERATOR_KINDS[:3], seeds=seeds, r=r,
                   segments=int(f["segments"]), residual_sup=sol.residual_sup)
        proc, margin, stats = anneal_adversary(sol.phi, sol.hbar, c.spec, r, int(f["proposals"]), base % 2**63,
                                               int(f["segments"]))
        self.report["timing_fuzz_s"] = time.perf_counter() - t0
        rep["adversarial-annealed"] = {"min_margin": margin, "argmin_seed": base % 2**63,
                                       "violations": [], "stats": stats}
        self.report["fuzz"] = rep
        lines = ["kind,min_margin,argmin_seed"]
        for kind, entry in rep.items():
            lines.append(f"{kind},{entry['min_margin']!r},{entry['argmin_seed']}")
            self.check(f"lower_bound_{kind}", entry["min_margin"] >= -budget, min_margin=entry["min_margin"],
                       bound=-budget)
        self.files["fuzz_summary.csv"] = "\n".join(lines) + "\n"
        self.files["adversary.csv"] = proc.to_csv()
        self.report["slack"]["adversary_quadrature"] = quadrature_budget(proc, c.spec)

    def finish(self, out: Path) -> bool:
        passed = all(a["passed"] for a in self.assertions)
        self.report["assertions"] = self.assertions
        self.report["passed"] = passed
        self.files["report.json"] = json.dumps(self.report, indent=2, sort_keys=True, default=_jsonable) + "\n"
        out.mkdir(parents=True, exist_ok=True)
        manifest = []
        for name in sorted(self.files):
            data = self.files[name].encode()
            (out / name).write_bytes(data)
            manifest.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        (out / "manifest.json").write_text(json.dumps({"files": manifest}, indent=2) + "\n")
        return passed


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw, seed_override)


def run(cfg: ExperimentConfig, out) -> tuple[bool, dict]:
    """Execute one experiment and write its artifacts under ``out``.

    Raises
    ------
    UsageError
        If the config turns out to be unusable during setup (before any write).
    """
    job = _Run(cfg)
    job.run()
    passed = job.finish(Path(out))
    return passed, job.report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakkam", description="Run weak KAM experiments from a JSON config.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config", help="path to the JSON config")
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        passed, report = run(cfg, args.out)
    except UsageError as exc:
        print(f"weakkam: error: {exc}", file=sys.stderr)
        return 2
    for a in report["assertions"]:
        logger.info("%s %s", "PASS" if a["passed"] else "FAIL", a["name"])
    logger.info("hbar estimates: %s", {k: round(v, 6) for k, v in report["hbar_estimates"].items()})
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())

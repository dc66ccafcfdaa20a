"""Command-line runner: ``ipm-ot <task> --config run.json``.

A run reads a JSON configuration, loads the CSV inputs it names, solves
one task and writes ``report.json`` plus CSV matrices into the output
directory. Input paths in the config are resolved against the config
file's directory. Exit status is 0 on success, 2 for configuration errors,
3 for data errors and 4 for numerical failures; on failure a structured
``error.json`` is written and echoed to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barycenter import BarycenterProblem, solve_barycenter
from .class_ratio import estimate_ratio_kl, estimate_ratio_mmd
from .errors import ConfigError, IpmOtError
from .io import (
    load_labeled_csv,
    load_points_csv,
    min_max_scale,
    write_json,
    write_matrix_csv,
    write_table_csv,
)
from .kernels import EUCLIDEAN, CostSpec, KernelSpec, cost_matrix
from .kl_uot import KlUotProblem, solve_kl_uot
from .measures import NONNEGATIVE, marginals
from .mmd_uot import STANDARD, SolveReport, UotProblem, barycentric_map, random_plan, solve
from .optim import SolverConfig

logger = logging.getLogger(__name__)

TASKS = ("solve", "barycenter", "class_ratio", "map", "compare")
ESTIMATORS = ("mmd", "kl", "both")
INITS = ("constant", "random")
SUPPORT_THRESHOLD = 1e-8
_PATH_FIELDS = ("source", "target", "train", "test")


@dataclass
class RunConfig:
    """Everything a run needs. Unset kernel parameters resolve to ``gamma = 1``.

    ``kernel_sigma`` is translated with ``sigma_convention`` (see
    :meth:`KernelSpec.from_sigma`); giving both ``kernel_gamma`` and
    ``kernel_sigma`` is an error. The KL penalty weights default to the
    MMD ones. ``compare_settings`` lists the MMD settings of a compare run,
    each a dict with ``sigma`` or ``gamma`` and optionally ``lambda1``,
    ``lambda2`` and ``label``.
    """

    task: str = "solve"
    source: str | None = None
    target: str | None = None
    source_mass: float = 1.0
    target_mass: float = 1.0
    inputs: list = field(default_factory=list)
    train: str | None = None
    test: str | None = None
    kernel_gamma: float | None = None
    kernel_sigma: float | None = None
    sigma_convention: str = "bandwidth"
    cost: str = EUCLIDEAN
    p: float = 1.0
    normalize_cost: bool = False
    lambda1: float = 1.0
    lambda2: float = 1.0
    q: int = 2
    constraint: str = NONNEGATIVE
    parameterization: str = STANDARD
    rho: list | None = None
    epsilon: float = 0.1
    kl_lambda1: float | None = None
    kl_lambda2: float | None = None
    kl_max_iters: int = 10000
    kl_tol: float = 1e-9
    kl_log_domain: bool | None = None
    compare_settings: list = field(default_factory=list)
    estimator: str = "mmd"
    inner_iters: int = 10
    init: str = "constant"
    solver: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    log_level: str = "WARNING"

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("the configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        try:
            cfg = cls(**data)
            if base_dir is not None:
                cfg = cfg.rebased(Path(base_dir))
            return cfg.resolved()
        except IpmOtError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration value: {exc}") from exc

    @classmethod
    def from_file(cls, path, overrides=()) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
        for item in overrides:
            apply_override(data, item)
        return cls.from_dict(data, base_dir=path.parent)

    def rebased(self, base: Path) -> "RunConfig":
        """Resolve relative input and output paths against ``base``."""
        def fix(p):
            return p if p is None or Path(p).is_absolute() else str(base / p)

        changes = {name: fix(getattr(self, name)) for name in _PATH_FIELDS}
        changes["inputs"] = [fix(p) for p in self.inputs]
        changes["output_dir"] = fix(self.output_dir)
        return dataclasses.replace(self, **changes)

    def resolved(self) -> "RunConfig":
        """Validate and fill every default that depends on other fields."""
        task = normalize_task(self.task)
        if self.kernel_gamma is not None and self.kernel_sigma is not None:
            raise ConfigError("set kernel_gamma or kernel_sigma, not both")
        gamma = self.kernel_gamma
        if gamma is None:
            gamma = 1.0 if self.kernel_sigma is None else KernelSpec.from_sigma(
                self.kernel_sigma, self.sigma_convention).gamma
        KernelSpec(float(gamma))
        CostSpec(self.cost, float(self.p))
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if not isinstance(self.solver, dict):
            raise ConfigError("solver must be an object of solver settings")
        solver = {**SolverConfig().to_dict(), **self.solver, "seed": int(self.seed)}
        self.solver_config_from(solver)
        return dataclasses.replace(
            self,
            task=task,
            kernel_gamma=float(gamma),
            kl_lambda1=float(self.lambda1 if self.kl_lambda1 is None else self.kl_lambda1),
            kl_lambda2=float(self.lambda2 if self.kl_lambda2 is None else self.kl_lambda2),
            solver=solver,
            compare_settings=[self._setting(s, k, float(gamma)) for k, s in enumerate(self.compare_settings)],
        )

    def _setting(self, s, k, default_gamma):
        if not isinstance(s, dict):
            raise ConfigError(f"compare setting {k} must be an object")
        unknown = sorted(set(s) - {"sigma", "gamma", "lambda1", "lambda2", "label"})
        if unknown:
            raise ConfigError(f"compare setting {k} has unknown keys {unknown}")
        if "sigma" in s and "gamma" in s:
            raise ConfigError(f"compare setting {k}: set sigma or gamma, not both")
        if "gamma" in s:
            gamma = float(s["gamma"])
        elif "sigma" in s:
            gamma = KernelSpec.from_sigma(float(s["sigma"]), self.sigma_convention).gamma
        else:
            gamma = default_gamma
        KernelSpec(gamma)
        out = {
            "gamma": gamma,
            "lambda1": float(s.get("lambda1", self.lambda1)),
            "lambda2": float(s.get("lambda2", self.lambda2)),
        }
        if "sigma" in s:
            out["sigma"] = float(s["sigma"])
        out["label"] = str(s.get("label", f"mmd_{k}"))
        return out

    @staticmethod
    def solver_config_from(values: dict) -> SolverConfig:
        known = {f.name for f in dataclasses.fields(SolverConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown solver settings {unknown}")
        try:
            return SolverConfig(**values)
        except TypeError as exc:
            raise ConfigError(f"bad solver settings: {exc}") from exc

    def solver_config(self) -> SolverConfig:
        return self.solver_config_from(self.solver)

    def kernel(self) -> KernelSpec:
        return KernelSpec(self.kernel_gamma)

    def cost_spec(self) -> CostSpec:
        return CostSpec(self.cost, float(self.p))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def normalize_task(name) -> str:
    key = str(name).strip().lower().replace("-", "_")
    key = {"classratio": "class_ratio"}.get(key, key)
    if key not in TASKS:
        raise ConfigError(f"unknown task {name!r}; expected one of {TASKS}")
    return key


def apply_override(data: dict, item: str):
    """Apply ``key=value`` to a config dict; dotted keys reach into nested objects.

    The value is read as JSON when it parses, otherwise as a plain string.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value


# --- task runners -----------------------------------------------------------


def _require(cfg: RunConfig, *names):
    for name in names:
        value = getattr(cfg, name)
        if value is None or value == []:
            raise ConfigError(f"task {cfg.task!r} needs {name!r}")
        for p in value if isinstance(value, list) else [value]:
            if not Path(p).is_file():
                raise ConfigError(f"{name} file {p} does not exist")


def _support_size(v, threshold=SUPPORT_THRESHOLD) -> int:
    v = np.asarray(v)
    top = float(v.max()) if v.size else 0.0
    return int(np.sum(v > threshold * top)) if top > 0 else 0


def plan_summary(alpha) -> dict:
    """Mass, extreme entries, sparsity and supports of a plan.

    Sparsity is the fraction of entries at or below ``1e-8`` of the largest
    entry; supports count marginal entries above ``1e-8`` of their maximum.
    """
    alpha = np.asarray(alpha)
    top = float(alpha.max())
    small = alpha <= SUPPORT_THRESHOLD * top if top > 0 else np.ones(alpha.shape, bool)
    return {
        "mass": float(alpha.sum()),
        "shape": list(alpha.shape),
        "min_entry": float(alpha.min()),
        "max_entry": top,
        "sparsity": float(small.mean()),
        "row_support": _support_size(alpha.sum(axis=1)),
        "col_support": _support_size(alpha.sum(axis=0)),
    }


def report_dict(rep: SolveReport) -> dict:
    extras = {k: v for k, v in rep.extras.items() if k != "fixed_point_residuals"}
    if "fixed_point_residuals" in rep.extras:
        extras["final_fixed_point_residual"] = rep.extras["fixed_point_residuals"][-1]
    return {
        "loss_value": rep.loss_value,
        "loss_root": rep.loss_root,
        "cost_term": rep.cost_term,
        "marginal_residuals": list(rep.marginal_residuals),
        "lambdas": list(rep.lambdas),
        "converged": rep.converged,
        "method": rep.method,
        "stages": rep.stages,
        "iterations_total": rep.iterations_total,
        "objective_trace": rep.objective_trace.values,
        "plan": plan_summary(rep.plan.alpha),
        "extras": extras,
    }


def _write_plan(out: Path, alpha, suffix="", files=None, source_weights=None, target_weights=None):
    """Write ``plan``, ``heatmap`` and ``marginals`` CSVs for one plan."""
    names = [f"plan{suffix}.csv", f"heatmap{suffix}.csv", f"marginals{suffix}.csv"]
    write_matrix_csv(out / names[0], alpha)
    write_matrix_csv(out / names[1], min_max_scale(alpha))
    marg = marginals(alpha)
    rows = []
    for side, plan_m, target in (("source", marg.row_marginal, source_weights),
                                 ("target", marg.col_marginal, target_weights)):
        for i, v in enumerate(plan_m):
            rows.append((side, i, v, np.nan if target is None else target[i]))
    write_table_csv(out / names[2], ["side", "index", "plan_marginal", "measure_weight"], rows)
    if files is not None:
        files.extend(names)


def _write_map(out: Path, points, mapped, name, files):
    d = points.shape[1]
    header = [f"x{k}" for k in range(d)] + [f"t{k}" for k in range(d)]
    write_matrix_csv(out / name, np.hstack([points, mapped]), header)
    files.append(name)


def _initial(cfg: RunConfig, pb: UotProblem):
    if cfg.init == "constant":
        return None
    rng = np.random.default_rng(cfg.seed)
    shape = pb.arrays().shape
    mass = float(np.sqrt(pb.source.total_mass * pb.target.total_mass))
    return random_plan(shape, pb.constraint, mass, rng)


def _measures(cfg: RunConfig):
    _require(cfg, "source", "target")
    mu = load_points_csv(cfg.source, cfg.source_mass)
    nu = load_points_csv(cfg.target, cfg.target_mass)
    return mu, nu


def _cost_override(cfg: RunConfig, rows, cols):
    if not cfg.normalize_cost:
        return None
    C = cost_matrix(rows, cols, cfg.cost_spec())
    return C / C.max() if C.max() > 0 else C


def _uot_problem(cfg: RunConfig, mu, nu, kernel=None, lambdas=None):
    lam1, lam2 = lambdas if lambdas is not None else (cfg.lambda1, cfg.lambda2)
    if cfg.parameterization == STANDARD:
        rows, cols = mu.points, nu.points
    else:
        rows = cols = np.vstack([mu.points, nu.points])
    return UotProblem(
        mu, nu, kernel or cfg.kernel(), cfg.cost_spec(), float(lam1), float(lam2), int(cfg.q),
        cfg.constraint, cfg.parameterization, _cost_override(cfg, rows, cols),
    )


def _embedded_weights(cfg: RunConfig, mu, nu):
    if cfg.parameterization == STANDARD:
        return mu.weights, nu.weights
    zeros1, zeros2 = np.zeros(mu.size), np.zeros(nu.size)
    return np.concatenate([mu.weights, zeros2]), np.concatenate([zeros1, nu.weights])


def run_solve(cfg: RunConfig, out: Path, with_map=False) -> dict:
    mu, nu = _measures(cfg)
    pb = _uot_problem(cfg, mu, nu)
    rep = solve(pb, cfg.solver_config(), _initial(cfg, pb))
    files = []
    a, b = _embedded_weights(cfg, mu, nu)
    _write_plan(out, rep.plan.alpha, "", files, a, b)
    result = report_dict(rep)
    if with_map:
        _write_map(out, rep.plan.source_support, barycentric_map(rep.plan, rep.plan.target_support), "map.csv",
                   files)
    return {"result": result, "files": files}


def run_barycenter(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "inputs")
    inputs = [load_points_csv(p, 1.0) for p in cfg.inputs]
    rho = np.full(len(inputs), 1.0 / len(inputs)) if cfg.rho is None else np.asarray(cfg.rho, dtype=float)
    pb = BarycenterProblem(tuple(inputs), rho, cfg.kernel(), cfg.cost_spec(), float(cfg.lambda1),
                           float(cfg.lambda2), cfg.constraint)
    res = solve_barycenter(pb, cfg.solver_config())
    files = []
    for k, plan in enumerate(res.plans):
        _write_plan(out, plan.alpha, f"_{k}", files, inputs[k].weights, res.barycenter_weights)
    Z = res.union_support
    header = [f"x{k}" for k in range(Z.shape[1])] + ["weight"]
    write_matrix_csv(out / "barycenter.csv", np.hstack([Z, res.barycenter_weights[:, None]]), header)
    files.append("barycenter.csv")
    result = {
        "loss_value": res.loss_value,
        "converged": res.converged,
        "stages": res.stages,
        "iterations_total": res.iterations_total,
        "objective_trace": res.objective_trace.values,
        "rho": rho,
        "barycenter_mass": float(res.barycenter_weights.sum()),
        "plans": [plan_summary(p.alpha) for p in res.plans],
    }
    return {"result": result, "files": files}


def run_class_ratio(cfg: RunConfig, out: Path) -> dict:
    _require(cfg, "train", "test")
    train = load_labeled_csv(cfg.train)
    test = load_points_csv(cfg.test).points
    files, result = [], {}
    if cfg.estimator in ("mmd", "both"):
        est = estimate_ratio_mmd(train, test, cfg.kernel(), cfg.cost_spec(), (cfg.lambda1, cfg.lambda2),
                                 cfg.solver_config(), cfg.parameterization, cfg.inner_iters, cfg.normalize_cost)
        result["mmd"] = {"theta": est.ratio.theta, "rounds": est.rounds, "converged": est.joint_trace.converged,
                         "joint_trace": est.joint_trace.values, "report": report_dict(est.report)}
        _write_plan(out, est.report.plan.alpha, "", files)
    if cfg.estimator in ("kl", "both"):
        est = estimate_ratio_kl(train, test, cfg.cost_spec(), (cfg.kl_lambda1, cfg.kl_lambda2), cfg.epsilon,
                                cfg.solver_config(), cfg.normalize_cost, max_iters=cfg.kl_max_iters, tol=cfg.kl_tol)
        result["kl"] = {"theta": est.ratio.theta, "rounds": est.rounds, "converged": est.joint_trace.converged,
                        "report": report_dict(est.report)}
        _write_plan(out, est.report.plan.alpha, "_kl" if cfg.estimator == "both" else "", files)
    return {"result": result, "files": files}


def run_compare(cfg: RunConfig, out: Path) -> dict:
    """Solve every MMD setting and the KL baseline on one pair of measures."""
    mu, nu = _measures(cfg)
    settings = cfg.compare_settings or [{"gamma": cfg.kernel_gamma, "lambda1": cfg.lambda1,
                                         "lambda2": cfg.lambda2, "label": "mmd_0"}]
    files, rows, result = [], [], {"mmd": [], "kl": None}
    a, b = _embedded_weights(cfg, mu, nu)
    for k, s in enumerate(settings):
        pb = _uot_problem(cfg, mu, nu, KernelSpec(s["gamma"]), (s["lambda1"], s["lambda2"]))
        rep = solve(pb, cfg.solver_config(), _initial(cfg, pb))
        _write_plan(out, rep.plan.alpha, f"_mmd_{k}", files, a, b)
        _write_map(out, rep.plan.source_support, barycentric_map(rep.plan, rep.plan.target_support),
                   f"map_mmd_{k}.csv", files)
        summary = report_dict(rep)
        result["mmd"].append({"setting": s, **summary})
        rows.append(_compare_row(s["label"], "mmd", rep, summary["plan"]))
    C = cost_matrix(mu.points, nu.points, cfg.cost_spec())
    if cfg.normalize_cost and C.max() > 0:
        C = C / C.max()
    kl = KlUotProblem(mu, nu, C, cfg.kl_lambda1, cfg.kl_lambda2, cfg.epsilon, cfg.kl_max_iters, cfg.kl_tol,
                      cfg.kl_log_domain)
    rep = solve_kl_uot(kl)
    _write_plan(out, rep.plan.alpha, "_kl", files, mu.weights, nu.weights)
    _write_map(out, mu.points, barycentric_map(rep.plan, nu.points), "map_kl.csv", files)
    summary = report_dict(rep)
    result["kl"] = summary
    rows.append(_compare_row("kl", "kl", rep, summary["plan"]))
    header = ["label", "penalty", "loss", "cost", "residual_source", "residual_target", "plan_mass",
              "sparsity", "row_support", "col_support", "min_entry", "converged", "iterations"]
    write_table_csv(out / "compare.csv", header, rows)
    files.append("compare.csv")
    result["source_support"] = _support_size(mu.weights, 0.0)
    result["target_support"] = _support_size(nu.weights, 0.0)
    return {"result": result, "files": files}


def _compare_row(label, penalty, rep: SolveReport, plan):
    return (label, penalty, rep.loss_value, rep.cost_term, rep.marginal_residuals[0], rep.marginal_residuals[1],
            plan["mass"], plan["sparsity"], plan["row_support"], plan["col_support"], plan["min_entry"],
            rep.converged, rep.iterations_total)


RUNNERS = {
    "solve": run_solve,
    "map": lambda cfg, out: run_solve(cfg, out, with_map=True),
    "barycenter": run_barycenter,
    "class_ratio": run_class_ratio,
    "compare": run_compare,
}


def run(cfg: RunConfig) -> int:
    """Execute a resolved config and write its outputs. Returns the exit status."""
    out = Path(cfg.output_dir)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        payload = RUNNERS[cfg.task](cfg, out)
    except IpmOtError as exc:
        write_error(out, exc, cfg.to_dict())
        return exc.exit_code
    report = {
        "task": cfg.task,
        "status": "ok",
        "config": cfg.to_dict(),
        "result": payload["result"],
        "files": sorted(payload["files"]),
        "wall_time_seconds": time.perf_counter() - start,
    }
    write_json(out / "report.json", report)
    return 0


def error_report(exc: IpmOtError, config=None) -> dict:
    rep = {
        "status": "error",
        "error": type(exc).__name__,
        "category": _category(exc),
        "message": str(exc),
        "exit_code": exc.exit_code,
    }
    for attr in ("row", "column"):
        if getattr(exc, attr, None) is not None:
            rep[attr] = getattr(exc, attr)
    if config is not None:
        rep["config"] = config
    return rep


def _category(exc):
    return {2: "config", 3: "data", 4: "numerical"}.get(exc.exit_code, "error")


def write_error(out, exc: IpmOtError, config=None):
    rep = error_report(exc, config)
    print(json.dumps(rep, sort_keys=True, default=str), file=sys.stderr)
    if out is not None:
        try:
            write_json(Path(out) / "error.json", rep)
        except OSError:
            logger.warning("could not write error.json to %s", out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipm-ot", description="MMD-regularized unbalanced optimal transport")
    parser.add_argument("task", help=f"one of {', '.join(TASKS)}")
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="seed for random initializations")
    parser.add_argument("--log-level", help="logging level, e.g. INFO")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field; repeatable, dotted keys allowed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = [f"task={json.dumps(args.task)}", *args.set]
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.log_level is not None:
        overrides.append(f"log_level={json.dumps(args.log_level)}")
    try:
        cfg = RunConfig.from_file(args.config, overrides)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(Path(args.out)))
        level = getattr(logging, str(cfg.log_level).upper(), None)
        if not isinstance(level, int):
            raise ConfigError(f"unknown log level {cfg.log_level!r}")
    except IpmOtError as exc:
        write_error(args.out, exc)
        return exc.exit_code
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

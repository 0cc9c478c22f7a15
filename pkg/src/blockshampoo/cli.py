"""Command-line front end.

Subcommands: scalar-sweep, solve, train, bench, balance, cheb-fit.
Every option can also come from a ``key = value`` config file passed via
--config; precedence is CLI flag > config file > built-in default, and
unknown config keys are rejected.  The effective configuration is echoed
to stderr as ``# key = value`` lines for reproducibility.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from statistics import median

import numpy as np

from .balance import greedy_balance, simulate_sync_cost
from .chebyshev import (
    clenshaw_matrix,
    clenshaw_scalar,
    fit_inverse_root,
    load_coefficients,
    save_coefficients,
)
from .eigensolver import (
    DampeningHeuristic,
    HeuristicKind,
    batched_evd_inverse_root,
    eigh_with_sweeps,
    evd_inverse_root,
)
from .errors import NumericalError
from .linalg import PrecisionMode, count_matmuls, load_matrix
from .roots import (
    CnConfig,
    NdbConfig,
    batched_coupled_newton,
    batched_newton_db,
    coupled_newton,
    ndb_inverse_fourth_root,
    newton_db,
    scalar_iteration_count,
)
from .shampoo import GraftConfig, LrSchedule, ShampooConfig, SolverConfig
from .spectral import Frobenius, PowerIterationScaling, scale_factor
from .tasks import TASKS, random_spd, run_training


class UsageError(Exception):
    pass


class FileFormatError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(message)


_HEURISTICS = {
    "legacy": HeuristicKind.LEGACY,
    "relu": HeuristicKind.SHIFTED_RELU,
    "abs": HeuristicKind.ABS,
}

# option name -> (type, default, help, choices)
_SOLVER_OPTIONS = {
    "method": (str, "ndb", "inverse-root method", ("evd", "cn", "ndb", "cbshv")),
    "norm": (str, "pi", "input scaling", ("fro", "pi")),
    "precision": (str, "f64", "arithmetic mode for cn/cbshv", ("f64", "f32")),
    "p": (int, 2, "root exponent denominator", (2, 4)),
    "tol": (float, 1e-10, "convergence tolerance", None),
    "fixed-iters": (int, None, "run exactly this many iterations (no early stop)", None),
    "pool": (int, 16, "power-iteration pool size", None),
    "iters": (int, 30, "power-iteration step count", None),
    "dampening": (str, "relu", "EVD spectrum heuristic", tuple(_HEURISTICS)),
    "epsilon": (float, 1e-10, "preconditioner regularization", None),
    "cheb-degree": (int, 60, "Chebyshev degree", None),
    "cheb-cache": (str, None, "Chebyshev coefficient cache file", None),
}

_COMMON_OPTIONS = {
    "seed": (int, 0, "random seed", None),
    "out": (str, None, "output path (default: stdout)", None),
    "config": (str, None, "key = value config file", None),
}

_COMMAND_OPTIONS = {
    "scalar-sweep": {
        **_COMMON_OPTIONS,
        "methods": (str, "cn,ndb", "comma-separated methods", None),
        "p": (int, 2, "root exponent denominator", (2, 4)),
        "tol": (float, 1e-10, "relative precision target", None),
        "grid": (str, None, "grid spec: log:lo:hi:n | lin:lo:hi:n | bare floats, comma-joined", None),
    },
    "solve": {**_COMMON_OPTIONS, **_SOLVER_OPTIONS, "matrix": (str, None, "matrix file", None)},
    "train": {
        **_COMMON_OPTIONS,
        **_SOLVER_OPTIONS,
        "task": (str, "quadratic", "toy task", tuple(TASKS)),
        "steps": (int, 100, "optimizer steps", None),
        "lr": (float, 1e-1, "constant learning rate", None),
        "lr-sweep": (str, None, "comma-separated candidate rates; best final loss wins", None),
        "block-size": (int, 256, "preconditioner block size", None),
        "update-freq": (int, 1, "inverse-root refresh period", None),
        "beta-lr": (float, 0.95, "preconditioner EMA decay", None),
    },
    "bench": {
        **_COMMON_OPTIONS,
        **_SOLVER_OPTIONS,
        "batch": (int, 32, "number of stacked blocks", None),
        "dim": (int, 64, "block dimension", None),
        "repeats": (int, 5, "timing repetitions", None),
    },
    "balance": {
        **_COMMON_OPTIONS,
        "workers": (int, None, "worker count", None),
        "layers": (str, None, "file of 'id params' lines", None),
    },
    "cheb-fit": {
        **_COMMON_OPTIONS,
        "p": (int, 2, "root exponent denominator", (2, 4)),
        "degree": (int, 60, "polynomial degree", None),
        "points": (int, 1000, "fit sample count", None),
        "interval": (str, "1e-10,1.0000000001", "fit interval 'a,b'", None),
    },
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="blockshampoo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in _COMMAND_OPTIONS.items():
        sp = sub.add_parser(command, add_help=True)
        for name, (type_fn, _default, help_, choices) in options.items():
            sp.add_argument(
                f"--{name}",
                dest=name.replace("-", "_"),
                type=type_fn,
                default=None,
                choices=choices,
                help=help_,
            )
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("_", "-")] = value.strip()
    return values


def _effective_config(command: str, args: argparse.Namespace) -> dict[str, object]:
    options = _COMMAND_OPTIONS[command]
    effective: dict[str, object] = {name: spec[1] for name, spec in options.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in _read_config_file(config_path).items():
            if key not in options or key == "config":
                raise UsageError(f"unknown config key {key!r} for command {command!r}")
            type_fn, _, _, choices = options[key]
            try:
                value = type_fn(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for config key {key!r}: {raw!r}") from exc
            if choices is not None and value not in choices:
                raise UsageError(f"config key {key!r} must be one of {choices}, got {value!r}")
            effective[key] = value
        effective["config"] = config_path
    for name in options:
        cli_value = getattr(args, name.replace("-", "_"), None)
        if cli_value is not None:
            effective[name] = cli_value
    return effective


def _echo_config(command: str, eff: dict[str, object]) -> None:
    print(f"# command = {command}", file=sys.stderr)
    for key in sorted(eff):
        print(f"# {key} = {eff[key]}", file=sys.stderr)


def _write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _solver_config(eff: dict[str, object]) -> SolverConfig:
    method = eff["method"]
    precision = PrecisionMode.FULL64 if eff["precision"] == "f64" else PrecisionMode.EMULATED32
    if precision is PrecisionMode.EMULATED32 and method in ("evd", "ndb"):
        raise UsageError(f"--precision f32 is not supported for method {method!r}")
    scaling = (
        Frobenius()
        if eff["norm"] == "fro"
        else PowerIterationScaling(pool=eff["pool"], iters=eff["iters"])
    )
    tolerance = eff["tol"]
    max_iters = 100
    if eff.get("fixed-iters") is not None:
        tolerance = 0.0
        max_iters = eff["fixed-iters"]
    return SolverConfig(
        method=method,
        scaling=scaling,
        tolerance=tolerance,
        max_iters=max_iters,
        precision=precision,
        heuristic=DampeningHeuristic(_HEURISTICS[eff["dampening"]], epsilon=eff["epsilon"]),
        cheb_degree=eff["cheb-degree"],
    )


def default_sweep_grid() -> list[float]:
    points = set()
    for decade in range(-6, 0):
        for mantissa in (1.0, 1.5, 2.0, 3.0, 5.0, 7.0):
            points.add(mantissa * 10.0**decade)
    for i in range(1, 100):
        points.add(i / 100.0)
    points.update((0.995, 0.999))
    return sorted(p for p in points if 0.0 < p < 1.0)


def _parse_grid(spec: str | None) -> list[float]:
    if spec is None:
        return default_sweep_grid()
    points: set[float] = set()
    for part in spec.split(","):
        part = part.strip()
        if part.startswith("log:") or part.startswith("lin:"):
            kind, lo, hi, n = part.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
            if n < 1 or not lo < hi:
                raise UsageError(f"bad grid segment {part!r}")
            if kind == "log":
                points.update(np.geomspace(lo, hi, n).tolist())
            else:
                points.update(np.linspace(lo, hi, n).tolist())
        else:
            points.add(float(part))
    grid = sorted(points)
    if not grid or grid[0] <= 0.0 or grid[-1] >= 1.0:
        raise UsageError("sweep grid must lie strictly inside (0, 1)")
    return grid


def cmd_scalar_sweep(eff: dict[str, object]) -> int:
    methods = [m.strip() for m in str(eff["methods"]).split(",") if m.strip()]
    for m in methods:
        if m not in ("cn", "ndb"):
            raise UsageError(f"unknown sweep method {m!r}")
    grid = _parse_grid(eff["grid"])
    lines = ["method,x,iterations,converged"]
    for method in methods:
        for x in grid:
            report = scalar_iteration_count(x, method, p=eff["p"], tolerance=eff["tol"])
            lines.append(f"{method},{x!r},{report.iterations},{str(report.converged).lower()}")
    _write_output("\n".join(lines) + "\n", eff["out"])
    return 0


def _load_matrix_file(path: str | None) -> np.ndarray:
    if path is None:
        raise UsageError("--matrix is required")
    try:
        return load_matrix(path)
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc


def cmd_solve(eff: dict[str, object]) -> int:
    a = _load_matrix_file(eff["matrix"])
    solver = _solver_config(eff)
    p = eff["p"]
    seed = eff["seed"]
    asym = np.linalg.norm(a - a.T)
    if a.shape[0] != a.shape[1] or asym > 1e-8 * max(np.linalg.norm(a), 1.0):
        raise NumericalError(f"input matrix is not symmetric (asymmetry {asym:.3e})")
    dec, sweeps = eigh_with_sweeps(a)
    if dec.eigenvalues[0] < -1e-10 * max(np.linalg.norm(a), 1.0):
        raise NumericalError(f"input matrix is not PSD (lambda_min {dec.eigenvalues[0]:.3e})")
    lam = np.maximum(dec.eigenvalues, 0.0) + solver.heuristic.epsilon
    oracle = (dec.eigenvectors * np.power(lam, -1.0 / p)[None, :]) @ dec.eigenvectors.T
    with count_matmuls() as counter:
        if solver.method == "evd":
            root = evd_inverse_root(a, p, solver.heuristic)
            iterations, residual, converged = sweeps, 0.0, True
        else:
            regularized = a + solver.heuristic.epsilon * np.eye(a.shape[0])
            scale = scale_factor(regularized, solver.scaling, seed=seed)
            scaled = regularized / scale
            if solver.method == "cn":
                x, report = coupled_newton(
                    scaled, CnConfig(p=p, tolerance=solver.tolerance, max_iters=solver.max_iters), solver.precision
                )
                root = x * scale ** (-1.0 / p)
            elif solver.method == "ndb":
                cfg = NdbConfig(tolerance=solver.tolerance, max_iters=solver.max_iters)
                if p == 2:
                    _, z, report = newton_db(scaled, cfg)
                else:
                    z, report = ndb_inverse_fourth_root(scaled, cfg)
                root = z * scale ** (-1.0 / p)
            else:
                if eff["cheb-cache"]:
                    coeffs = load_coefficients(eff["cheb-cache"])
                    if coeffs.power != p:
                        raise UsageError(f"cached coefficients target p={coeffs.power}, requested p={p}")
                else:
                    coeffs = fit_inverse_root(p, degree=solver.cheb_degree)
                root = clenshaw_matrix(regularized, coeffs, scale, solver.precision)
                report = None
            if report is not None:
                iterations, residual, converged = report.iterations, report.residual, report.converged
            else:
                iterations, residual, converged = solver.cheb_degree, float("nan"), True
    rel_err = np.linalg.norm(root - oracle) / np.linalg.norm(oracle)
    out_lines = [
        f"method = {solver.method}",
        f"n = {a.shape[0]}",
        f"p = {p}",
        f"iterations = {iterations}",
        f"converged = {str(bool(converged)).lower()}",
        f"residual = {residual:.6e}",
        f"matmuls = {counter.count}",
        f"oracle_rel_error = {rel_err:.6e}",
    ]
    _write_output("\n".join(out_lines) + "\n", eff["out"])
    return 0


def _train_config(eff: dict[str, object], lr: float, steps: int) -> ShampooConfig:
    return ShampooConfig(
        beta_lr=eff["beta-lr"],
        epsilon=eff["epsilon"],
        lr=LrSchedule(kind="constant", base=lr),
        update_freq=eff["update-freq"],
        solver=_solver_config(eff),
        block_size=eff["block-size"],
        graft=GraftConfig(),
    )


def cmd_train(eff: dict[str, object]) -> int:
    task = TASKS[eff["task"]](seed=eff["seed"])
    steps = eff["steps"]
    if steps < 0:
        raise UsageError("--steps must be >= 0")
    lr = eff["lr"]
    if eff["lr-sweep"]:
        candidates = [float(v) for v in str(eff["lr-sweep"]).split(",") if v.strip()]
        best = None
        for candidate in candidates:
            rows, params = run_training(task, _train_config(eff, candidate, steps), steps, seed=eff["seed"])
            final = task.loss(params)
            if best is None or final < best[1]:
                best = (candidate, final)
        lr = best[0]
        print(f"# lr-sweep selected = {lr}", file=sys.stderr)
    rows, _ = run_training(task, _train_config(eff, lr, steps), steps, seed=eff["seed"])
    lines = ["step,loss,grad_norm,update_norm,refresh_flag"]
    for row in rows:
        step_i, loss, grad_norm, update_norm, refreshed = row
        lines.append(f"{step_i},{loss!r},{grad_norm!r},{update_norm!r},{refreshed}")
    _write_output("\n".join(lines) + "\n", eff["out"])
    return 0


def cmd_bench(eff: dict[str, object]) -> int:
    solver = _solver_config(eff)
    n, dim, repeats = eff["batch"], eff["dim"], eff["repeats"]
    p = eff["p"]
    base = random_spd(dim, cond=10.0, seed=eff["seed"], scale=0.5)
    blocks = np.broadcast_to(base, (n, dim, dim)).copy()

    def solve_batched():
        if solver.method == "evd":
            return batched_evd_inverse_root(blocks, p, solver.heuristic)
        if solver.method == "cn":
            return batched_coupled_newton(blocks, CnConfig(p=p), solver.precision)[0]
        if solver.method == "ndb":
            if p == 2:
                return batched_newton_db(blocks, NdbConfig())[1]
            sqrts, _, _ = batched_newton_db(blocks, NdbConfig())
            return batched_newton_db(sqrts, NdbConfig())[1]
        coeffs = fit_inverse_root(p, degree=solver.cheb_degree)
        from .chebyshev import batched_clenshaw_matrix

        return batched_clenshaw_matrix(blocks, coeffs, np.ones(n), solver.precision)

    def solve_sequential():
        out = np.empty_like(blocks)
        for i in range(n):
            if solver.method == "evd":
                out[i] = evd_inverse_root(blocks[i], p, solver.heuristic)
            elif solver.method == "cn":
                out[i] = coupled_newton(blocks[i], CnConfig(p=p), solver.precision)[0]
            elif solver.method == "ndb":
                if p == 2:
                    out[i] = newton_db(blocks[i], NdbConfig())[1]
                else:
                    out[i] = ndb_inverse_fourth_root(blocks[i], NdbConfig())[0]
            else:
                coeffs = fit_inverse_root(p, degree=solver.cheb_degree)
                out[i] = clenshaw_matrix(blocks[i], coeffs, 1.0, solver.precision)
        return out

    stacked_times, sequential_times = [], []
    stacked = sequential = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        stacked = solve_batched()
        stacked_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        sequential = solve_sequential()
        sequential_times.append(time.perf_counter() - t0)
    delta = float(np.max(np.linalg.norm(stacked - sequential, axis=(1, 2)))) if n else 0.0
    lines = [
        "mode,batch,dim,median_seconds,max_block_delta",
        f"stacked,{n},{dim},{median(stacked_times)!r},{delta!r}",
        f"sequential,{n},{dim},{median(sequential_times)!r},0.0",
    ]
    _write_output("\n".join(lines) + "\n", eff["out"])
    return 0


def cmd_balance(eff: dict[str, object]) -> int:
    if eff["workers"] is None or eff["layers"] is None:
        raise UsageError("balance requires --workers and --layers")
    sizes = []
    try:
        with open(eff["layers"]) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise FileFormatError(f"{eff['layers']}:{lineno}: expected 'id params'")
                sizes.append((int(parts[0]), int(parts[1])))
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc
    try:
        assignment = greedy_balance(sizes, eff["workers"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = simulate_sync_cost(assignment)
    lines = ["worker,layer_id,params"]
    for worker_id, worker in enumerate(assignment.workers):
        for layer_id in worker.layer_ids:
            lines.append(f"{worker_id},{layer_id},{assignment.sizes[layer_id]}")
    print(f"# makespan = {report.makespan}", file=sys.stderr)
    print(f"# broadcast_volume = {report.broadcast_volume}", file=sys.stderr)
    _write_output("\n".join(lines) + "\n", eff["out"])
    return 0


def cmd_cheb_fit(eff: dict[str, object]) -> int:
    try:
        a, b = (float(v) for v in str(eff["interval"]).split(","))
    except ValueError as exc:
        raise UsageError(f"bad --interval {eff['interval']!r}") from exc
    coeffs = fit_inverse_root(eff["p"], degree=eff["degree"], num_points=eff["points"], interval=(a, b))
    if eff["out"] is None:
        raise UsageError("cheb-fit requires --out")
    save_coefficients(coeffs, eff["out"])
    xs = np.linspace(max(a, 1e-8), b, 2000)
    errs = [abs(clenshaw_scalar(x, coeffs) - x ** (-1.0 / eff["p"])) * x ** (1.0 / eff["p"]) for x in xs]
    print(f"# max_on_interval_rel_error = {max(errs):.6e}", file=sys.stderr)
    return 0


_DISPATCH = {
    "scalar-sweep": cmd_scalar_sweep,
    "solve": cmd_solve,
    "train": cmd_train,
    "bench": cmd_bench,
    "balance": cmd_balance,
    "cheb-fit": cmd_cheb_fit,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        eff = _effective_config(args.command, args)
        _echo_config(args.command, eff)
        return _DISPATCH[args.command](eff)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except FileFormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

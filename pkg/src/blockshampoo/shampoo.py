"""Block-preconditioned Shampoo with grafting and cached inverse roots.

Per layer and per block, left/right preconditioners accumulate as
exponential moving averages of G G^T and G^T G.  All same-shaped blocks
across all layers live in shared stacks so one batched solver call
refreshes every cached inverse root of that shape.  Two-dimensional
blocks use the exponent -1/4 on each side; one-dimensional layers are
chunked into column vectors with a single left preconditioner and
exponent -1/2.

The update for a block is U = rootL @ G @ rootR, rescaled by the
block-wise grafting factor s = ||P||_F / ||U||_F where P is the Adam
direction G / (graft_eps + sqrt(A_hat)); the applied step is then
eta * s * U, whose norm equals eta * ||P||_F by construction.

Inverse roots are recomputed whenever the 0-based step index is a
multiple of ``update_freq`` (so the very first step always computes
them) and reused in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .blocking import PartitionLayout, partition, partition_layout
from .chebyshev import ChebCoefficients, batched_clenshaw_matrix, fit_inverse_root
from .eigensolver import DampeningHeuristic, HeuristicKind, batched_evd_inverse_root
from .errors import ConvergenceError
from .linalg import (
    PrecisionMode,
    bmm,
    format_matrix,
    frobenius_norm,
    matmul,
    parse_matrix,
    symmetrize,
)
from .roots import CnConfig, NdbConfig, batched_coupled_newton, batched_newton_db
from .spectral import (
    Frobenius,
    PowerIterationScaling,
    ScalingMode,
    batched_multi_power_iteration,
    block_seed,
)

SOLVER_METHODS = ("evd", "cn", "ndb", "cbshv")


@dataclass(frozen=True)
class GraftConfig:
    beta1: float = 0.0       # EMA on the grafting numerator; 0 uses the raw gradient
    beta2: float = 0.999     # Adam second-moment decay
    graft_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.graft_eps <= 0:
            raise ValueError("graft_eps must be positive")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "ndb"
    scaling: ScalingMode = PowerIterationScaling()
    tolerance: float = 1e-10
    max_iters: int = 100
    precision: PrecisionMode = PrecisionMode.FULL64
    heuristic: DampeningHeuristic = DampeningHeuristic(HeuristicKind.SHIFTED_RELU)
    cheb_degree: int = 60
    cheb_points: int = 1000
    cheb_interval: tuple[float, float] | None = None  # None -> [1e-10, 1 + 1e-10]

    def __post_init__(self) -> None:
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.method == "ndb" and self.precision is not PrecisionMode.FULL64:
            raise ValueError("the Denman-Beavers solver supports Full64 precision only")

    @property
    def require_convergence(self) -> bool:
        # tolerance 0 encodes fixed-iteration mode: run max_iters steps, no early stop
        return self.tolerance > 0.0


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"  # constant | linear | cosine
    base: float = 1e-3
    total_steps: int = 0
    final: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.kind != "constant" and self.total_steps < 1:
            raise ValueError("linear/cosine schedules need total_steps >= 1")

    def value(self, t: int) -> float:
        if self.kind == "constant":
            return self.base
        frac = min(t / self.total_steps, 1.0)
        if self.kind == "linear":
            return self.base + (self.final - self.base) * frac
        return self.final + (self.base - self.final) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class ShampooConfig:
    beta_lr: float = 0.95        # preconditioner EMA decay
    epsilon: float = 1e-10       # +eps*I regularization ahead of the solvers
    lr: LrSchedule = LrSchedule()
    update_freq: int = 1
    solver: SolverConfig = SolverConfig()
    block_size: int = 256
    graft: GraftConfig = GraftConfig()

    def __post_init__(self) -> None:
        if not 0.0 < self.beta_lr < 1.0:
            raise ValueError("beta_lr must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.update_freq < 1:
            raise ValueError("update_freq must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@dataclass(frozen=True)
class SlotRef:
    group: int
    slot: int


@dataclass
class LayerState:
    layer_id: int
    shape: tuple[int, ...]
    layout: PartitionLayout | None                      # matrix layers
    chunk_bounds: tuple[tuple[int, int], ...] | None    # vector layers
    left_refs: tuple[SlotRef, ...]
    right_refs: tuple[SlotRef, ...] | None

    @property
    def is_matrix(self) -> bool:
        return self.layout is not None


@dataclass
class PrecondGroup:
    dim: int
    exponent: int  # inverse-root denominator: 4 for matrix blocks, 2 for vector chunks
    members: tuple[tuple[int, str, int], ...]  # (layer_id, side, block_index)
    ema: np.ndarray
    roots: np.ndarray


@dataclass
class ShampooState:
    step: int
    layers: list[LayerState]
    groups: list[PrecondGroup]
    adam: list[np.ndarray]
    momentum: list[np.ndarray] | None


def _chunk_bounds(length: int, block_size: int) -> tuple[tuple[int, int], ...]:
    bounds = [(s, min(s + block_size, length)) for s in range(0, length, block_size)]
    return tuple(bounds)


def _build_structure(
    shapes: list[tuple[int, ...]], block_size: int, track_momentum: bool
) -> ShampooState:
    keyed: dict[tuple[int, int], list[tuple[int, str, int]]] = {}
    layer_meta: list[tuple[PartitionLayout | None, tuple[tuple[int, int], ...] | None]] = []
    for layer_id, shape in enumerate(shapes):
        if len(shape) == 2:
            layout = partition_layout(shape, block_size)  # type: ignore[arg-type]
            layer_meta.append((layout, None))
            for idx, ((r0, r1), (c0, c1)) in enumerate(layout.block_spans):
                keyed.setdefault((r1 - r0, 4), []).append((layer_id, "L", idx))
                keyed.setdefault((c1 - c0, 4), []).append((layer_id, "R", idx))
        elif len(shape) == 1:
            bounds = _chunk_bounds(shape[0], block_size)
            layer_meta.append((None, bounds))
            for idx, (s, e) in enumerate(bounds):
                keyed.setdefault((e - s, 2), []).append((layer_id, "L", idx))
        else:
            raise ValueError(f"layer {layer_id}: only 1-D and 2-D layers are supported, got shape {shape}")

    side_order = {"L": 0, "R": 1}
    groups: list[PrecondGroup] = []
    ref_of: dict[tuple[int, str, int], SlotRef] = {}
    for gi, (dim, exponent) in enumerate(sorted(keyed)):
        members = tuple(sorted(keyed[(dim, exponent)], key=lambda m: (m[0], side_order[m[1]], m[2])))
        for slot, member in enumerate(members):
            ref_of[member] = SlotRef(group=gi, slot=slot)
        n = len(members)
        groups.append(
            PrecondGroup(
                dim=dim,
                exponent=exponent,
                members=members,
                ema=np.zeros((n, dim, dim)),
                roots=np.broadcast_to(np.eye(dim), (n, dim, dim)).copy(),
            )
        )

    layers = []
    adam = []
    momentum = [] if track_momentum else None
    for layer_id, shape in enumerate(shapes):
        layout, bounds = layer_meta[layer_id]
        if layout is not None:
            n_blocks = layout.num_blocks
            left = tuple(ref_of[(layer_id, "L", i)] for i in range(n_blocks))
            right = tuple(ref_of[(layer_id, "R", i)] for i in range(n_blocks))
            layers.append(LayerState(layer_id, shape, layout, None, left, right))
        else:
            left = tuple(ref_of[(layer_id, "L", i)] for i in range(len(bounds)))
            layers.append(LayerState(layer_id, shape, None, bounds, left, None))
        adam.append(np.zeros(shape))
        if momentum is not None:
            momentum.append(np.zeros(shape))
    return ShampooState(step=0, layers=layers, groups=groups, adam=adam, momentum=momentum)


def init_state(params: list[np.ndarray], cfg: ShampooConfig) -> ShampooState:
    shapes = [tuple(p.shape) for p in params]
    return _build_structure(shapes, cfg.block_size, cfg.graft.beta1 > 0.0)


def accumulate(state: ShampooState, grads: list[np.ndarray], cfg: ShampooConfig) -> ShampooState:
    """EMA update of every preconditioner block and the Adam second moment."""
    if len(grads) != len(state.layers):
        raise ValueError(f"expected {len(state.layers)} gradients, got {len(grads)}")
    beta = cfg.beta_lr
    beta2 = cfg.graft.beta2
    for layer, g in zip(state.layers, grads):
        if tuple(g.shape) != layer.shape:
            raise ValueError(f"layer {layer.layer_id}: gradient shape {g.shape} != {layer.shape}")
        if layer.is_matrix:
            part = partition(g, cfg.block_size)
            if len(part.layout.full_spans):
                gf = part.full_blocks
                left_prod = bmm(gf, gf.transpose(0, 2, 1))
                right_prod = bmm(gf.transpose(0, 2, 1), gf)
            for idx in range(layer.layout.num_blocks):
                n_full = len(part.layout.full_spans)
                if idx < n_full:
                    lp, rp = left_prod[idx], right_prod[idx]
                else:
                    blk = part.remainder_blocks[idx - n_full][1]
                    lp = matmul(blk, blk.T)
                    rp = matmul(blk.T, blk)
                lref, rref = layer.left_refs[idx], layer.right_refs[idx]
                lg, rg = state.groups[lref.group], state.groups[rref.group]
                lg.ema[lref.slot] = symmetrize(beta * lg.ema[lref.slot] + (1.0 - beta) * lp)
                rg.ema[rref.slot] = symmetrize(beta * rg.ema[rref.slot] + (1.0 - beta) * rp)
        else:
            for idx, (s, e) in enumerate(layer.chunk_bounds):
                gc = g[s:e][:, None]
                ref = layer.left_refs[idx]
                grp = state.groups[ref.group]
                grp.ema[ref.slot] = symmetrize(
                    beta * grp.ema[ref.slot] + (1.0 - beta) * matmul(gc, gc.T)
                )
    for i, g in enumerate(grads):
        state.adam[i] = beta2 * state.adam[i] + (1.0 - beta2) * g * g
        if state.momentum is not None:
            b1 = cfg.graft.beta1
            state.momentum[i] = b1 * state.momentum[i] + (1.0 - b1) * g
    return state


_cheb_cache: dict[tuple, ChebCoefficients] = {}


def _solver_coefficients(solver: SolverConfig, p: int) -> ChebCoefficients:
    interval = solver.cheb_interval if solver.cheb_interval is not None else (1e-10, 1.0 + 1e-10)
    key = (p, solver.cheb_degree, solver.cheb_points, interval)
    if key not in _cheb_cache:
        _cheb_cache[key] = fit_inverse_root(
            p, degree=solver.cheb_degree, num_points=solver.cheb_points, interval=interval
        )
    return _cheb_cache[key]


def _group_scales(a: np.ndarray, mode: ScalingMode, seed: int) -> np.ndarray:
    if isinstance(mode, Frobenius):
        return np.sqrt((a * a).sum(axis=(1, 2)))
    estimates = batched_multi_power_iteration(a, mode.pool, mode.iters, seed)
    return np.array([2.0 * est.lam for est in estimates])


def _check_reports(group: PrecondGroup, reports) -> None:
    failed = [i for i, r in enumerate(reports) if not r.converged]
    if failed:
        details = ", ".join(
            f"layer {group.members[i][0]} side {group.members[i][1]} block {group.members[i][2]}"
            f" (residual {reports[i].residual:.3e})"
            for i in failed
        )
        raise ConvergenceError(f"inverse-root solver failed on: {details}")


def refresh_inverse_roots(state: ShampooState, cfg: ShampooConfig, seed: int = 0) -> ShampooState:
    """Recompute cached inverse roots; no-op unless step % update_freq == 0."""
    if state.step % cfg.update_freq != 0:
        return state
    solver = cfg.solver
    for gi, group in enumerate(state.groups):
        p = group.exponent
        if solver.method == "evd":
            group.roots = batched_evd_inverse_root(group.ema, p, solver.heuristic)
            continue
        a = group.ema + cfg.epsilon * np.eye(group.dim)
        scales = _group_scales(a, solver.scaling, block_seed(seed, gi))
        if (scales <= 0).any():
            raise ConvergenceError(f"non-positive scale in group of dim {group.dim}")
        a_hat = a / scales[:, None, None]
        if solver.method == "cn":
            cn_cfg = CnConfig(p=p, tolerance=solver.tolerance, max_iters=solver.max_iters)
            roots, reports = batched_coupled_newton(a_hat, cn_cfg, solver.precision)
            if solver.require_convergence:
                _check_reports(group, reports)
        elif solver.method == "ndb":
            ndb_cfg = NdbConfig(tolerance=solver.tolerance, max_iters=solver.max_iters)
            if p == 2:
                _, roots, reports = batched_newton_db(a_hat, ndb_cfg)
                if solver.require_convergence:
                    _check_reports(group, reports)
            else:
                sqrts, _, first = batched_newton_db(a_hat, ndb_cfg)
                _, roots, second = batched_newton_db(sqrts, ndb_cfg)
                if solver.require_convergence:
                    _check_reports(group, first)
                    _check_reports(group, second)
        else:  # cbshv
            coeffs = _solver_coefficients(solver, p)
            group.roots = batched_clenshaw_matrix(a, coeffs, scales, solver.precision, optimized=True)
            continue
        group.roots = roots * np.power(scales, -1.0 / p)[:, None, None]
    return state


def graft_scale(u: np.ndarray, p: np.ndarray) -> float:
    """Frobenius-norm ratio ||p|| / ||u||; zero when the update vanishes."""
    if u.shape != p.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {p.shape}")
    nu = frobenius_norm(u)
    if nu == 0.0:
        return 0.0
    return frobenius_norm(p) / nu


def step(
    state: ShampooState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    cfg: ShampooConfig,
    seed: int = 0,
) -> tuple[list[np.ndarray], ShampooState]:
    """One optimizer step; returns updated parameters and the mutated state."""
    if len(params) != len(state.layers):
        raise ValueError(f"expected {len(state.layers)} parameter tensors, got {len(params)}")
    t = state.step
    accumulate(state, grads, cfg)
    refresh_inverse_roots(state, cfg, seed=block_seed(seed, t))
    eta = cfg.lr.value(t)
    n_acc = t + 1
    beta2 = cfg.graft.beta2
    beta1 = cfg.graft.beta1
    new_params = []
    for li, (layer, theta, g) in enumerate(zip(state.layers, params, grads)):
        theta = theta.copy()
        numerator = g if beta1 == 0.0 else state.momentum[li] / (1.0 - beta1**n_acc)
        a_hat = state.adam[li] / (1.0 - beta2**n_acc)
        graft_dir = numerator / (cfg.graft.graft_eps + np.sqrt(a_hat))
        if layer.is_matrix:
            for idx, ((r0, r1), (c0, c1)) in enumerate(layer.layout.block_spans):
                gb = g[r0:r1, c0:c1]
                lref, rref = layer.left_refs[idx], layer.right_refs[idx]
                root_l = state.groups[lref.group].roots[lref.slot]
                root_r = state.groups[rref.group].roots[rref.slot]
                u = matmul(matmul(root_l, gb), root_r)
                s = graft_scale(u, graft_dir[r0:r1, c0:c1])
                theta[r0:r1, c0:c1] -= eta * s * u
        else:
            for idx, (s0, e0) in enumerate(layer.chunk_bounds):
                gc = g[s0:e0][:, None]
                ref = layer.left_refs[idx]
                root_l = state.groups[ref.group].roots[ref.slot]
                u = matmul(root_l, gc)
                s = graft_scale(u, graft_dir[s0:e0][:, None])
                theta[s0:e0] -= eta * s * u[:, 0]
        new_params.append(theta)
    state.step = t + 1
    return new_params, state


# --- checkpointing -----------------------------------------------------------

def _config_echo(cfg: ShampooConfig) -> list[str]:
    scaling = cfg.solver.scaling
    if isinstance(scaling, Frobenius):
        scaling_desc = "fro"
    else:
        scaling_desc = f"pi pool={scaling.pool} iters={scaling.iters}"
    return [
        f"beta_lr = {cfg.beta_lr!r}",
        f"epsilon = {cfg.epsilon!r}",
        f"update_freq = {cfg.update_freq}",
        f"block_size = {cfg.block_size}",
        f"solver = {cfg.solver.method}",
        f"scaling = {scaling_desc}",
        f"tolerance = {cfg.solver.tolerance!r}",
        f"max_iters = {cfg.solver.max_iters}",
        f"precision = {cfg.solver.precision.value}",
        f"lr_kind = {cfg.lr.kind}",
        f"lr_base = {cfg.lr.base!r}",
        f"graft_beta1 = {cfg.graft.beta1!r}",
        f"graft_beta2 = {cfg.graft.beta2!r}",
        f"graft_eps = {cfg.graft.graft_eps!r}",
    ]


def save_state(state: ShampooState, cfg: ShampooConfig, path) -> None:
    """Single-file text checkpoint: config echo, then one section per buffer."""
    lines = ["# blockshampoo checkpoint v1", f"step = {state.step}"]
    lines.extend(_config_echo(cfg))
    lines.append(f"momentum = {0 if state.momentum is None else 1}")
    lines.append(f"layer_count = {len(state.layers)}")
    for layer in state.layers:
        lines.append(f"layer {layer.layer_id} shape = {' '.join(str(d) for d in layer.shape)}")
    parts = ["\n".join(lines) + "\n"]
    for layer in state.layers:
        refs = [("L", layer.left_refs)]
        if layer.right_refs is not None:
            refs.append(("R", layer.right_refs))
        for side, ref_list in refs:
            for idx, ref in enumerate(ref_list):
                group = state.groups[ref.group]
                parts.append(f"[layer {layer.layer_id} side {side} block {idx} ema]\n")
                parts.append(format_matrix(group.ema[ref.slot]))
                parts.append(f"[layer {layer.layer_id} side {side} block {idx} root]\n")
                parts.append(format_matrix(group.roots[ref.slot]))
        adam = state.adam[layer.layer_id]
        parts.append(f"[layer {layer.layer_id} adam]\n")
        parts.append(format_matrix(adam if adam.ndim == 2 else adam[None, :]))
        if state.momentum is not None:
            mom = state.momentum[layer.layer_id]
            parts.append(f"[layer {layer.layer_id} momentum]\n")
            parts.append(format_matrix(mom if mom.ndim == 2 else mom[None, :]))
    with open(path, "w") as fh:
        fh.write("".join(parts))


def load_state(path) -> tuple[ShampooState, dict[str, str]]:
    """Rebuild a checkpointed state; returns it with the echoed config."""
    with open(path) as fh:
        text = fh.read()
    head, *sections = text.split("\n[")
    meta: dict[str, str] = {}
    shapes: dict[int, tuple[int, ...]] = {}
    for line in head.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("layer ") and key.endswith(" shape"):
            layer_id = int(key.split()[1])
            shapes[layer_id] = tuple(int(v) for v in value.split())
        else:
            meta[key] = value
    expected = int(meta["layer_count"])
    if sorted(shapes) != list(range(expected)):
        raise ValueError("checkpoint is missing layer shape declarations")
    state = _build_structure([shapes[i] for i in range(expected)], int(meta["block_size"]), meta["momentum"] == "1")
    state.step = int(meta["step"])
    seen: set[str] = set()
    for section in sections:
        header, _, body = section.partition("]\n")
        tokens = header.split()
        layer = state.layers[int(tokens[1])]
        data = parse_matrix(body)
        if tokens[2] == "adam":
            state.adam[layer.layer_id] = data if layer.is_matrix else data[0]
        elif tokens[2] == "momentum":
            if state.momentum is None:
                raise ValueError("checkpoint has momentum sections but momentum flag is 0")
            state.momentum[layer.layer_id] = data if layer.is_matrix else data[0]
        else:
            side, idx, kind = tokens[3], int(tokens[5]), tokens[6]
            ref = (layer.left_refs if side == "L" else layer.right_refs)[idx]
            group = state.groups[ref.group]
            if kind == "ema":
                group.ema[ref.slot] = data
            else:
                group.roots[ref.slot] = data
        seen.add(header)
    for layer in state.layers:
        sides = ["L"] + (["R"] if layer.right_refs is not None else [])
        count = len(layer.left_refs)
        for side in sides:
            for idx in range(count):
                for kind in ("ema", "root"):
                    key = f"layer {layer.layer_id} side {side} block {idx} {kind}"
                    if key not in seen:
                        raise ValueError(f"checkpoint is missing section [{key}]")
        if f"layer {layer.layer_id} adam" not in seen:
            raise ValueError(f"checkpoint is missing section [layer {layer.layer_id} adam]")
    return state, meta

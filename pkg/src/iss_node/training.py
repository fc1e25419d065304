"""Monte-Carlo trajectory loss, exact gradients and ADAM training.

The forward pass is a fixed-grid BS3 solve started at the DC operating point
of each trajectory's initial input. Gradients are exact for that discrete
computation: reverse-mode through output interpolation and the recorded RK
stages, the implicit function theorem at the operating point, and the
eigenvector rule inside the ``rho`` rescaling.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .circuits import pwl_sq_error
from .data import Dataset, DatasetItem
from .equilibrium import NoConvergenceError, dc_pullback, solve_dc
from .model import LEARNABLES, CtrnnParams, realize, realized_to_learnable
from .numerics import NumericsError
from .solver import StepRecord, Trajectory, backprop_fixed_grid, fixed_grid_forward, interp, stage_inputs
from .stability import certify, lds_margin

log = logging.getLogger(__name__)

MODES = ("proposed", "proposed_omega_identity", "baseline")
METRIC_FIELDS = ("epoch", "train_loss", "valid_mse", "lds_margin", "rho")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 100
    batch_size: int = 8
    K: int = 32
    delta: float = 1e-3
    grid_steps: int = 200
    seed: int = 0
    mode: str = "proposed"
    state_dim: int = 4
    hidden: int = 16
    kind: str = "relu"
    tau_init: float = 0.1
    lr_final: float | None = None  # cosine decay target; None keeps lr constant
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.K < 1 or self.batch_size < 1 or self.grid_steps < 1 or self.epochs < 0:
            raise ValueError("K, batch_size and grid_steps must be >= 1, epochs >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.hidden < self.state_dim:
            raise ValueError("hidden dimension must be at least the state dimension")
        unknown = set(self.frozen) - set(LEARNABLES)
        if unknown:
            raise ValueError(f"unknown learnables in frozen: {sorted(unknown)}")
        object.__setattr__(self, "frozen", tuple(self.frozen))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d

    def frozen_set(self) -> set[str]:
        s = set(self.frozen)
        if self.mode != "proposed":
            s.add("log_omega")
        return s


# --- initialization -------------------------------------------------------------


def init_params(n: int, hidden: int, m: int, p: int, mode: str = "proposed", seed: int = 0,
                tau: float = 0.1, delta: float = 1e-3, kind: str = "relu") -> CtrnnParams:
    """Uniform entries in ``[-1/sqrt(l), 1/sqrt(l)]``.

    Constrained modes satisfy the stability condition through the rescaling.
    Baseline mode halves ``A`` until the diagonal-stability margin with
    ``Omega = I`` is negative, and is unconstrained afterwards.
    """
    if hidden < n:
        raise ValueError("hidden dimension must be at least the state dimension")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    a = 1.0 / math.sqrt(hidden)
    U = lambda *shape: rng.uniform(-a, a, size=shape)  # noqa: E731
    params = CtrnnParams(
        log_tau=math.log(tau), W=U(n, hidden), A_theta=U(hidden, n), B=U(hidden, m), mu=U(hidden),
        nu=U(n), H=U(p, n), b=U(p), log_omega=np.zeros(hidden), delta=delta,
        constrained=mode != "baseline", omega_learned=mode == "proposed", kind=kind,
    )
    if mode == "baseline":
        A = params.A_theta
        while lds_margin(A, params.W, tau, np.ones(hidden)) >= 0.0:
            A = 0.5 * A
        params = params.with_arrays(A_theta=A)
    return params


def init_from_config(cfg: TrainConfig, m: int, p: int) -> CtrnnParams:
    return init_params(cfg.state_dim, cfg.hidden, m, p, cfg.mode, cfg.seed, cfg.tau_init, cfg.delta, cfg.kind)


# --- prepared trajectories ----------------------------------------------------


@dataclass
class Prepared:
    """One normalized (u, y) pair with its stage inputs on the training grid."""

    u: Trajectory
    y: Trajectory
    grid: np.ndarray
    stages: np.ndarray  # (steps, 3, m)
    index: int = 0

    @property
    def u0(self) -> np.ndarray:
        return self.u.values[0]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


def prepare(u: Trajectory, y: Trajectory, grid_steps: int, horizon: float | None = None, index: int = 0) -> Prepared:
    T = float(u.t1 if horizon is None else horizon)
    grid = np.linspace(0.0, T, grid_steps + 1)
    return Prepared(u, y, grid, stage_inputs(u, grid), index)


def prepare_items(dataset: Dataset, items: list[DatasetItem], grid_steps: int) -> list[Prepared]:
    out = []
    for it in items:
        u, y = dataset.normalized(it)
        out.append(prepare(u, y, grid_steps, dataset.horizon, it.index))
    return out


# --- forward / backward ---------------------------------------------------------


@dataclass
class Forward:
    r: object
    batch: list[Prepared]
    x0: np.ndarray  # (B, n)
    rec: StepRecord  # states (steps + 1, B, n)
    excluded: list[int]


def forward(params: CtrnnParams, batch: list[Prepared]) -> Forward:
    """Fixed-grid solve of every trajectory in ``batch`` from its operating
    point. Trajectories whose DC solve fails are dropped and listed."""
    if not batch:
        raise ValueError("empty batch")
    grid = batch[0].grid
    if any(pt.grid.shape != grid.shape or np.any(pt.grid != grid) for pt in batch):
        raise ValueError("all trajectories in a batch must share the time grid")
    r = realize(params)
    keep, x0s, excluded = [], [], []
    for pt in batch:
        try:
            x0s.append(solve_dc(r, pt.u0).x0)
            keep.append(pt)
        except (NoConvergenceError, NumericsError) as exc:
            log.debug("trajectory %d excluded: %s", pt.index, exc)
            excluded.append(pt.index)
    if not keep:
        return Forward(r, [], np.zeros((0, params.n)), None, excluded)
    X0 = np.array(x0s)
    U = np.stack([pt.stages for pt in keep], axis=2)  # (steps, 3, B, m)
    with np.errstate(over="ignore", invalid="ignore"):
        rec = fixed_grid_forward(lambda t, x, u: r.f(x, u), X0, grid, U)
    return Forward(r, keep, X0, rec, excluded)


def _interp_states(states, grid, S):
    """Linear interpolation of grid states at times ``S`` (B, K): returns the
    lower node index, its weight split and the interpolated states."""
    steps = grid.size - 1
    h = grid[1] - grid[0]
    k = np.clip(np.floor((S - grid[0]) / h).astype(int), 0, steps - 1)
    w = np.clip((S - grid[k]) / h, 0.0, 1.0)
    b_idx = np.arange(S.shape[0])[:, None]
    xs = (1.0 - w)[..., None] * states[k, b_idx] + w[..., None] * states[k + 1, b_idx]
    return k, w, xs


@dataclass
class LossResult:
    loss: float
    grads: dict | None
    used: int
    excluded: list[int]


def loss_and_grad(params: CtrnnParams, batch: list[Prepared], K: int, rng: np.random.Generator,
                  want_grad: bool = True, sample_times=None, frozen=()) -> LossResult:
    """Monte-Carlo estimate of the batch-mean time-averaged squared output
    error (summed over channels) and, optionally, its exact gradient.

    ``sample_times`` (K,) replaces the random draw, shared by all trajectories.
    """
    fw = forward(params, batch)
    B = len(fw.batch)
    if B == 0:
        return LossResult(float("nan"), None, 0, fw.excluded)
    grid = fw.rec.grid
    T = float(grid[-1])
    if sample_times is None:
        S = rng.uniform(0.0, T, size=(B, K))
    else:
        S = np.broadcast_to(np.asarray(sample_times, dtype=float), (B, np.size(sample_times)))
    Kc = S.shape[1]
    k, w, xs = _interp_states(fw.rec.states, grid, S)
    y_model = xs @ params.H.T + params.b
    y_true = np.stack([interp(pt.y, S[i]) for i, pt in enumerate(fw.batch)])
    res = y_model - y_true
    loss = float(np.sum(res**2) / (B * Kc))
    if not want_grad:
        return LossResult(loss, None, B, fw.excluded)
    if not math.isfinite(loss):
        return LossResult(loss, None, B, fw.excluded)

    gres = 2.0 * res / (B * Kc)
    grads: dict = {"H": np.einsum("bkp,bkn->pn", gres, xs), "b": gres.sum(axis=(0, 1))}
    gxs = gres @ params.H
    g_states = np.zeros_like(fw.rec.states)
    b_idx = np.broadcast_to(np.arange(B)[:, None], k.shape)
    np.add.at(g_states, (k, b_idx), (1.0 - w)[..., None] * gxs)
    np.add.at(g_states, (k + 1, b_idx), w[..., None] * gxs)
    r = fw.r
    gx0 = backprop_fixed_grid(fw.rec, lambda t, x, u, g: r.vjp(x, u, g, grads), g_states)
    for i, pt in enumerate(fw.batch):
        try:
            dc_pullback(r, pt.u0, fw.x0[i], gx0[i], grads)
        except NumericsError:
            # singular Jacobian at the operating point: drop the x0 sensitivity
            log.debug("trajectory %d: singular DC Jacobian in pullback", pt.index)
    out = realized_to_learnable(r, grads)
    for name in frozen:
        out[name] = np.zeros_like(out[name]) if name != "log_tau" else 0.0
    return LossResult(loss, out, B, fw.excluded)


def mc_loss(params: CtrnnParams, batch: list[Prepared], K: int, rng, sample_times=None) -> float:
    return loss_and_grad(params, batch, K, rng, want_grad=False, sample_times=sample_times).loss


def grad(params: CtrnnParams, batch: list[Prepared], K: int, rng, sample_times=None, frozen=()) -> dict:
    return loss_and_grad(params, batch, K, rng, sample_times=sample_times, frozen=frozen).grads


def min_kink_distance(params: CtrnnParams, batch: list[Prepared]) -> float:
    """Smallest |pre-activation| over every stage evaluation of the forward
    pass and the operating points (ReLU derivatives jump at 0)."""
    fw = forward(params, batch)
    r, rec = fw.r, fw.rec
    d = np.inf
    U = rec.inputs
    for stage, X in ((0, rec.states[:-1]), (1, rec.stage2), (2, rec.stage3)):
        d = min(d, float(np.min(np.abs(r.preact(X, U[:, stage])))))
    for i, pt in enumerate(fw.batch):
        d = min(d, float(np.min(np.abs(r.preact(fw.x0[i], pt.u0)))))
    return d


# --- evaluation -----------------------------------------------------------------


@dataclass
class EvalReport:
    per_channel: np.ndarray
    mse: float
    per_trajectory: np.ndarray
    used: int
    excluded: list[int]

    def to_dict(self) -> dict:
        return {"mse": self.mse, "per_channel": self.per_channel.tolist(),
                "per_trajectory": self.per_trajectory.tolist(), "used": self.used, "excluded": self.excluded}


def evaluate_openloop(params: CtrnnParams, batch: list[Prepared]) -> EvalReport:
    """Normalized-scale MSE of the open-loop replay: the time average over
    [0, T] of the squared error between the piecewise-linear model output on
    the solver grid and the recorded target, integrated exactly. Reported per
    channel (mean over trajectories) and as the mean over channels."""
    fw = forward(params, batch)
    if not fw.batch:
        nan = np.full(params.p, np.nan)
        return EvalReport(nan, float("nan"), np.zeros((0, params.p)), 0, fw.excluded)
    T = float(fw.rec.grid[-1])
    ys = fw.rec.states @ params.H.T + params.b  # (steps + 1, B, p)
    per = np.array([pwl_sq_error(Trajectory(fw.rec.grid, ys[:, i]), pt.y, T) / T
                    for i, pt in enumerate(fw.batch)])
    per_ch = per.mean(axis=0)
    return EvalReport(per_ch, float(per_ch.mean()), per, len(fw.batch), fw.excluded)


def predict(params: CtrnnParams, pt: Prepared) -> Trajectory:
    fw = forward(params, [pt])
    if not fw.batch:
        raise NoConvergenceError("DC solve failed", np.zeros(params.n), float("nan"))
    return Trajectory(fw.rec.grid, fw.rec.states[:, 0] @ params.H.T + params.b)


# --- optimizer ------------------------------------------------------------------


@dataclass
class TrainState:
    params: CtrnnParams
    m: dict
    v: dict
    step: int = 0
    history: list = field(default_factory=list)
    rng: np.random.Generator | None = None
    rejected: int = 0

    @classmethod
    def fresh(cls, params: CtrnnParams, seed: int = 0) -> "TrainState":
        zeros = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        return cls(params, zeros, {k: np.zeros_like(v) for k, v in zeros.items()},
                   rng=np.random.default_rng([seed, 0x7A]))


def adam_update(theta, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected ADAM update; returns (theta, m, v)."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    mh = m / (1.0 - beta1**t)
    vh = v / (1.0 - beta2**t)
    return theta - lr * mh / (np.sqrt(vh) + eps), m, v


def adam_step(state: TrainState, gradient: dict, cfg: TrainConfig, lr: float | None = None) -> TrainState:
    """Apply ADAM to every learnable with a gradient; a non-finite gradient
    rejects the whole step (parameters and moments are left unchanged)."""
    if any(not np.all(np.isfinite(np.asarray(g))) for g in gradient.values()):
        log.warning("non-finite gradient at step %d; step rejected", state.step)
        return replace(state, rejected=state.rejected + 1)
    lr = cfg.lr if lr is None else lr
    t = state.step + 1
    arrays = state.params.arrays()
    new, m, v = {}, dict(state.m), dict(state.v)
    for name, g in gradient.items():
        if name in cfg.frozen_set():
            continue
        new[name], m[name], v[name] = adam_update(
            arrays[name], np.asarray(g, dtype=float), m[name], v[name], t, lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
    new["log_tau"] = float(new.get("log_tau", state.params.log_tau))
    return replace(state, params=state.params.with_arrays(**new), m=m, v=v, step=t)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_final is None or cfg.epochs <= 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


# --- training loop --------------------------------------------------------------


@dataclass
class FitResult:
    state: TrainState
    best: CtrnnParams
    best_epoch: int
    best_valid_mse: float
    metrics: list[dict]
    excluded_total: int

    def write_metrics(self, path) -> None:
        write_metrics(self.metrics, path)


def write_metrics(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])


def _epoch_metrics(params: CtrnnParams, epoch: int, train_loss: float, valid_mse: float) -> dict:
    rep = certify(params)
    return {"epoch": epoch, "train_loss": train_loss, "valid_mse": valid_mse,
            "lds_margin": rep.lds_margin, "rho": rep.rho, "certified": rep.satisfied}


def fit(dataset: Dataset, cfg: TrainConfig, params: CtrnnParams | None = None,
        callback=None) -> FitResult:
    """Minibatch ADAM on the Monte-Carlo loss with per-epoch validation.

    Epoch 0 in the metrics is the initial model. The returned ``best`` is the
    parameter snapshot with the lowest validation MSE.
    """
    train = prepare_items(dataset, dataset.split("train"), cfg.grid_steps)
    valid = prepare_items(dataset, dataset.split("valid"), cfg.grid_steps) or train
    m, p = train[0].u.dim, train[0].y.dim
    params = params or init_from_config(cfg, m, p)
    state = TrainState.fresh(params, cfg.seed)
    frozen = tuple(sorted(cfg.frozen_set()))

    v0 = evaluate_openloop(params, valid).mse
    l0 = loss_and_grad(params, train, cfg.K, np.random.default_rng([cfg.seed, 0]), want_grad=False).loss
    metrics = [_epoch_metrics(params, 0, l0, v0)]
    best, best_epoch, best_mse = params, 0, v0
    excluded_total = 0
    order_rng = np.random.default_rng([cfg.seed, 0x5B])
    for epoch in range(1, cfg.epochs + 1):
        lr = _lr_at(cfg, epoch - 1)
        perm = order_rng.permutation(len(train))
        losses, weights = [], []
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in sorted(perm[start:start + cfg.batch_size])]
            res = loss_and_grad(state.params, batch, cfg.K, state.rng, frozen=frozen)
            excluded_total += len(res.excluded)
            if res.grads is None:
                state = replace(state, rejected=state.rejected + 1)
                continue
            losses.append(res.loss)
            weights.append(res.used)
            state = adam_step(state, res.grads, cfg, lr)
        train_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        vm = evaluate_openloop(state.params, valid).mse
        row = _epoch_metrics(state.params, epoch, train_loss, vm)
        metrics.append(row)
        state.history.append(train_loss)
        if math.isfinite(vm) and vm < best_mse:
            best, best_epoch, best_mse = state.params, epoch, vm
        if callback is not None:
            callback(row)
        log.info("epoch %d loss %.3e valid %.3e margin %.3e", epoch, train_loss, vm, row["lds_margin"])
    return FitResult(state, best, best_epoch, best_mse, metrics, excluded_total)


def save_checkpoint(path, params: CtrnnParams, state: TrainState | None = None, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    if state is not None:
        doc["optimizer"] = {
            "step": state.step,
            "m": {k: np.asarray(v).tolist() for k, v in state.m.items()},
            "v": {k: np.asarray(v).tolist() for k, v in state.v.items()},
        }
    params.save(Path(path), doc)


__all__ = [
    "TrainConfig", "TrainState", "Prepared", "LossResult", "EvalReport", "FitResult",
    "init_params", "init_from_config", "prepare", "prepare_items", "forward",
    "loss_and_grad", "mc_loss", "grad", "min_kink_distance", "evaluate_openloop", "predict",
    "adam_update", "adam_step", "fit", "write_metrics", "save_checkpoint",
]

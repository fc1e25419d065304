"""CTRNN dynamics with the stabilising rescaling of the hidden-layer weights.

    dx/dt = -x / tau + W sigma(A x + B u + mu) + nu
        y = H x + b

With ``constrained`` set, ``A = A_theta / (rho + 1)`` where ``rho`` is the
smallest non-negative scaling that makes ``A W - I/tau`` Lyapunov diagonally
stable with respect to ``Omega`` with margin ``delta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import DiagPos, sym_lambda_max_vec

SCHEMA = "iss-node-params-v1"
LEARNABLES = ("log_tau", "W", "A_theta", "B", "mu", "nu", "H", "b", "log_omega")
NONLINEARITIES = ("relu", "tanh")


class DimensionError(ValueError):
    pass


def sigma(w, kind: str = "relu") -> np.ndarray:
    if kind == "relu":
        return np.maximum(w, 0.0)
    if kind == "tanh":
        return np.tanh(w)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def sigma_slope(w, kind: str = "relu") -> np.ndarray:
    """Element-wise derivative; the ReLU subgradient at exactly 0 is 0."""
    if kind == "relu":
        return (np.asarray(w) > 0.0).astype(float)
    if kind == "tanh":
        return 1.0 - np.tanh(w) ** 2
    raise ValueError(f"unknown nonlinearity {kind!r}")


def sigma_integral(s, kind: str = "relu") -> np.ndarray:
    """Antiderivative of sigma vanishing at 0."""
    s = np.asarray(s, dtype=float)
    if kind == "relu":
        return 0.5 * np.maximum(s, 0.0) ** 2
    if kind == "tanh":
        a = np.abs(s)
        return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    raise ValueError(f"unknown nonlinearity {kind!r}")


@dataclass(frozen=True)
class CtrnnParams:
    log_tau: float
    W: np.ndarray  # n x l
    A_theta: np.ndarray  # l x n
    B: np.ndarray  # l x m
    mu: np.ndarray  # l
    nu: np.ndarray  # n
    H: np.ndarray  # p x n
    b: np.ndarray  # p
    log_omega: np.ndarray  # l
    delta: float = 1e-3
    constrained: bool = True
    omega_learned: bool = True
    kind: str = "relu"

    def __post_init__(self):
        for name in LEARNABLES[1:]:
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        object.__setattr__(self, "log_tau", float(self.log_tau))
        n, l = self.W.shape
        m = self.B.shape[1] if self.B.ndim == 2 else -1
        p = self.H.shape[0] if self.H.ndim == 2 else -1
        expected = {
            "A_theta": (l, n), "B": (l, m), "mu": (l,), "nu": (n,),
            "H": (p, n), "b": (p,), "log_omega": (l,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if l < n:
            raise DimensionError(f"hidden dimension {l} must be at least the state dimension {n}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.kind not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        if not all(np.all(np.isfinite(v)) for v in self.arrays().values()):
            raise ValueError("parameters contain non-finite entries")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @property
    def omega(self) -> DiagPos:
        return DiagPos(self.log_omega)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(getattr(self, k), dtype=float) for k in LEARNABLES}

    def with_arrays(self, **arrays) -> "CtrnnParams":
        return replace(self, **arrays)

    def to_dict(self) -> dict:
        def mat(M):
            M = np.asarray(M, dtype=float)
            return {"rows": M.shape[0], "cols": M.shape[1], "entries": M.ravel().tolist()}

        return {
            "schema": SCHEMA,
            "dims": {"n": self.n, "l": self.hidden, "m": self.m, "p": self.p},
            "log_tau": self.log_tau,
            "W": mat(self.W),
            "A_theta": mat(self.A_theta),
            "B": mat(self.B),
            "mu": self.mu.tolist(),
            "nu": self.nu.tolist(),
            "H": mat(self.H),
            "b": self.b.tolist(),
            "log_omega": self.log_omega.tolist(),
            "delta": self.delta,
            "constrained": self.constrained,
            "omega_learned": self.omega_learned,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CtrnnParams":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported parameter schema {d.get('schema')!r}")

        def mat(e):
            return np.array(e["entries"], dtype=float).reshape(e["rows"], e["cols"])

        return cls(
            log_tau=d["log_tau"], W=mat(d["W"]), A_theta=mat(d["A_theta"]), B=mat(d["B"]),
            mu=d["mu"], nu=d["nu"], H=mat(d["H"]), b=d["b"], log_omega=d["log_omega"],
            delta=d["delta"], constrained=d["constrained"],
            omega_learned=d["omega_learned"], kind=d["kind"],
        )

    def save(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> "CtrnnParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _scaled_gram(A_theta, W, omega: DiagPos) -> np.ndarray:
    s, si = omega.sqrt(), omega.inv_sqrt()
    S = s[:, None] * (A_theta @ W) * si[None, :]
    return S


@dataclass
class Realized:
    """Concrete matrices of one parameter snapshot plus what backprop needs
    from the rescaling step."""

    params: CtrnnParams
    tau: float
    A: np.ndarray
    rho: float
    lam: float  # largest eigenvalue of S + S^T
    v: np.ndarray  # its eigenvector
    S: np.ndarray = field(repr=False)

    @property
    def W(self):
        return self.params.W

    @property
    def B(self):
        return self.params.B

    @property
    def mu(self):
        return self.params.mu

    @property
    def nu(self):
        return self.params.nu

    @property
    def kind(self):
        return self.params.kind

    def preact(self, x, u) -> np.ndarray:
        return x @ self.A.T + u @ self.B.T + self.mu

    def f(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1] != self.params.n or u.shape[-1] != self.params.m:
            raise DimensionError(
                f"state/input dims {x.shape[-1]}/{u.shape[-1]} do not match model {self.params.n}/{self.params.m}"
            )
        z = self.preact(x, u)
        return -x / self.tau + sigma(z, self.kind) @ self.W.T + self.nu

    def jac_x(self, x, u) -> np.ndarray:
        d = sigma_slope(self.preact(x, u), self.kind)
        return -np.eye(self.params.n) / self.tau + (self.W * d) @ self.A

    def jac_u(self, x, u) -> np.ndarray:
        d = sigma_slope(self.preact(x, u), self.kind)
        return (self.W * d) @ self.B

    def vjp(self, x, u, g, grads: dict | None = None) -> np.ndarray:
        """Pull back cotangent ``g`` (..., n) through f; accumulates gradients
        of the realized quantities (``A`` rather than ``A_theta``) into
        ``grads`` and returns the cotangent of ``x``."""
        z = self.preact(x, u)
        gz = (g @ self.W) * sigma_slope(z, self.kind)
        if grads is not None:
            g2, gz2 = g.reshape(-1, g.shape[-1]), gz.reshape(-1, gz.shape[-1])
            x2, u2 = x.reshape(-1, x.shape[-1]), u.reshape(-1, u.shape[-1])
            _acc(grads, "W", g2.T @ sigma(z, self.kind).reshape(-1, z.shape[-1]))
            _acc(grads, "A", gz2.T @ x2)
            _acc(grads, "B", gz2.T @ u2)
            _acc(grads, "mu", gz2.sum(axis=0))
            _acc(grads, "nu", g2.sum(axis=0))
            _acc(grads, "log_tau", float(np.sum(g2 * x2)) / self.tau)
        return -g / self.tau + gz @ self.A

    def output(self, x) -> np.ndarray:
        return np.asarray(x) @ self.params.H.T + self.params.b


def _acc(grads: dict, key: str, value) -> None:
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


def realize(params: CtrnnParams) -> Realized:
    S = _scaled_gram(params.A_theta, params.W, params.omega)
    lam, v = sym_lambda_max_vec(S + S.T)
    if params.constrained:
        rho = max(0.5 * params.tau * lam - 1.0 + params.delta, 0.0)
        A = params.A_theta / (rho + 1.0)
    else:
        rho = 0.0
        A = params.A_theta.copy()
    return Realized(params, params.tau, A, rho, lam, v, S)


def rho(params: CtrnnParams) -> float:
    """Rescaling amount for ``A_theta`` (computed even for unconstrained
    parameters, where it is reported but not applied)."""
    S = _scaled_gram(params.A_theta, params.W, params.omega)
    lam, _ = sym_lambda_max_vec(S + S.T)
    return max(0.5 * params.tau * lam - 1.0 + params.delta, 0.0)


def effective_A(params: CtrnnParams) -> np.ndarray:
    return realize(params).A


def dynamics(params: CtrnnParams, x, u) -> np.ndarray:
    return realize(params).f(x, u)


def output(params: CtrnnParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n:
        raise DimensionError(f"state dim {x.shape[-1]} does not match model {params.n}")
    return x @ params.H.T + params.b


def dynamics_jacobians(params: CtrnnParams, x, u):
    """Return (df/dx, df/du, vjp) at a single point; ``vjp(g)`` gives the
    gradient of ``g . f`` with respect to every learnable array."""
    r = realize(params)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)

    def vjp(g):
        grads: dict = {}
        r.vjp(x, u, np.asarray(g, dtype=float), grads)
        return realized_to_learnable(r, grads)

    return r.jac_x(x, u), r.jac_u(x, u), vjp


def realized_to_learnable(r: Realized, grads: dict) -> dict[str, np.ndarray]:
    """Chain gradients of realized quantities back to the learnable arrays,
    through ``A = A_theta / (rho + 1)`` and the eigenvalue inside ``rho``.

    The largest eigenvalue is differentiated as ``d lam = v^T dM v`` with ``v``
    its unit eigenvector, valid where that eigenvalue is simple.
    """
    p = r.params
    out = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    out["log_tau"] = 0.0
    for key in ("W", "B", "mu", "nu", "H", "b"):
        if key in grads:
            out[key] = out[key] + grads[key]
    out["log_tau"] += float(grads.get("log_tau", 0.0))
    gA = grads.get("A")
    if gA is not None:
        if not p.constrained:
            out["A_theta"] = out["A_theta"] + gA
        else:
            scale = 1.0 / (r.rho + 1.0)
            out["A_theta"] = out["A_theta"] + gA * scale
            active = 0.5 * p.tau * r.lam - 1.0 + p.delta > 0.0
            if active:
                g_rho = -float(np.sum(gA * p.A_theta)) * scale**2
                # rho = tau * lam / 2 - 1 + delta
                out["log_tau"] += g_rho * 0.5 * p.tau * r.lam
                g_lam = g_rho * 0.5 * p.tau
                v = r.v
                s, si = p.omega.sqrt(), p.omega.inv_sqrt()
                # lam = 2 v^T S v with S = diag(s) (A_theta W) diag(1/s)
                G = 2.0 * g_lam * np.outer(v * s, v * si)
                out["A_theta"] = out["A_theta"] + G @ p.W.T
                out["W"] = out["W"] + p.A_theta.T @ G
                Sv, STv = r.S @ v, r.S.T @ v
                out["log_omega"] = out["log_omega"] + g_lam * v * (Sv - STv)
    return out

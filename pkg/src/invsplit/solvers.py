"""Wiener deconvolution and an ADMM splitting solver for y = A x.

The ADMM problem is

    min_{x,z} ||y - A z||^2 + lam * R(x)   s.t.  z = x

with R = ||.||_1 (soft-thresholding prox) or R = 0 (identity prox). Each
iteration performs a z-update with the previous x, an x-update with the new z,
then the dual update u += 2 beta (x - z).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .forward.operators import bccb_transfer_function

DIVERGENCE_LIMIT = 1e6


@dataclass
class WienerConfig:
    k_reg: float = 0.0

    def __post_init__(self):
        if self.k_reg < 0:
            raise ValueError("k_reg must be nonnegative")


@dataclass
class ADMMConfig:
    """ADMM parameters. ``beta`` and ``lam`` have no defaults on purpose."""

    beta: float
    lam: float
    prox: str = "l1"
    z_solver: str = "fourier"
    cg_max_iter: int = 500
    cg_tol: float = 1e-12
    max_iter: int = 200
    tol_primal: float = 1e-8

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.prox not in ("l1", "identity"):
            raise ValueError(f"unknown prox {self.prox!r}")
        if self.z_solver not in ("fourier", "cg"):
            raise ValueError(f"unknown z_solver {self.z_solver!r}")
        if self.cg_tol <= 0 or self.tol_primal <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iter < 1 or self.cg_max_iter < 1:
            raise ValueError("iteration budgets must be >= 1")


class SingularFilterError(ZeroDivisionError):
    pass


class ADMMDivergence(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def wiener_deconvolve(y, kernel, cfg=None):
    """Periodic-boundary Wiener filter: conj(L) Y / (|L|^2 + k_reg), per channel."""
    cfg = cfg or WienerConfig()
    y = np.asarray(y, dtype=np.float64)
    _, h, w, c = y.shape
    if kernel.per_channel and kernel.channels != c:
        raise ValueError(f"kernel has {kernel.channels} channels, image has {c}")
    lam = bccb_transfer_function(kernel, h, w)
    power = np.abs(lam) ** 2
    if cfg.k_reg == 0 and np.any(np.abs(lam) < 1e-12):
        raise SingularFilterError("transfer function has zeros; k_reg = 0 is singular")
    X = np.conj(lam) * np.fft.fft2(y, axes=(1, 2)) / (power + cfg.k_reg)
    x = np.fft.ifft2(X, axes=(1, 2))
    resid = np.abs(x.imag).max() if x.size else 0.0
    assert resid < 1e-9, f"imaginary residue {resid}"
    return x.real


def soft_threshold(v, tau):
    if tau < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def conjugate_gradient(apply, b, x0, tol, max_iter):
    """Solve apply(x) = b for symmetric positive definite ``apply``.

    Returns (x, iterations, relative residual).
    """
    x = x0.copy()
    r = b - apply(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0, 0.0
    p = r.copy()
    rs = float(np.vdot(r, r))
    it = 0
    while it < max_iter and math.sqrt(rs) / bnorm > tol:
        Ap = apply(p)
        alpha = rs / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, math.sqrt(rs) / bnorm


def admm_z_update(y, x, u, A, cfg):
    """Solve (A^T A + beta I) z = A^T y + beta (x + u / (2 beta)).

    Returns (z, info) where info records the solver, iterations and relative residual.
    """
    beta = cfg.beta
    rhs = A.adjoint(y) + beta * (x + u / (2 * beta))
    if cfg.z_solver == "fourier":
        if not A.is_bccb:
            raise ValueError(f"fourier z-solver requires a BCCB operator, got {type(A).__name__}")
        lam = A.transfer()
        Z = np.fft.fft2(rhs, axes=(1, 2)) / (np.abs(lam) ** 2 + beta)
        return np.fft.ifft2(Z, axes=(1, 2)).real, {"solver": "fourier", "iterations": 0, "residual": 0.0}
    z, it, res = conjugate_gradient(lambda v: A.gram(v) + beta * v, rhs, x, cfg.cg_tol, cfg.cg_max_iter)
    return z, {"solver": "cg", "iterations": it, "residual": res}


def admm_x_update(z, u, cfg):
    v = z - u / (2 * cfg.beta)
    if cfg.prox == "identity" or cfg.lam == 0:
        return v
    return soft_threshold(v, cfg.lam / (2 * cfg.beta))


def admm_u_update(u, x, z, beta):
    return u + 2 * beta * (x - z)


@dataclass
class ADMMResult:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.trace)


def admm_objective(y, A, x, z, cfg):
    data = float(np.sum((y - A.forward(z)) ** 2))
    if cfg.prox == "l1":
        data += cfg.lam * float(np.abs(x).sum())
    return data


def admm_solve(y, A, cfg):
    """Run ADMM from x = z = A^T y, u = 0.

    Stops once both the primal residual ||x - z|| / sqrt(n) and the change in z
    per iteration fall below ``tol_primal``, or after ``max_iter`` iterations.
    """
    y = np.asarray(y, dtype=np.float64)
    x = A.adjoint(y)
    z = x.copy()
    u = np.zeros_like(x)
    n = x.size
    trace = []
    for k in range(1, cfg.max_iter + 1):
        z_prev = z
        z, _ = admm_z_update(y, x, u, A, cfg)
        x = admm_x_update(z, u, cfg)
        u = admm_u_update(u, x, z, cfg.beta)
        primal = float(np.linalg.norm(x - z)) / math.sqrt(n)
        dual = float(np.linalg.norm(z - z_prev)) / math.sqrt(n)
        with np.errstate(over="ignore", invalid="ignore"):
            obj = admm_objective(y, A, x, z, cfg)
        trace.append({"iteration": k, "primal_residual": primal, "objective": obj})
        worst = max(primal, dual)
        if not (np.isfinite(worst) and np.isfinite(obj)) or worst > DIVERGENCE_LIMIT:
            raise ADMMDivergence(f"residual {worst:.3g}, objective {obj:.3g} at iteration {k}", trace)
        if primal <= cfg.tol_primal and dual <= cfg.tol_primal:
            return ADMMResult(x, z, u, trace, converged=True)
    return ADMMResult(x, z, u, trace, converged=False)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "primal_residual", "objective"])
        for row in trace:
            w.writerow([row["iteration"], repr(row["primal_residual"]), repr(row["objective"])])

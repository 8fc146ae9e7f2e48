"""Top eigenvalue of the cost Hessian and the concavity-inducing shift.

The quadratic part of the cost is ``1/2 <N u, u>`` with N self-adjoint but
typically indefinite.  Choosing ``mu = -lambda_max(N)`` makes the shifted
quadratic ``1/2 <(N + mu I) u, u>`` concave, and since a binary control
satisfies ``u_i^2 = u_i`` node-wise, the shifted cost

    J_mu(u) = J(u) + mu/2 <u, u> - mu/2 <1, u>

agrees with J exactly on binary controls.  lambda_max comes either from a
dense eigendecomposition (small trees) or shifted power iteration driven by
operator applications only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .model import ControlProcess, LQInstance
from .operators import (
    DENSE_DIMENSION_CAP,
    _apply_N_levels,
    assemble_N_dense,
    dense_dimension,
)

DEFAULT_POWER_TOL = 1e-9
DEFAULT_POWER_MAX_ITER = 5000
POWER_PROBES = 16


@dataclass(frozen=True)
class SpectralReport:
    lambda_max: float
    mu: float
    method: str
    dimension: int
    iterations: int = 0
    residual: float = 0.0
    shift: float = 0.0

    def to_dict(self) -> dict:
        return {
            "lambda_max": self.lambda_max,
            "mu": self.mu,
            "method": self.method,
            "dimension": self.dimension,
            "iterations": self.iterations,
            "residual": self.residual,
            "shift": self.shift,
        }


def _level_dot(tree, a_levels, b_levels) -> float:
    dt = tree.dt
    total = 0.0
    for m in range(tree.depth):
        total += tree.path_prob(m) * float(np.sum(a_levels[m] * b_levels[m]))
    return total * dt


def _level_norm(tree, a_levels) -> float:
    return float(np.sqrt(_level_dot(tree, a_levels, a_levels)))


def _random_unit_levels(inst: LQInstance, rng) -> list:
    tree = inst.tree
    levels = [rng.standard_normal((tree.num_nodes(m), inst.k))
              for m in range(tree.depth)]
    norm = _level_norm(tree, levels)
    if norm == 0.0:
        levels = [np.ones((tree.num_nodes(m), inst.k)) for m in range(tree.depth)]
        norm = _level_norm(tree, levels)
    return [lvl / norm for lvl in levels]


def _power_iteration(inst: LQInstance, tol: float, max_iter: int, seed: int):
    """Largest eigenvalue of N by power iteration on N + cI.

    The positive offset c is sized from operator-norm probes so that the
    spectrum of N + cI is positive and its top eigenvalue is
    lambda_max(N) + c.  Everything runs in the weighted (tree) inner
    product, on raw level arrays.
    """
    tree = inst.tree
    rng = np.random.default_rng(seed)
    probe_norm = 0.0
    for _ in range(POWER_PROBES):
        v = _random_unit_levels(inst, rng)
        nv = _apply_N_levels(inst, v)
        probe_norm = max(probe_norm, _level_norm(tree, nv))
    c = max(4.0 * probe_norm, 1e-12)

    v = _random_unit_levels(inst, rng)
    rho_prev = None
    for it in range(1, max_iter + 1):
        nv = _apply_N_levels(inst, v)
        w = [nv[m] + c * v[m] for m in range(tree.depth)]
        rho = _level_dot(tree, w, v)
        resid_levels = [w[m] - rho * v[m] for m in range(tree.depth)]
        residual = _level_norm(tree, resid_levels)
        scale = max(1.0, abs(rho))
        if rho_prev is not None and abs(rho - rho_prev) <= tol * scale \
                and residual <= 10.0 * tol * scale:
            if rho <= 0.01 * c:
                raise ConvergenceError(
                    "power iteration converged to a spurious eigenvalue "
                    f"(rho = {rho:.3e} against offset c = {c:.3e})",
                    residual=residual, iterations=it)
            return rho - c, it, residual, c
        rho_prev = rho
        norm = _level_norm(tree, w)
        if norm == 0.0:
            raise ConvergenceError(
                "power iterate vanished; the offset cannot separate the spectrum",
                residual=residual, iterations=it)
        v = [w[m] / norm for m in range(tree.depth)]
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        residual=residual, iterations=max_iter)


def lambda_max(inst: LQInstance, method: str = "auto",
               tol: float = DEFAULT_POWER_TOL,
               max_iter: int = DEFAULT_POWER_MAX_ITER,
               seed: int = 0) -> SpectralReport:
    """Compute lambda_max(N) and the shift mu = -lambda_max.

    ``method`` is ``"dense"``, ``"power"``, or ``"auto"`` (dense when the
    flattened dimension fits the cap, power otherwise).
    """
    dim = dense_dimension(inst)
    if method == "auto":
        method = "dense" if dim <= DENSE_DIMENSION_CAP else "power"
    if method == "dense":
        op = assemble_N_dense(inst)
        top = float(np.linalg.eigvalsh(op.matrix)[-1])
        return SpectralReport(lambda_max=top, mu=-top, method="dense", dimension=dim)
    if method == "power":
        top, iterations, residual, c = _power_iteration(inst, tol, max_iter, seed)
        return SpectralReport(lambda_max=top, mu=-top, method="power", dimension=dim,
                              iterations=iterations, residual=residual, shift=c)
    raise ValueError(f"unknown method {method!r}")


# -- shifted cost --------------------------------------------------------------


def _shift_delta_levels(tree, u_levels):
    """<u, u> - <1, u> summed as one pass over u*(u-1).

    For binary node values both 0*(0-1) and 1*(1-1) are exactly 0.0, so the
    shifted and raw costs agree bit for bit on binary controls.
    """
    dt = tree.dt
    total = 0.0
    for m in range(tree.depth):
        u = u_levels[m]
        total = total + tree.path_prob(m) * np.sum(u * (u - 1.0), axis=(-2, -1))
    return total * dt


def shifted_cost(inst: LQInstance, u, mu: float, base_cost: float | None = None) -> float:
    from .model import cost_direct  # local import to avoid cycle noise

    proc = u.process if isinstance(u, ControlProcess) else u
    if base_cost is None:
        base_cost = cost_direct(inst, proc)
    delta = _shift_delta_levels(inst.tree, proc.levels)
    return float(base_cost + 0.5 * mu * delta)


def shifted_cost_many(inst: LQInstance, u_levels, mu: float, base_costs=None):
    from .model import cost_many

    if base_costs is None:
        base_costs = cost_many(inst, u_levels)
    delta = _shift_delta_levels(inst.tree, u_levels)
    return base_costs + 0.5 * mu * delta


# -- concavity certificate ------------------------------------------------------


@dataclass(frozen=True)
class ConcavityCertificate:
    mu: float
    mode: str
    ok: bool
    worst: float
    tol: float
    samples: int = 0

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "mode": self.mode,
            "ok": self.ok,
            "worst": self.worst,
            "tol": self.tol,
            "samples": self.samples,
        }


def certify_concavity(inst: LQInstance, mu: float, mode: str = "auto",
                      tol: float = 1e-8, samples: int = 64,
                      seed: int = 0) -> ConcavityCertificate:
    """Check that N + mu I is negative semidefinite up to ``tol``.

    Dense mode reports the top eigenvalue of the shifted matrix; sample mode
    bounds Rayleigh quotients ``<(N + mu I) v, v>`` over random unit
    directions, which certifies failure but only samples success.
    """
    dim = dense_dimension(inst)
    if mode == "auto":
        mode = "dense" if dim <= DENSE_DIMENSION_CAP else "sample"
    if mode == "dense":
        op = assemble_N_dense(inst)
        shifted = op.matrix + mu * np.eye(dim)
        worst = float(np.linalg.eigvalsh(shifted)[-1])
        return ConcavityCertificate(mu=mu, mode="dense", ok=worst <= tol,
                                    worst=worst, tol=tol)
    if mode == "sample":
        tree = inst.tree
        rng = np.random.default_rng(seed)
        worst = -np.inf
        for _ in range(samples):
            v = _random_unit_levels(inst, rng)
            nv = _apply_N_levels(inst, v)
            quot = _level_dot(tree, nv, v) + mu
            worst = max(worst, float(quot))
        return ConcavityCertificate(mu=mu, mode="sample", ok=worst <= tol,
                                    worst=worst, tol=tol, samples=samples)
    raise ValueError(f"unknown mode {mode!r}")

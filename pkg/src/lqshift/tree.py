"""Binary scenario trees and tree-indexed adapted processes.

The driving noise on ``[0, T]`` is discretised by a non-recombining binary
tree of depth ``N``: level ``n`` carries ``2**n`` nodes, node ``(n, j)``
branches to ``(n+1, 2j)`` ("up") and ``(n+1, 2j+1)`` ("down") with
probability one half each, and the noise increment over the step is
``+sqrt(dt)`` on the up branch and ``-sqrt(dt)`` on the down branch.
Increments are therefore exactly zero mean with variance ``dt`` node by
node, path probabilities are exact dyadics ``2**-n``, and every expectation
is a finite weighted sum.  Identities that hold in exact arithmetic can be
tested here at machine precision instead of Monte-Carlo accuracy.

An :class:`AdaptedProcess` attaches one ``dim``-vector to every node of
either the running levels ``0 .. N-1`` or the terminal level ``N``.
Adaptedness is structural: a node holds a single value, so a value cannot
depend on branches below its node.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_DEPTH = 14
MAX_DEPTH_ENV = "LQSHIFT_MAX_DEPTH"

RUNNING = "running"
TERMINAL = "terminal"


@dataclass(frozen=True)
class ScenarioTree:
    """Non-recombining binary event tree over ``[0, horizon]``."""

    depth: int
    horizon: float

    @property
    def dt(self) -> float:
        return self.horizon / self.depth

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    @property
    def times(self) -> np.ndarray:
        """Grid ``t_0 .. t_N`` including both endpoints."""
        return np.arange(self.depth + 1) * self.dt

    def num_nodes(self, level: int) -> int:
        return 1 << level

    def path_prob(self, level: int) -> float:
        # exact dyadic, never an accumulated product
        return 2.0 ** (-level)

    def time(self, step: int) -> float:
        return step * self.dt

    def increment_signs(self, level: int) -> np.ndarray:
        """Sign of the increment leading into each node of ``level >= 1``.

        Even indices are up branches (+1), odd indices down branches (-1).
        """
        if level < 1 or level > self.depth:
            raise ValueError(f"level {level} has no incoming increment")
        signs = np.ones(self.num_nodes(level))
        signs[1::2] = -1.0
        return signs


def _max_depth(override: int | None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(MAX_DEPTH_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"{MAX_DEPTH_ENV} must be an integer, got {env!r}") from exc
    return DEFAULT_MAX_DEPTH


def build_tree(depth: int, horizon: float, max_depth: int | None = None) -> ScenarioTree:
    """Build a binary scenario tree with ``2**depth`` leaves.

    ``depth`` must be a positive integer no larger than the configured
    maximum (default 14, overridable through the ``LQSHIFT_MAX_DEPTH``
    environment variable or the ``max_depth`` argument); ``horizon`` must be
    a positive finite float.
    """
    if not isinstance(depth, (int, np.integer)) or isinstance(depth, bool):
        raise ValueError(f"depth must be an integer, got {depth!r}")
    depth = int(depth)
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    limit = _max_depth(max_depth)
    if depth > limit:
        raise ValueError(
            f"depth {depth} exceeds the maximum {limit}; "
            f"raise {MAX_DEPTH_ENV} to override"
        )
    horizon = float(horizon)
    if not math.isfinite(horizon) or horizon <= 0.0:
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    return ScenarioTree(depth=depth, horizon=horizon)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


class AdaptedProcess:
    """A vector-valued process indexed by the nodes of a scenario tree.

    ``kind`` is either ``"running"`` (one value per node of levels
    ``0 .. N-1``) or ``"terminal"`` (one value per leaf of level ``N``).
    Values are stored per level as read-only ``(2**n, dim)`` arrays.
    """

    __slots__ = ("tree", "kind", "dim", "levels")

    def __init__(self, tree: ScenarioTree, kind: str, levels):
        if kind not in (RUNNING, TERMINAL):
            raise ValueError(f"kind must be 'running' or 'terminal', got {kind!r}")
        if kind == TERMINAL:
            levels = [levels] if isinstance(levels, np.ndarray) else list(levels)
            if len(levels) != 1:
                raise ValueError("terminal process takes a single leaf array")
            expected = [tree.num_nodes(tree.depth)]
        else:
            levels = list(levels)
            if len(levels) != tree.depth:
                raise ValueError(
                    f"running process needs {tree.depth} level arrays, got {len(levels)}"
                )
            expected = [tree.num_nodes(n) for n in range(tree.depth)]
        arrays = []
        dim = None
        for nodes, arr in zip(expected, levels):
            a = np.asarray(arr, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2 or a.shape[0] != nodes:
                raise ValueError(
                    f"level array has shape {np.shape(arr)}, expected ({nodes}, dim)"
                )
            if dim is None:
                dim = a.shape[1]
            elif a.shape[1] != dim:
                raise ValueError("level arrays disagree on the value dimension")
            arrays.append(_freeze(a))
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "levels", tuple(arrays))

    def __setattr__(self, name, value):
        raise AttributeError("AdaptedProcess is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def running(cls, tree: ScenarioTree, levels) -> "AdaptedProcess":
        return cls(tree, RUNNING, levels)

    @classmethod
    def terminal(cls, tree: ScenarioTree, leaves) -> "AdaptedProcess":
        return cls(tree, TERMINAL, leaves)

    @classmethod
    def zeros(cls, tree: ScenarioTree, dim: int, kind: str = RUNNING) -> "AdaptedProcess":
        if kind == TERMINAL:
            return cls(tree, kind, np.zeros((tree.num_nodes(tree.depth), dim)))
        return cls(tree, kind, [np.zeros((tree.num_nodes(n), dim)) for n in range(tree.depth)])

    @classmethod
    def constant(cls, tree: ScenarioTree, value, kind: str = RUNNING) -> "AdaptedProcess":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if kind == TERMINAL:
            return cls(tree, kind, np.tile(v, (tree.num_nodes(tree.depth), 1)))
        return cls(tree, kind, [np.tile(v, (tree.num_nodes(n), 1)) for n in range(tree.depth)])

    # -- accessors ---------------------------------------------------------

    @property
    def leaves(self) -> np.ndarray:
        if self.kind != TERMINAL:
            raise ValueError("leaves are defined for terminal processes only")
        return self.levels[0]

    def level(self, n: int) -> np.ndarray:
        if self.kind == TERMINAL:
            if n != self.tree.depth:
                raise ValueError(f"terminal process has values at level {self.tree.depth} only")
            return self.levels[0]
        if not 0 <= n < self.tree.depth:
            raise ValueError(f"running process has levels 0 .. {self.tree.depth - 1}, got {n}")
        return self.levels[n]

    # -- arithmetic (used by tests and samplers) ---------------------------

    def _binary_op(self, other, op):
        if not isinstance(other, AdaptedProcess):
            return NotImplemented
        if self.tree != other.tree or self.kind != other.kind or self.dim != other.dim:
            raise ValueError("processes live on different trees or have different shapes")
        return AdaptedProcess(self.tree, self.kind, [op(a, b) for a, b in zip(self.levels, other.levels)])

    def __add__(self, other):
        return self._binary_op(other, np.add)

    def __sub__(self, other):
        return self._binary_op(other, np.subtract)

    def __mul__(self, scalar):
        s = float(scalar)
        return AdaptedProcess(self.tree, self.kind, [s * a for a in self.levels])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.levels)


# -- level-wise probabilistic operations -----------------------------------


def conditional_expectation(values: np.ndarray) -> np.ndarray:
    """Project values on level ``n+1`` onto level ``n``.

    Each parent takes the plain average of its two children, which is the
    conditional expectation under equal branch probabilities.  Works on any
    ``(..., 2*m, dim)`` array.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[-2] % 2:
        raise ValueError("level array must have an even number of nodes")
    return 0.5 * (v[..., 0::2, :] + v[..., 1::2, :])


def martingale_representation(values: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Split next-level values into conditional mean and increment slope.

    Returns ``(mean, slope)`` with ``values = mean + slope * dW`` exactly,
    where ``dW = +sqrt(dt)`` on even (up) children and ``-sqrt(dt)`` on odd
    (down) children.  The representation is unique because each parent has
    exactly two children.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[-2] % 2:
        raise ValueError("level array must have an even number of nodes")
    up = v[..., 0::2, :]
    down = v[..., 1::2, :]
    mean = 0.5 * (up + down)
    slope = (up - down) / (2.0 * math.sqrt(dt))
    return mean, slope


# -- inner products ---------------------------------------------------------


def _weighted_dot_levels(tree: ScenarioTree, a_levels, b_levels):
    """Running inner product on raw level arrays; supports leading batch axes."""
    total = 0.0
    for n, (a, b) in enumerate(zip(a_levels, b_levels)):
        total = total + tree.path_prob(n) * np.sum(a * b, axis=(-2, -1))
    return total * tree.dt


def inner_product_running(u: AdaptedProcess, v: AdaptedProcess) -> float:
    """Time-integrated expectation ``E[ sum_n <u_n, v_n> dt ]`` (left endpoints)."""
    if u.kind != RUNNING or v.kind != RUNNING:
        raise ValueError("running inner product needs running processes")
    if u.tree != v.tree or u.dim != v.dim:
        raise ValueError("processes live on different trees or have different dimensions")
    return float(_weighted_dot_levels(u.tree, u.levels, v.levels))


def inner_product_terminal(xi: AdaptedProcess, eta: AdaptedProcess) -> float:
    """Expectation ``E[ <xi, eta> ]`` over the leaves."""
    if xi.kind != TERMINAL or eta.kind != TERMINAL:
        raise ValueError("terminal inner product needs terminal processes")
    if xi.tree != eta.tree or xi.dim != eta.dim:
        raise ValueError("processes live on different trees or have different dimensions")
    prob = xi.tree.path_prob(xi.tree.depth)
    return float(prob * np.sum(xi.leaves * eta.leaves))

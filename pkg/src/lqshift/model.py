"""Linear-quadratic problem data on a scenario tree.

An :class:`LQInstance` bundles piecewise-constant coefficients for the
controlled linear dynamics

    X_{n+1} = X_n + (A_n X_n + B_n u_n + b_n) dt + (C_n X_n + D_n u_n + s_n) dW_n

with the quadratic cost

    J(u) = E[ 1/2 sum_n (<Q_n X_n, X_n> + 2 <S_n X_n, u_n> + <R_n u_n, u_n>) dt
              + 1/2 <G X_N, X_N> ],

where none of Q, R, G is assumed definite.  Controls take values in the
binary set ``U = C intersect {0,1}^k`` described by a
:class:`ControlDomain`; its relaxation replaces ``{0,1}^k`` by the unit box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDomainError, VertexEnumerationError
from .tree import (
    RUNNING,
    AdaptedProcess,
    ScenarioTree,
    build_tree,
)

SYMMETRY_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9
BINARY_VERTEX_CAP = 20
RELAXED_VERTEX_DIM_CAP = 12


def _as_float_array(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def _symmetrize_stack(mats, name):
    """Symmetrize ``(..., d, d)`` matrices, rejecting skew parts beyond tolerance."""
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    defect = float(np.max(np.abs(mats - np.swapaxes(mats, -1, -2)))) if mats.size else 0.0
    scale = max(1.0, float(np.max(np.abs(mats))) if mats.size else 0.0)
    if defect > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric (defect {defect:.3e})")
    return sym


@dataclass(frozen=True, eq=False)
class LQInstance:
    """Problem data; coefficient index ``m`` applies on ``[t_m, t_{m+1})``."""

    n: int
    k: int
    T: float
    depth: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    G: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        n, k, depth = int(self.n), int(self.k), int(self.depth)
        if n < 1 or k < 1:
            raise ValueError("state and control dimensions must be >= 1")
        tree = build_tree(depth, float(self.T))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "_tree", tree)
        shapes = {
            "A": (depth, n, n),
            "B": (depth, n, k),
            "C": (depth, n, n),
            "D": (depth, n, k),
            "b": (depth, n),
            "sigma": (depth, n),
            "Q": (depth, n, n),
            "S": (depth, k, n),
            "R": (depth, k, k),
            "G": (n, n),
            "x0": (n,),
        }
        for name, shape in shapes.items():
            arr = _as_float_array(getattr(self, name), shape, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            if name in ("Q", "R"):
                arr = _symmetrize_stack(arr, name)
            elif name == "G":
                arr = _symmetrize_stack(arr[None, :, :], name)[0]
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def tree(self) -> ScenarioTree:
        return self._tree

    @classmethod
    def constant(cls, *, depth, T=1.0, n=None, k=None, A=None, B=None, C=None,
                 D=None, b=None, sigma=None, Q=None, S=None, R=None, G=None,
                 x0=None) -> "LQInstance":
        """Build an instance with time-independent coefficients.

        Dimensions are inferred from whichever coefficients are given;
        omitted coefficients are zero.
        """
        def _dim_from(*candidates):
            # Each candidate is (value, axis, require_2d): 1-D values are
            # ambiguous for rectangular coefficients and are skipped there.
            for val, axis, require_2d in candidates:
                if val is None:
                    continue
                if require_2d and np.ndim(val) != 2:
                    continue
                return np.atleast_1d(np.asarray(val, dtype=float)).shape[axis]
            return None

        n_dim = n or _dim_from((A, 0, False), (C, 0, False), (Q, 0, False),
                               (G, 0, False), (b, 0, False), (sigma, 0, False),
                               (x0, 0, False)) or 1
        k_dim = k or _dim_from((R, 0, False), (D, 1, True), (B, 1, True),
                               (S, 0, True)) or 1

        def _mat(val, rows, cols):
            if val is None:
                out = np.zeros((rows, cols))
            elif np.ndim(val) == 0 and rows == cols:
                out = float(val) * np.eye(rows)
            else:
                out = np.asarray(val, dtype=float).reshape(rows, cols)
            return np.tile(out, (depth, 1, 1))

        def _vec(val, dim):
            out = np.zeros(dim) if val is None else np.asarray(val, dtype=float).reshape(dim)
            return np.tile(out, (depth, 1))

        if G is None:
            g = np.zeros((n_dim, n_dim))
        elif np.ndim(G) == 0:
            g = float(G) * np.eye(n_dim)
        else:
            g = np.asarray(G, dtype=float).reshape(n_dim, n_dim)
        start = np.zeros(n_dim) if x0 is None else np.asarray(x0, dtype=float).reshape(n_dim)
        return cls(
            n=n_dim, k=k_dim, T=T, depth=depth,
            A=_mat(A, n_dim, n_dim), B=_mat(B, n_dim, k_dim),
            C=_mat(C, n_dim, n_dim), D=_mat(D, n_dim, k_dim),
            b=_vec(b, n_dim), sigma=_vec(sigma, n_dim),
            Q=_mat(Q, n_dim, n_dim), S=_mat(S, k_dim, n_dim), R=_mat(R, k_dim, k_dim),
            G=g, x0=start,
        )


def example5_instance(depth: int, T: float = 1.0) -> "LQInstance":
    """Pure control-noise scalar instance ``dX = u dW`` with indefinite cost.

    The cost ``E[ int (X^2 - u^2/2) dt + X(T)^2 ]`` collapses, for any
    adapted control, to the explicit weight form
    ``sum_m E[u_m^2] (3/2 - t_{m+1}) dt`` on the tree, which makes every
    pipeline stage checkable in closed form.  The binary optimum is
    ``u = 0``.
    """
    return LQInstance.constant(depth=depth, T=T, n=1, k=1, D=1.0, Q=2.0, R=-1.0, G=2.0)


@dataclass(frozen=True, eq=False)
class ControlDomain:
    """Control-value constraint set.

    ``halfspaces`` lists pairs ``(g, h)`` meaning ``<g, u> <= h``; the binary
    set is ``U = {0,1}^k`` filtered by the halfspaces, the relaxed set is the
    unit box filtered the same way.  An empty list means the whole space.
    """

    k: int
    halfspaces: tuple = ()

    def __post_init__(self):
        k = int(self.k)
        if k < 1:
            raise ValueError("control dimension must be >= 1")
        object.__setattr__(self, "k", k)
        cleaned = []
        for g, h in self.halfspaces:
            g = np.asarray(g, dtype=float).reshape(k)
            if not np.all(np.isfinite(g)) or not math.isfinite(float(h)):
                raise ValueError("halfspace coefficients must be finite")
            g = g.copy()
            g.setflags(write=False)
            cleaned.append((g, float(h)))
        object.__setattr__(self, "halfspaces", tuple(cleaned))

    @classmethod
    def free(cls, k: int) -> "ControlDomain":
        return cls(k=k)

    def _memo(self, key, compute):
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = compute()
        return cache[key]

    def binary_vertices(self) -> np.ndarray:
        return self._memo("binary", lambda: enumerate_binary_vertices(self))

    def relaxed_vertices(self) -> np.ndarray:
        return self._memo("relaxed", lambda: relaxed_vertices(self))

    def contains_relaxed(self, points: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Boolean mask over ``(..., k)`` points for relaxed membership."""
        pts = np.asarray(points, dtype=float)
        ok = np.all((pts >= -tol) & (pts <= 1.0 + tol), axis=-1)
        for g, h in self.halfspaces:
            ok &= pts @ g <= h + tol
        return ok

    def contains_binary(self, points: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Boolean mask over ``(..., k)`` points for membership in ``U``."""
        pts = np.asarray(points, dtype=float)
        verts = self.binary_vertices()
        if verts.shape[0] == 0:
            return np.zeros(pts.shape[:-1], dtype=bool)
        dist = np.abs(pts[..., None, :] - verts).max(axis=-1)
        return dist.min(axis=-1) <= tol


def enumerate_binary_vertices(domain: ControlDomain) -> np.ndarray:
    """All points of ``{0,1}^k`` satisfying the halfspaces, in lexicographic order."""
    if domain.k > BINARY_VERTEX_CAP:
        raise VertexEnumerationError(
            f"k = {domain.k} exceeds the binary enumeration cap {BINARY_VERTEX_CAP}"
        )
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=domain.k)))
    keep = np.ones(corners.shape[0], dtype=bool)
    for g, h in domain.halfspaces:
        keep &= corners @ g <= h + MEMBERSHIP_TOL
    return corners[keep]


def relaxed_vertices(domain: ControlDomain) -> np.ndarray:
    """Extreme points of the relaxed set (unit box cut by the halfspaces).

    Without halfspaces these are the box corners.  With halfspaces the
    vertices are enumerated by solving every ``k``-subset of the active
    constraint candidates, which is adequate at the dimensions this package
    targets.
    """
    k = domain.k
    if not domain.halfspaces:
        if k > RELAXED_VERTEX_DIM_CAP:
            raise VertexEnumerationError(
                f"k = {k} exceeds the vertex enumeration cap {RELAXED_VERTEX_DIM_CAP}"
            )
        return np.array(list(itertools.product((0.0, 1.0), repeat=k)))
    rows = []
    rhs = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        rows.append(e.copy())
        rhs.append(0.0)  # u_i = 0
        rows.append(e)
        rhs.append(1.0)  # u_i = 1
    for g, h in domain.halfspaces:
        rows.append(np.asarray(g))
        rhs.append(float(h))
    rows = np.asarray(rows)
    rhs = np.asarray(rhs)
    total = math.comb(len(rows), k)
    if k > RELAXED_VERTEX_DIM_CAP or total > 100_000:
        raise VertexEnumerationError(
            f"vertex enumeration needs {total} candidate systems; too many"
        )
    found = []
    for subset in itertools.combinations(range(len(rows)), k):
        M = rows[list(subset)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, rhs[list(subset)])
        if not bool(domain.contains_relaxed(v)):
            continue
        if not any(np.max(np.abs(v - w)) <= 1e-9 for w in found):
            found.append(v)
    found.sort(key=tuple)
    return np.asarray(found) if found else np.zeros((0, k))


@dataclass(frozen=True, eq=False)
class ControlProcess:
    """An adapted control with a declared value set.

    ``kind`` is ``"binary"`` (every node value lies in ``U``) or
    ``"relaxed"`` (values lie in the relaxed polytope); membership is
    verified node-wise on construction to :data:`MEMBERSHIP_TOL`.
    """

    process: AdaptedProcess
    domain: ControlDomain
    kind: str = "binary"

    def __post_init__(self):
        if self.process.kind != RUNNING:
            raise ValueError("controls are running processes")
        if self.process.dim != self.domain.k:
            raise ValueError(
                f"control dimension {self.process.dim} does not match domain k={self.domain.k}"
            )
        if self.kind not in ("binary", "relaxed"):
            raise ValueError(f"kind must be 'binary' or 'relaxed', got {self.kind!r}")
        check = (self.domain.contains_binary if self.kind == "binary"
                 else self.domain.contains_relaxed)
        for level, arr in enumerate(self.process.levels):
            ok = check(arr)
            if not np.all(ok):
                j = int(np.flatnonzero(~ok)[0])
                raise ValueError(
                    f"control value {arr[j]} at node ({level}, {j}) is outside the "
                    f"{self.kind} control set"
                )

    @property
    def tree(self) -> ScenarioTree:
        return self.process.tree

    @property
    def levels(self):
        return self.process.levels

    @classmethod
    def from_levels(cls, domain: ControlDomain, tree: ScenarioTree, levels,
                    kind: str = "binary") -> "ControlProcess":
        return cls(AdaptedProcess.running(tree, levels), domain, kind)

    @classmethod
    def constant(cls, domain: ControlDomain, tree: ScenarioTree, value,
                 kind: str = "binary") -> "ControlProcess":
        return cls(AdaptedProcess.constant(tree, value, RUNNING), domain, kind)

    @classmethod
    def zero(cls, domain: ControlDomain, tree: ScenarioTree) -> "ControlProcess":
        return cls.constant(domain, tree, np.zeros(domain.k), "binary")


@dataclass(frozen=True)
class StatePath:
    """Forward state: running values on levels ``0 .. N-1`` plus the terminal slice."""

    running: AdaptedProcess
    terminal: AdaptedProcess


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str
    fatal: bool = False


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "valid": self.ok,
            "issues": [
                {"path": i.path, "message": i.message, "fatal": i.fatal}
                for i in self.issues
            ],
        }


def validate_instance(inst: LQInstance, domain: ControlDomain) -> ValidationReport:
    """Coherence checks across the instance and its control domain.

    Shape, symmetry, and finiteness violations are rejected by the
    constructors already; this confirms the cross-object facts: matching
    control dimensions and a nonempty binary control set (fatal when empty).
    """
    issues = []
    if domain.k != inst.k:
        issues.append(ValidationIssue("/domain", f"domain k={domain.k} != instance k={inst.k}",
                                      fatal=True))
    try:
        verts = domain.binary_vertices()
        if verts.shape[0] == 0:
            issues.append(ValidationIssue(
                "/domain/halfspaces", "binary control set U is empty", fatal=True))
    except VertexEnumerationError as exc:
        issues.append(ValidationIssue("/domain", str(exc), fatal=True))
    return ValidationReport(tuple(issues))


# -- forward dynamics and cost ----------------------------------------------


def _forward_levels(inst: LQInstance, u_levels, x0, *, inhomogeneous: bool = True):
    """Explicit Euler sweep; ``u_levels`` may be None for the zero control.

    All arrays may carry leading batch axes.  Returns the running level list
    (levels ``0 .. N-1``) and the terminal array.
    """
    tree = inst.tree
    dt, s = tree.dt, tree.sqrt_dt
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        x = x[None, :]  # (1, n): the single level-0 node
    x_levels = []
    for m in range(tree.depth):
        x_levels.append(x)
        drift = x @ inst.A[m].T
        diff = x @ inst.C[m].T
        if u_levels is not None:
            u = u_levels[m]
            drift = drift + u @ inst.B[m].T
            diff = diff + u @ inst.D[m].T
        if inhomogeneous:
            drift = drift + inst.b[m]
            diff = diff + inst.sigma[m]
        base = x + dt * drift
        up = base + s * diff
        down = base - s * diff
        nxt = np.empty(up.shape[:-2] + (2 * up.shape[-2], up.shape[-1]))
        nxt[..., 0::2, :] = up
        nxt[..., 1::2, :] = down
        x = nxt
    return x_levels, x


def forward_state(inst: LQInstance, u) -> StatePath:
    """Integrate the controlled dynamics from ``inst.x0`` along the tree."""
    u_proc = u.process if isinstance(u, ControlProcess) else u
    if u_proc.tree != inst.tree or u_proc.dim != inst.k:
        raise ValueError("control does not match the instance tree or control dimension")
    x_levels, x_term = _forward_levels(inst, u_proc.levels, inst.x0)
    return StatePath(
        running=AdaptedProcess.running(inst.tree, x_levels),
        terminal=AdaptedProcess.terminal(inst.tree, x_term),
    )


def _cost_from_levels(inst: LQInstance, u_levels, x_levels, x_term):
    """Quadratic cost from precomputed state levels; batched."""
    tree = inst.tree
    total = 0.0
    for m in range(tree.depth):
        x = x_levels[m]
        qx = x @ inst.Q[m]
        level_sum = np.sum(qx * x, axis=(-2, -1))
        if u_levels is not None:
            u = u_levels[m]
            sx = x @ inst.S[m].T
            ru = u @ inst.R[m]
            level_sum = level_sum + 2.0 * np.sum(sx * u, axis=(-2, -1)) \
                + np.sum(ru * u, axis=(-2, -1))
        total = total + tree.path_prob(m) * level_sum
    total = total * tree.dt
    gx = x_term @ inst.G
    total = total + tree.path_prob(tree.depth) * np.sum(gx * x_term, axis=(-2, -1))
    return 0.5 * total


def cost_direct(inst: LQInstance, u) -> float:
    """Evaluate the cost by forward simulation and weighted summation."""
    u_proc = u.process if isinstance(u, ControlProcess) else u
    path = forward_state(inst, u_proc)
    x_levels = [lvl for lvl in path.running.levels]
    return float(_cost_from_levels(inst, u_proc.levels, x_levels, path.terminal.leaves))


def cost_many(inst: LQInstance, u_levels):
    """Costs of a batch of controls given as ``(batch, 2**m, k)`` level arrays."""
    x_levels, x_term = _forward_levels(inst, u_levels, inst.x0)
    return _cost_from_levels(inst, u_levels, x_levels, x_term)


# -- relaxed sampling --------------------------------------------------------


def sample_relaxed_levels(domain: ControlDomain, tree: ScenarioTree, count: int,
                          rng: np.random.Generator):
    """Draw ``count`` relaxed controls, uniform per node over the relaxed set.

    Box proposals are rejection-filtered against the halfspaces one node at a
    time.  Raises :class:`DegenerateDomainError` when almost everything is
    rejected (acceptance below 0.1 percent).
    """
    nodes = tree.num_nodes(tree.depth) - 1
    draw = rng.uniform(size=(count, nodes, domain.k))
    if domain.halfspaces:
        accepted_first = int(np.sum(domain.contains_relaxed(draw, tol=0.0)))
        rate = accepted_first / float(count * nodes)
        if rate < 1e-3:
            raise DegenerateDomainError(
                f"relaxed rejection sampling accepts only {rate:.2e} of the unit box"
            )
        bad = ~domain.contains_relaxed(draw, tol=0.0)
        while np.any(bad):
            idx = np.nonzero(bad)
            draw[idx] = rng.uniform(size=(len(idx[0]), domain.k))
            bad[idx] = ~domain.contains_relaxed(draw[idx], tol=0.0)
    offsets = np.cumsum([0] + [tree.num_nodes(m) for m in range(tree.depth)])
    return [draw[:, offsets[m]:offsets[m + 1], :] for m in range(tree.depth)]

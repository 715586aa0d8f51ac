"""Finite discrete filtration: a non-recombining tree with m+2 one-step outcomes.

Each non-terminal node branches into a diffusion up move, a diffusion down
move, and one branch per retained mark.  All weights are explicit, so
conditional expectations, one-step martingale representation, change of
measure and forward state propagation are exact (no sampling anywhere).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DensityNotPositive,
    IntensityTooLarge,
    LayerMismatch,
    NonFiniteState,
    SingularSystem,
    SizeOverflow,
)

DEFAULT_NODE_CAP = 2_000_000

# branch order: 0 = up, 1 = down, 2..m+1 = marks
UP, DOWN = 0, 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, k: int) -> float:
        return k * self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class MarkSet:
    """Finite set of retained marks e_j with rates lambda_j (per unit time).

    Truncation/binning of a continuous intensity measure is the caller's
    responsibility; the marks are taken at face value.
    """

    points: tuple = ()
    rates: tuple = ()

    def __post_init__(self):
        if len(self.points) != len(self.rates):
            raise ValueError("points and rates must have equal length")
        if any(r <= 0 for r in self.rates):
            raise ValueError("mark rates must be strictly positive")

    @property
    def m(self) -> int:
        return len(self.rates)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))


@dataclass
class Tree:
    """Non-recombining tree over a TimeGrid with per-step branch data.

    Layer k holds (m+2)^k nodes indexed 0..(m+2)^k-1; the children of node
    i are nodes (m+2)*i + b at layer k+1, b running over the branch order
    {up, down, mark_1..mark_m}.
    """

    grid: TimeGrid
    marks: MarkSet
    base_weights: np.ndarray  # shape (m+2,)
    db: np.ndarray  # diffusion increment per branch, shape (m+2,)
    comp: np.ndarray  # compensated mark indicators, shape (m+2, m)

    @property
    def n_branches(self) -> int:
        return self.marks.m + 2

    @property
    def n_layers(self) -> int:
        return self.grid.steps + 1

    def layer_size(self, k: int) -> int:
        return self.n_branches**k

    def node_count(self) -> int:
        b = self.n_branches
        return (b ** (self.grid.steps + 1) - 1) // (b - 1)

    def parent(self, i: int) -> int:
        return i // self.n_branches

    def node_id(self, k: int, i: int) -> str:
        """Path string over the alphabet {u, d, 1..m}; root is ''."""
        labels = ["u", "d"] + [str(j + 1) for j in range(self.marks.m)]
        digits = []
        for _ in range(k):
            digits.append(labels[i % self.n_branches])
            i //= self.n_branches
        return "".join(reversed(digits))

    def layer_probabilities(self, k: int, weights=None) -> np.ndarray:
        """Path probability of each layer-k node (product of branch weights)."""
        p = np.ones(1)
        for j in range(k):
            if weights is None:
                p = np.multiply.outer(p, self.base_weights).ravel()
            else:
                p = (p[:, None] * weights[j]).ravel()
        return p


@dataclass
class AdaptedValues:
    """One value (or value vector) per node over a contiguous range of layers."""

    layers: list = field(default_factory=list)  # list of np.ndarray, one per layer
    first_layer: int = 0

    @property
    def last_layer(self) -> int:
        return self.first_layer + len(self.layers) - 1

    def layer(self, k: int) -> np.ndarray:
        if not self.first_layer <= k <= self.last_layer:
            raise LayerMismatch(f"layer {k} outside [{self.first_layer}, {self.last_layer}]")
        return self.layers[k - self.first_layer]

    def copy(self) -> "AdaptedValues":
        return AdaptedValues([np.array(a, copy=True) for a in self.layers], self.first_layer)


def build_tree(grid: TimeGrid, marks: MarkSet | None = None, node_cap: int = DEFAULT_NODE_CAP) -> Tree:
    """Build the exhaustive tree for a grid and mark set.

    Deterministic: the tree enumerates every one-step outcome.  One-step
    weights are p_up = p_down = (1 - dt*sum(lambda))/2 and p_mark_j =
    lambda_j*dt, which make the diffusion increment and the compensated
    mark indicators exact one-step martingales.

    Raises
    ------
    IntensityTooLarge
        if dt * sum(lambda_j) >= 1.
    SizeOverflow
        if the node count exceeds ``node_cap``.
    """
    marks = marks or MarkSet()
    dt = grid.dt
    q = marks.total_rate * dt
    if q >= 1.0:
        raise IntensityTooLarge(f"sum(lambda)*dt = {q:.6g} >= 1; refine the grid")

    m = marks.m
    b = m + 2
    count = (b ** (grid.steps + 1) - 1) // (b - 1)
    if count > node_cap:
        raise SizeOverflow(f"tree would hold {count} nodes, cap is {node_cap}")

    weights = np.empty(b)
    weights[UP] = weights[DOWN] = (1.0 - q) / 2.0
    rates = np.asarray(marks.rates, dtype=float)
    weights[2:] = rates * dt

    db = np.zeros(b)
    sqdt = math.sqrt(dt)
    db[UP], db[DOWN] = sqdt, -sqdt

    # comp[c, j] = 1{c = mark_j} - lambda_j * dt
    comp = np.tile(-rates * dt, (b, 1)) if m else np.zeros((b, 0))
    for j in range(m):
        comp[2 + j, j] += 1.0

    return Tree(grid=grid, marks=marks, base_weights=weights, db=db, comp=comp)


def _branch_weights(tree: Tree, k: int, weights) -> np.ndarray:
    """Weights for the step leaving layer k, broadcastable to (n_k, m+2)."""
    if weights is None:
        return tree.base_weights
    w = weights[k] if isinstance(weights, (list, tuple)) else weights
    return np.asarray(w)


def conditional_expectation(tree: Tree, child_values: np.ndarray, k: int, weights=None) -> np.ndarray:
    """Exact E[.|node] at layer k from values on layer k+1.

    ``child_values`` has one entry per layer-(k+1) node; ``weights`` is None
    for the base measure, or per-node branch weights (shape (n_k, m+2) or a
    list of such arrays indexed by layer).
    """
    child_values = np.asarray(child_values, dtype=float)
    n = tree.layer_size(k)
    if child_values.shape[0] != n * tree.n_branches:
        raise LayerMismatch(
            f"expected {n * tree.n_branches} child values at layer {k + 1}, got {child_values.shape[0]}"
        )
    grouped = child_values.reshape(n, tree.n_branches)
    w = _branch_weights(tree, k, weights)
    return (grouped * w).sum(axis=1)


def represent_layer(tree: Tree, child_values: np.ndarray, k: int):
    """One-step martingale representation for every layer-k node at once.

    Solves, per node and per child c,

        a + Z*dB(c) + sum_j V_j*(1{c=mark_j} - lambda_j*dt) = child_value(c)

    The (m+2)x(m+2) system is nonsingular by construction and has the
    closed-form solution returned here: ``a`` is the base conditional
    expectation, ``Z = (y_up - y_down)/(2*sqrt(dt))`` and
    ``V_j = y_mark_j - (y_up + y_down)/2``.

    Returns (a, Z, V) with shapes (n_k,), (n_k,), (n_k, m).
    """
    child_values = np.asarray(child_values, dtype=float)
    n = tree.layer_size(k)
    if child_values.shape[0] != n * tree.n_branches:
        raise LayerMismatch(
            f"expected {n * tree.n_branches} child values at layer {k + 1}, got {child_values.shape[0]}"
        )
    grouped = child_values.reshape(n, tree.n_branches)
    sqdt = math.sqrt(tree.grid.dt)
    if sqdt <= 0.0:
        raise SingularSystem("degenerate step size")
    mid = 0.5 * (grouped[:, UP] + grouped[:, DOWN])
    z = (grouped[:, UP] - grouped[:, DOWN]) / (2.0 * sqdt)
    v = grouped[:, 2:] - mid[:, None]
    a = (grouped * tree.base_weights).sum(axis=1)
    return a, z, v


def represent_increment(tree: Tree, child_values):
    """Representation (a, Z, V_1..V_m) for a single node given its m+2 child values."""
    child_values = np.asarray(child_values, dtype=float)
    if child_values.shape[0] != tree.n_branches:
        raise LayerMismatch(f"expected {tree.n_branches} child values, got {child_values.shape[0]}")
    a, z, v = represent_layer(tree, child_values, 0)
    return float(a[0]), float(z[0]), v[0]


def reconstruct_children(tree: Tree, a, z, v) -> np.ndarray:
    """Inverse of the representation: child values from (a, Z, V)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    out = a[:, None] + z[:, None] * tree.db + v @ tree.comp.T
    return out.ravel()


def one_step_density(tree: Tree, theta, beta) -> np.ndarray:
    """Per-branch density zeta(c) = 1 + theta*dB(c) + sum_j beta_j*(1{mark_j} - lambda_j*dt).

    ``theta`` has shape (n,), ``beta`` shape (n, m).  The density has
    base-measure mean one at every node by construction.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[0] != theta.shape[0]:
        beta = np.broadcast_to(beta, (theta.shape[0], tree.marks.m))
    return 1.0 + theta[:, None] * tree.db + beta @ tree.comp.T


def reweight(tree: Tree, theta, beta, k: int | None = None) -> np.ndarray:
    """Tilted branch weights p(c)*zeta(c) for one layer of nodes.

    The weights sum to one per node automatically (zeta has base mean one);
    this is the discrete change of measure used for controlled drifts and
    mark-intensity tilts.

    Raises
    ------
    DensityNotPositive
        if any zeta(c) <= 0; reports the offending node and branch.
    """
    zeta = one_step_density(tree, theta, beta)
    if np.any(zeta <= 0.0):
        i, c = np.argwhere(zeta <= 0.0)[0]
        raise DensityNotPositive(k if k is not None else -1, int(i), int(c), float(zeta[i, c]))
    return tree.base_weights * zeta


def forward_state(tree: Tree, sigma, gamma, x0: float) -> AdaptedValues:
    """Propagate the controlled-state skeleton forward through the tree.

    x(child) = x + sigma(t_k, x)*dB(child) + gamma(t_k, e_j, x)*1{child=mark_j}
               - dt * sum_j gamma(t_k, e_j, x)*lambda_j

    The last term is the compensator of the mark measure; with the branch
    indicator it collapses to gamma contracted against the compensated
    indicators.  ``sigma(t, x)`` and ``gamma(t, e, x)`` must accept numpy
    arrays for ``x``.
    """
    if not np.isfinite(x0):
        raise NonFiniteState(f"x0 = {x0}")
    layers = [np.full(1, float(x0))]
    for k in range(tree.grid.steps):
        x = layers[-1]
        t = tree.grid.time(k)
        s = np.broadcast_to(np.asarray(sigma(t, x), dtype=float), x.shape)
        if tree.marks.m:
            g = np.stack(
                [np.broadcast_to(np.asarray(gamma(t, e, x), dtype=float), x.shape) for e in tree.marks.points],
                axis=1,
            )
        else:
            g = np.zeros((x.shape[0], 0))
        children = x[:, None] + s[:, None] * tree.db + g @ tree.comp.T
        children = children.ravel()
        if not np.all(np.isfinite(children)):
            raise NonFiniteState(f"non-finite state at layer {k + 1}")
        layers.append(children)
    return AdaptedValues(layers, 0)


def constant_values(tree: Tree, value: float, first_layer: int = 0, last_layer: int | None = None) -> AdaptedValues:
    last = tree.grid.steps if last_layer is None else last_layer
    return AdaptedValues(
        [np.full(tree.layer_size(k), float(value)) for k in range(first_layer, last + 1)], first_layer
    )


def values_from_function(tree: Tree, fn, state: AdaptedValues | None = None, first_layer: int = 0,
                         last_layer: int | None = None) -> AdaptedValues:
    """Evaluate fn(t_k, x_k) node-wise; with no state, x is zero."""
    last = tree.grid.steps if last_layer is None else last_layer
    layers = []
    for k in range(first_layer, last + 1):
        x = state.layer(k) if state is not None else np.zeros(tree.layer_size(k))
        t = tree.grid.time(k)
        layers.append(np.broadcast_to(np.asarray(fn(t, x), dtype=float), x.shape).astype(float).copy())
    return AdaptedValues(layers, first_layer)

"""Snell envelope, one-barrier reflected solver, and the exhaustive stopping oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LayerMismatch
from .lattice import AdaptedValues, Tree, conditional_expectation
from .model import ProblemSpec
from .oracles import enumerate_stop_value
from .sweep import SweepResult, backward_sweep, make_drift_solver


@dataclass
class StoppingRule:
    """Binary stop/continue decision per node; the terminal layer is a forced stop."""

    tree: Tree
    stop: list  # bool array per layer 0..N (terminal entries are ignored/forced)

    @classmethod
    def never(cls, tree: Tree) -> "StoppingRule":
        return cls(tree, [np.zeros(tree.layer_size(k), dtype=bool) for k in range(tree.n_layers)])

    def stop_layer(self, path_digits) -> int:
        """First stopping layer along the path given by branch digits."""
        b = self.tree.n_branches
        node = 0
        for k in range(self.tree.grid.steps):
            if self.stop[k][node]:
                return k
            node = node * b + path_digits[k]
        return self.tree.grid.steps


@dataclass
class OneBarrierSolution:
    """Reflected solution against a single barrier with its push process split."""

    side: str  # "upper" or "lower"
    Y: AdaptedValues
    Z: AdaptedValues
    V: AdaptedValues
    dKc: AdaptedValues
    dKd: AdaptedValues
    pre_clamp: AdaptedValues
    left_limits: dict = field(default_factory=dict)
    sweep: SweepResult | None = None

    def K(self) -> AdaptedValues:
        return self.sweep.cumulative(self.dKc, self.dKd)


def snell_envelope(tree: Tree, payoff: AdaptedValues, drift: AdaptedValues | None = None) -> AdaptedValues:
    """Smallest system dominating the payoff and the one-step expectation.

    Backward recursion Y_N = payoff_N, Y_k = max(payoff_k, E[Y_{k+1}|node]
    + drift_k*dt); the value process of optimal stopping with running
    reward ``drift``.
    """
    N = tree.grid.steps
    if payoff.first_layer > 0 or payoff.last_layer < N:
        raise LayerMismatch("payoff must cover all layers")
    dt = tree.grid.dt
    layers = [None] * (N + 1)
    layers[N] = payoff.layer(N).astype(float).copy()
    for k in range(N - 1, -1, -1):
        cont = conditional_expectation(tree, layers[k + 1], k)
        if drift is not None:
            cont = cont + drift.layer(k) * dt
        layers[k] = np.maximum(payoff.layer(k), cont)
    return AdaptedValues(layers, 0)


def optimal_stopping_oracle(tree: Tree, payoff: AdaptedValues, drift: AdaptedValues | None = None,
                            mode: str = "sup") -> AdaptedValues:
    """Exact optimum over all enumerated stopping rules, per starting node.

    Brute force and independent of any backward recursion; limited to trees
    whose subtrees have few enough decision nodes to enumerate.
    """
    if mode not in ("sup", "inf"):
        raise ValueError("mode must be 'sup' or 'inf'")
    N = tree.grid.steps
    layers = []
    for k in range(N + 1):
        vals = np.array(
            [enumerate_stop_value(tree, payoff, drift, mode, k, i) for i in range(tree.layer_size(k))]
        )
        layers.append(vals)
    return AdaptedValues(layers, 0)


def solve_one_barrier(problem: ProblemSpec, side: str = "upper") -> OneBarrierSolution:
    """Backward solve of the reflected equation against one rcll barrier.

    Per node: one-step representation of the continuation, implicit drift
    solve, then the clamp (min against the upper barrier or max against the
    lower one).  Z and V are the pre-clamp representation components.  At
    flagged layers the pre-jump barrier value induces the predictable push
    recorded in ``dKd``, and the clamped left limit feeds the next step.
    """
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    tree = problem.tree
    bar = problem.barriers
    solver = make_drift_solver(tree, problem.generator, problem.state)
    pre = {}
    for k, (lp, up) in bar.flagged.items():
        pre[k] = (None, up) if side == "upper" else (lp, None)
    res = backward_sweep(
        tree,
        problem.terminal,
        solver,
        lower=bar.lower if side == "lower" else None,
        upper=bar.upper if side == "upper" else None,
        pre_jump=pre,
    )
    dkc = res.dKc_minus if side == "upper" else res.dKc_plus
    dkd = res.dKd_minus if side == "upper" else res.dKd_plus
    return OneBarrierSolution(
        side=side,
        Y=res.Y,
        Z=res.Z,
        V=res.V,
        dKc=dkc,
        dKd=dkd,
        pre_clamp=res.pre_clamp,
        left_limits=res.left_limits,
        sweep=res,
    )

"""Two-barrier machinery: penalization schemes, clamped solver, Picard iteration,
first-increase diagnostics and supermartingale-pair certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MonotonicityViolated, NoContraction
from .lattice import AdaptedValues, Tree, conditional_expectation
from .model import ProblemSpec
from .snell import OneBarrierSolution, StoppingRule
from .sweep import SweepResult, backward_sweep, make_drift_solver

DEFAULT_SCHEDULE = tuple(2**k for k in range(21))
BRACKET_EARLY_STOP = 1e-6


@dataclass
class SolutionQuintuple:
    """Solution processes with both push processes split into their parts."""

    Y: AdaptedValues
    Z: AdaptedValues
    V: AdaptedValues
    dKc_plus: AdaptedValues
    dKc_minus: AdaptedValues
    dKd_plus: AdaptedValues
    dKd_minus: AdaptedValues
    pre_clamp: AdaptedValues
    left_limits: dict = field(default_factory=dict)
    sweep: SweepResult | None = None

    def K_plus(self) -> AdaptedValues:
        return self.sweep.K_plus()

    def K_minus(self) -> AdaptedValues:
        return self.sweep.K_minus()


def _quintuple(res: SweepResult) -> SolutionQuintuple:
    return SolutionQuintuple(
        Y=res.Y,
        Z=res.Z,
        V=res.V,
        dKc_plus=res.dKc_plus,
        dKc_minus=res.dKc_minus,
        dKd_plus=res.dKd_plus,
        dKd_minus=res.dKd_minus,
        pre_clamp=res.pre_clamp,
        left_limits=res.left_limits,
        sweep=res,
    )


def backward_clamped_solve(problem: ProblemSpec, frozen_drift=None) -> SolutionQuintuple:
    """Doubly reflected backward solve: representation, drift solve, double clamp.

    The clamp order is lower-then-upper; under strict separation at most one
    side binds so the order is observationally irrelevant (and asserted by
    the separation check).  ``frozen_drift`` optionally replaces the
    problem's generator by per-node drift values (used by the Picard loop).
    """
    tree = problem.tree
    generator = frozen_drift if frozen_drift is not None else problem.generator
    solver = make_drift_solver(tree, generator, problem.state)
    res = backward_sweep(
        tree,
        problem.terminal,
        solver,
        lower=problem.barriers.lower,
        upper=problem.barriers.upper,
        pre_jump=dict(problem.barriers.flagged),
        require_separation=True,
    )
    return _quintuple(res)


def _penalized_sweep(problem: ProblemSpec, n: float, side: str) -> SweepResult:
    tree = problem.tree
    bar = problem.barriers
    solver = make_drift_solver(tree, problem.generator, problem.state)
    if side == "increasing":
        # lower barrier enters as a drift penalty, upper barrier stays reflecting
        penalty_for = lambda k: ("lower", bar.lower.layer(k), float(n))
        lower, upper = None, bar.upper
    else:
        penalty_for = lambda k: ("upper", bar.upper.layer(k), float(n))
        lower, upper = bar.lower, None
    # predictable pushes at flagged instants are applied exactly on both
    # sides: an instant penalty has no grid analog, and the exact clamp is
    # what the penalty levels converge to anyway
    return backward_sweep(
        tree,
        problem.terminal,
        solver,
        lower=lower,
        upper=upper,
        pre_jump=dict(bar.flagged),
        penalty_for=penalty_for,
    )


def penalize_increasing(problem: ProblemSpec, n: float) -> OneBarrierSolution:
    """Upper-barrier reflected solve with the lower barrier as a drift penalty.

    The per-node implicit equation with the extra +n*(L-y)^+ drift is
    piecewise linear and solved in closed form; values increase in n toward
    the doubly reflected solution.
    """
    res = _penalized_sweep(problem, n, "increasing")
    return OneBarrierSolution(
        side="upper", Y=res.Y, Z=res.Z, V=res.V, dKc=res.dKc_minus, dKd=res.dKd_minus,
        pre_clamp=res.pre_clamp, left_limits=res.left_limits, sweep=res,
    )


def penalize_decreasing(problem: ProblemSpec, n: float) -> OneBarrierSolution:
    """Mirror scheme: lower barrier reflecting, -n*(y-U)^+ penalty, values decrease in n."""
    res = _penalized_sweep(problem, n, "decreasing")
    return OneBarrierSolution(
        side="lower", Y=res.Y, Z=res.Z, V=res.V, dKc=res.dKc_plus, dKd=res.dKd_plus,
        pre_clamp=res.pre_clamp, left_limits=res.left_limits, sweep=res,
    )


@dataclass
class PenalizationTrace:
    levels: list
    increasing: list  # AdaptedValues per level
    decreasing: list
    widths: list

    @property
    def final_width(self) -> float:
        return self.widths[-1]


def _sup_distance(a: AdaptedValues, b: AdaptedValues) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.layers, b.layers))


def penalization_bracket(problem: ProblemSpec, schedule=None,
                         early_stop: float = BRACKET_EARLY_STOP) -> PenalizationTrace:
    """Run both penalty schemes over a level schedule and certify the bracket.

    The increasing-scheme values must rise with the level, the decreasing
    ones fall, and every increasing value stays below every decreasing one;
    a violation is a solver bug and raises MonotonicityViolated.  The final
    width sup|Y' - Y| is the convergence certificate.
    """
    schedule = list(schedule if schedule is not None else DEFAULT_SCHEDULE)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    levels, inc, dec, widths = [], [], [], []
    for n in schedule:
        yi = penalize_increasing(problem, n).Y
        yd = penalize_decreasing(problem, n).Y
        if inc:
            for k in range(problem.tree.n_layers):
                if np.any(yi.layer(k) < inc[-1].layer(k)):
                    raise MonotonicityViolated(f"increasing scheme fell between levels at layer {k}")
                if np.any(yd.layer(k) > dec[-1].layer(k)):
                    raise MonotonicityViolated(f"decreasing scheme rose between levels at layer {k}")
        for k in range(problem.tree.n_layers):
            if np.any(yi.layer(k) > yd.layer(k)):
                raise MonotonicityViolated(f"scheme bracket inverted at layer {k}")
        levels.append(n)
        inc.append(yi)
        dec.append(yd)
        widths.append(_sup_distance(yi, yd))
        if widths[-1] < early_stop:
            break
    return PenalizationTrace(levels, inc, dec, widths)


def default_alpha(lipschitz: float) -> float:
    """Weight rate making the fixed-point map contract with factor about 1/2."""
    return 4.0 * (lipschitz**2 + lipschitz) + 1.0


def alpha_norm(tree: Tree, values: AdaptedValues, alpha: float) -> float:
    """Discrete weighted norm (sum_k e^{alpha t_k} E[Y_k^2] dt)^(1/2) over k < N."""
    dt = tree.grid.dt
    total = 0.0
    for k in range(tree.grid.steps):
        probs = tree.layer_probabilities(k)
        total += math.exp(alpha * tree.grid.time(k)) * float(probs @ values.layer(k) ** 2) * dt
    return math.sqrt(total)


def picard_solve(problem: ProblemSpec, alpha: float | None = None, tol: float = 1e-10,
                 max_iter: int = 60, initial: AdaptedValues | None = None):
    """Fixed-point iteration for solution-dependent generators.

    Each pass freezes (Y, Z, V) from the previous iterate inside the
    generator and runs the clamped solve with the resulting per-node drift.
    Convergence is measured in the weighted norm; the trace records the
    successive distances.  Raises NoContraction when the distance ratio
    stays >= 1 for five passes in a row.
    """
    tree = problem.tree
    spec = problem.generator
    if alpha is None:
        alpha = default_alpha(spec.lipschitz)
    N = tree.grid.steps

    from .model import evaluate_generator

    def frozen_from(sol_Y, sol_Z, sol_V):
        layers = []
        for k in range(N):
            t = tree.grid.time(k)
            x = problem.state_layer(k)
            layers.append(
                np.asarray(
                    evaluate_generator(spec, t, x, sol_Y.layer(k), sol_Z.layer(k), sol_V.layer(k)),
                    dtype=float,
                ).copy()
            )
        return AdaptedValues(layers, 0)

    if initial is None:
        initial = AdaptedValues([np.zeros(tree.layer_size(k)) for k in range(N + 1)], 0)
    Y = initial
    Z = AdaptedValues([np.zeros(tree.layer_size(k)) for k in range(N)], 0)
    V = AdaptedValues([np.zeros((tree.layer_size(k), tree.marks.m)) for k in range(N)], 0)

    trace = []
    bad_streak = 0
    solution = None
    for _ in range(max_iter):
        drift = frozen_from(Y, Z, V)
        solution = backward_clamped_solve(problem, frozen_drift=drift)
        diff = AdaptedValues([solution.Y.layer(k) - Y.layer(k) for k in range(N)], 0)
        dist = alpha_norm(tree, diff, alpha)
        if trace and trace[-1] > 0:
            bad_streak = bad_streak + 1 if dist / trace[-1] >= 1.0 else 0
            if bad_streak >= 5:
                raise NoContraction(
                    f"no geometric decay with alpha={alpha}; increase the weight rate"
                )
        trace.append(dist)
        Y, Z, V = solution.Y, solution.Z, solution.V
        if dist < tol:
            return solution, trace
    return solution, trace


def first_increase_time(tree: Tree, K: AdaptedValues, tau: StoppingRule) -> StoppingRule:
    """First node after tau where the cumulative push strictly increases, else the horizon.

    ``K`` is a per-node cumulative nondecreasing process along paths; the
    returned rule marks, per path, the first node with K > K at the tau
    node.  Paths without an increase run to the forced terminal stop.
    """
    b = tree.n_branches
    N = tree.grid.steps
    stop = [np.zeros(tree.layer_size(k), dtype=bool) for k in range(N + 1)]
    passed = tau.stop[0].copy()
    ref = np.where(passed, K.layer(0), np.nan)
    done = np.zeros(1, dtype=bool)
    for k in range(1, N + 1):
        passed_par = np.repeat(passed, b)
        ref_par = np.repeat(ref, b)
        done_par = np.repeat(done, b)
        kk = K.layer(k)
        inc_here = passed_par & ~done_par & (kk > ref_par)
        stop[k] = inc_here
        done = done_par | inc_here
        tau_here = tau.stop[k] if k < N else np.ones(tree.layer_size(k), dtype=bool)
        newly = ~passed_par & tau_here
        passed = passed_par | newly
        ref = np.where(newly, kk, ref_par)
    return StoppingRule(tree, stop)


@dataclass
class MokobodskiCertificate:
    """A pair of non-negative supermartingales sandwiching the barriers."""

    h: AdaptedValues
    h_prime: AdaptedValues
    defect: AdaptedValues  # E[next] - current (interior nodes); <= 0 up to roundoff
    defect_prime: AdaptedValues


def mokobodski_certificate(tree: Tree, solution: SolutionQuintuple,
                           cutoff: StoppingRule | None = None) -> MokobodskiCertificate:
    """Build the certificate pair from a solved instance.

    h carries the positive part of the stopped value plus the remaining
    upward push, h' the negative part plus the downward push; both are
    supermartingales by construction and their difference reproduces the
    solution of the drift-free instance node for node.
    """
    N = tree.grid.steps
    if cutoff is None:
        cutoff = StoppingRule.never(tree)

    def backward(y_sign, dkc, dkd):
        vals = [None] * (N + 1)
        defs = [None] * N
        stopped_before = np.zeros(1, dtype=bool)
        stop_here = [None] * (N + 1)
        mask = stopped_before
        for k in range(N + 1):
            here = cutoff.stop[k] if k < N else np.ones(tree.layer_size(k), dtype=bool)
            stop_here[k] = ~mask & here
            mask = np.repeat(mask | here, tree.n_branches) if k < N else None
        vals[N] = np.maximum(y_sign * solution.Y.layer(N), 0.0)
        for k in range(N - 1, -1, -1):
            child = vals[k + 1] + dkd.layer(k + 1)
            cont = conditional_expectation(tree, child, k) + dkc.layer(k)
            yplus = np.maximum(y_sign * solution.Y.layer(k), 0.0)
            vals[k] = np.where(stop_here[k], yplus, cont)
            defs[k] = conditional_expectation(tree, vals[k + 1], k) - vals[k]
        return AdaptedValues(vals, 0), AdaptedValues(defs, 0)

    h, d = backward(1.0, solution.dKc_plus, solution.dKd_plus)
    hp, dp = backward(-1.0, solution.dKc_minus, solution.dKd_minus)
    return MokobodskiCertificate(h=h, h_prime=hp, defect=d, defect_prime=dp)

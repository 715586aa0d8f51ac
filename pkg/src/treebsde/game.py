"""Zero-sum mixed control/stopping game on the tree.

The minimizer picks a control in A and a stopping time paying the upper
barrier; the maximizer picks a control in B and a stopping time collecting
the lower one.  Controls act through a drift tilt theta = f/sigma on the
diffusion and an intensity tilt beta on the marks, plus a running payoff h.
The value solves the doubly reflected equation with the saddle Hamiltonian
as generator, and is cross-checked by exhaustive enumeration oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSigma, TooLargeToEnumerate
from .lattice import AdaptedValues, Tree, conditional_expectation, forward_state, represent_layer, reweight
from .model import BarrierPair
from .oracles import dynkin_pair_oracle
from .sweep import SweepResult, backward_sweep

SADDLE_TOL = 1e-12


@dataclass
class ControlGrid:
    """Finite control sets for the two players."""

    A: tuple
    B: tuple

    def __post_init__(self):
        self.A = tuple(self.A)
        self.B = tuple(self.B)
        if not self.A or not self.B:
            raise ValueError("control grids must be non-empty")


@dataclass
class GameSpec:
    """A mixed control/stopping game instance.

    Callbacks (any may be None, meaning identically zero; sigma defaults
    to one): ``sigma(t, x)``, ``gamma(t, e, x)`` for the state,
    ``drift(t, x, u, v)``, ``tilt(t, e, x, u, v)`` with tilt > -1, and the
    running payoff ``running(t, x, u, v)``.  All must accept array x.
    """

    tree: Tree
    controls: ControlGrid
    barriers: BarrierPair
    terminal: np.ndarray
    sigma: object = None
    gamma: object = None
    drift: object = None
    tilt: object = None
    running: object = None
    x0: float = 0.0
    _state: AdaptedValues = field(default=None, repr=False)

    def __post_init__(self):
        self.terminal = np.asarray(self.terminal, dtype=float)
        n = self.tree.layer_size(self.tree.grid.steps)
        if self.terminal.shape == ():
            self.terminal = np.full(n, float(self.terminal))

    def state(self) -> AdaptedValues:
        """Forward state skeleton under the reference measure (built once)."""
        if self._state is None:
            sig = self.sigma if self.sigma is not None else (lambda t, x: np.ones_like(x))
            gam = self.gamma if self.gamma is not None else (lambda t, e, x: np.zeros_like(x))
            self._state = forward_state(self.tree, sig, gam, self.x0)
        return self._state

    def sigma_at(self, t, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.sigma is None:
            return np.ones_like(x)
        s = np.broadcast_to(np.asarray(self.sigma(t, x), dtype=float), x.shape)
        if np.any(s == 0.0):
            raise SingularSigma(f"sigma vanishes at t={t}")
        return s

    def _eval(self, fn, t, x, u, v) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if fn is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(fn(t, x, u, v), dtype=float), x.shape).astype(float)

    def tilt_at(self, t, x, u, v) -> np.ndarray:
        """Per-mark intensity tilt, shape (n, m)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m = self.tree.marks.m
        if self.tilt is None or m == 0:
            return np.zeros((x.shape[0], m))
        cols = [
            np.broadcast_to(np.asarray(self.tilt(t, e, x, u, v), dtype=float), x.shape)
            for e in self.tree.marks.points
        ]
        return np.stack(cols, axis=1)


def tilt_dual(tree: Tree, z, v):
    """The pair at which the Hamiltonian reproduces the tilted expectation.

    For the one-step density zeta = 1 + theta*dB + sum beta_j*C_j and the
    representation y = a + Z*dB + sum V_j*C_j, the exact identity

        E[zeta*y] = a + dt*(theta*z_g + sum_j beta_j*lambda_j*r_g_j)

    holds with z_g = Z*(1 - dt*sum(lambda)) and r_g_j = V_j - dt*sum_k
    V_k*lambda_k.  Evaluating H at (z_g, r_g) makes the generator route and
    the change-of-measure route agree to machine precision.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    dt = tree.grid.dt
    rates = np.asarray(tree.marks.rates, dtype=float)
    zg = z * (1.0 - dt * tree.marks.total_rate)
    rg = v - dt * (v @ rates)[:, None] if tree.marks.m else v
    return zg, rg


def hamiltonian(game: GameSpec, t, x, z, r, u, v) -> float:
    """H = z*sigma^{-1}*f + h + sum_j r_j*beta_j*lambda_j at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float)) if game.tree.marks.m else np.zeros((x.shape[0], 0))
    out = _layer_hamiltonian(game, t, x, z, r, u, v)
    return float(out[0]) if out.shape[0] == 1 else out


def _layer_hamiltonian(game: GameSpec, t, x, z, r, u, v) -> np.ndarray:
    sig = game.sigma_at(t, x)
    f = game._eval(game.drift, t, x, u, v)
    h = game._eval(game.running, t, x, u, v)
    out = z * f / sig + h
    if game.tree.marks.m:
        rates = np.asarray(game.tree.marks.rates, dtype=float)
        beta = game.tilt_at(t, x, u, v)
        out = out + (r * beta) @ rates
    return out


def _hamiltonian_table(game: GameSpec, t, x, z, r) -> np.ndarray:
    """H over the full control grid, shape (p, q, n_nodes)."""
    A, B = game.controls.A, game.controls.B
    n = np.atleast_1d(np.asarray(x, dtype=float)).shape[0]
    table = np.empty((len(A), len(B), n))
    for iu, u in enumerate(A):
        for iv, v in enumerate(B):
            table[iu, iv] = _layer_hamiltonian(game, t, x, z, r, u, v)
    return table


def _saddle_from_table(table: np.ndarray):
    """Vectorized first-index saddle selection from H values (p, q, n)."""
    max_over_v = table.max(axis=1)
    infsup = max_over_v.min(axis=0)
    u_idx = max_over_v.argmin(axis=0)
    min_over_u = table.min(axis=0)
    supinf = min_over_u.max(axis=0)
    v_idx = min_over_u.argmax(axis=0)
    gap = infsup - supinf
    n = table.shape[2]
    sel = table[u_idx, v_idx, np.arange(n)]
    tight = gap <= SADDLE_TOL
    if np.any(tight):
        # saddle inequalities, with the (tiny) gap as the only slack
        row = table[u_idx, :, np.arange(n)]
        col = table[:, v_idx, np.arange(n)].T
        assert np.all(row[tight] <= (sel + gap)[tight, None])
        assert np.all(col[tight] >= (sel - gap)[tight, None])
    return u_idx, v_idx, infsup, gap


def saddle_select(game: GameSpec, t, x, z, r):
    """Grid saddle point of H at one point: (u*, v*, H*, gap).

    infsup = min_u max_v H, supinf = max_v min_u H; first index wins ties;
    H* = infsup and gap = infsup - supinf >= 0.  When the gap is below
    tolerance the returned pair satisfies the saddle inequalities.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))[:1]
    z = np.atleast_1d(np.asarray(z, dtype=float))[:1]
    r = np.atleast_2d(np.asarray(r, dtype=float))[:1] if game.tree.marks.m else np.zeros((1, 0))
    table = _hamiltonian_table(game, t, x, z, r)
    u_idx, v_idx, hstar, gap = _saddle_from_table(table)
    return (
        game.controls.A[int(u_idx[0])],
        game.controls.B[int(v_idx[0])],
        float(hstar[0]),
        float(gap[0]),
    )


@dataclass
class GameResult:
    """Solved game: value process, saddle maps, gaps, push decomposition."""

    Y: AdaptedValues
    Z: AdaptedValues  # dual diffusion component fed to H
    R: AdaptedValues  # dual mark components fed to H, shape (n, m) per layer
    u_index: AdaptedValues
    v_index: AdaptedValues
    gap: AdaptedValues
    controls: ControlGrid
    sweep: SweepResult
    oracle: dict | None = None

    def u_star(self, k: int) -> list:
        return [self.controls.A[int(i)] for i in self.u_index.layer(k)]

    def v_star(self, k: int) -> list:
        return [self.controls.B[int(i)] for i in self.v_index.layer(k)]

    def K_plus(self) -> AdaptedValues:
        return self.sweep.K_plus()

    def K_minus(self) -> AdaptedValues:
        return self.sweep.K_minus()

    @property
    def max_gap(self) -> float:
        return max(float(g.max()) if g.size else 0.0 for g in self.gap.layers)


def solve_game(game: GameSpec, with_oracle: bool = False) -> GameResult:
    """Backward solve of the game value with the saddle generator.

    Per node: representation of the continuation, saddle selection of H at
    the dual pair, explicit drift step y = a + dt*H*, then the double clamp
    with push bookkeeping.  The saddle maps and Isaacs gaps are recorded
    per node; ``with_oracle`` additionally runs the brute-force oracle and
    stores (supinf, infsup, Y_root).
    """
    tree = game.tree
    state = game.state()
    dt = tree.grid.dt
    N = tree.grid.steps
    rec = {}

    def solver(k, a, z, v, penalty=None):
        zg, rg = tilt_dual(tree, z, v)
        table = _hamiltonian_table(game, tree.grid.time(k), state.layer(k), zg, rg)
        u_idx, v_idx, hstar, gap = _saddle_from_table(table)
        rec[k] = (zg, rg, u_idx, v_idx, gap)
        return a + dt * hstar

    res = backward_sweep(
        tree,
        game.terminal,
        solver,
        lower=game.barriers.lower,
        upper=game.barriers.upper,
        pre_jump=dict(game.barriers.flagged),
        require_separation=True,
    )
    result = GameResult(
        Y=res.Y,
        Z=AdaptedValues([rec[k][0] for k in range(N)], 0),
        R=AdaptedValues([rec[k][1] for k in range(N)], 0),
        u_index=AdaptedValues([rec[k][2] for k in range(N)], 0),
        v_index=AdaptedValues([rec[k][3] for k in range(N)], 0),
        gap=AdaptedValues([rec[k][4] for k in range(N)], 0),
        controls=game.controls,
        sweep=res,
    )
    if with_oracle:
        supinf, infsup = brute_force_game_oracle(game)
        result.oracle = {"supinf": supinf, "infsup": infsup, "Y_root": float(res.Y.layer(0)[0])}
    return result


def constant_control_map(tree: Tree, index: int) -> list:
    """Per-layer control index arrays holding one fixed index."""
    return [np.full(tree.layer_size(k), index, dtype=int) for k in range(tree.grid.steps)]


def _controlled_coefficients(game: GameSpec, u_map, v_map):
    """Per layer: drift tilt theta, mark tilt beta, running payoff h (per node)."""
    tree = game.tree
    state = game.state()
    out = []
    for k in range(tree.grid.steps):
        t = tree.grid.time(k)
        x = state.layer(k)
        n = x.shape[0]
        theta = np.zeros(n)
        beta = np.zeros((n, tree.marks.m))
        h = np.zeros(n)
        sig = game.sigma_at(t, x)
        ui = np.asarray(u_map[k], dtype=int)
        vi = np.asarray(v_map[k], dtype=int)
        for iu, u in enumerate(game.controls.A):
            for iv, v in enumerate(game.controls.B):
                mask = (ui == iu) & (vi == iv)
                if not np.any(mask):
                    continue
                xm = x[mask]
                theta[mask] = game._eval(game.drift, t, xm, u, v) / sig[mask]
                h[mask] = game._eval(game.running, t, xm, u, v)
                if tree.marks.m:
                    beta[mask] = game.tilt_at(t, xm, u, v)
        out.append((theta, beta, h))
    return out


def _clamped_recursion(game: GameSpec, value_step) -> AdaptedValues:
    """Shared backward loop: terminal, per-step value, double clamp, pre-jump clamps."""
    tree = game.tree
    N = tree.grid.steps
    bar = game.barriers
    flagged = bar.flagged

    def d_clamp(y, k):
        lp, up = flagged[k]
        out = y
        if lp is not None:
            out = np.maximum(lp, out)
        if up is not None:
            out = np.minimum(up, out)
        return out

    layers = [None] * (N + 1)
    layers[N] = game.terminal.copy()
    cont = d_clamp(layers[N], N) if N in flagged else layers[N]
    for k in range(N - 1, -1, -1):
        y = value_step(k, cont)
        layers[k] = np.minimum(bar.upper.layer(k), np.maximum(bar.lower.layer(k), y))
        cont = d_clamp(layers[k], k) if k in flagged else layers[k]
    return AdaptedValues(layers, 0)


def dynkin_value(game: GameSpec, u_map, v_map, route: str = "both"):
    """Value of the stopping game under fixed control maps, by two routes.

    Route "R1" tilts the branch weights by the control-dependent density and
    runs the plain clamped recursion with running payoff h.  Route "R2"
    stays under the base weights and adds the Hamiltonian at the dual
    representation pair as a drift.  The two agree to machine precision;
    their comparison is the change-of-measure consistency test.  ``route``
    "both" returns the pair (R1, R2).
    """
    tree = game.tree
    dt = tree.grid.dt
    coeff = _controlled_coefficients(game, u_map, v_map)

    def step_r1(k, cont):
        theta, beta, h = coeff[k]
        w = reweight(tree, theta, beta, k)
        return conditional_expectation(tree, cont, k, weights=w) + h * dt

    def step_r2(k, cont):
        theta, beta, h = coeff[k]
        a, z, v = represent_layer(tree, cont, k)
        zg, rg = tilt_dual(tree, z, v)
        drift = zg * theta + h
        if tree.marks.m:
            rates = np.asarray(tree.marks.rates, dtype=float)
            drift = drift + (rg * beta) @ rates
        return a + dt * drift

    if route == "R1":
        return _clamped_recursion(game, step_r1)
    if route == "R2":
        return _clamped_recursion(game, step_r2)
    if route == "both":
        return _clamped_recursion(game, step_r1), _clamped_recursion(game, step_r2)
    raise ValueError("route must be 'R1', 'R2' or 'both'")


MAX_CONTROL_PAIRS = 10**6


def _all_maps(tree: Tree, n_controls: int):
    """Every assignment of a control index to each non-terminal node."""
    sizes = [tree.layer_size(k) for k in range(tree.grid.steps)]
    total = sum(sizes)
    maps = []
    for code in range(n_controls**total):
        flat = np.empty(total, dtype=int)
        rem = code
        for s in range(total):
            flat[s] = rem % n_controls
            rem //= n_controls
        layers, pos = [], 0
        for sz in sizes:
            layers.append(flat[pos:pos + sz])
            pos += sz
        maps.append(layers)
    return maps


def brute_force_game_oracle(game: GameSpec):
    """Exact (supinf, infsup) over adapted control maps and stopping-rule pairs.

    For every pair of node-feedback control maps the inner stopping game is
    solved by full enumeration of stopping-rule pairs under the tilted
    weights; the outer optimization is exact over all maps.  On a tree,
    node-feedback maps exhaust adapted control processes.  supinf =
    max_v min_u, infsup = min_u max_v; weak duality supinf <= infsup holds
    by construction.
    """
    tree = game.tree
    n_nodes = sum(tree.layer_size(k) for k in range(tree.grid.steps))
    p, q = len(game.controls.A), len(game.controls.B)
    pairs = (p**n_nodes) * (q**n_nodes)
    if pairs > MAX_CONTROL_PAIRS:
        raise TooLargeToEnumerate(f"{pairs} control-map pairs > {MAX_CONTROL_PAIRS}")

    u_maps = _all_maps(tree, p)
    v_maps = _all_maps(tree, q)
    dt = tree.grid.dt
    vals = np.empty((len(u_maps), len(v_maps)))
    for a, um in enumerate(u_maps):
        for b, vm in enumerate(v_maps):
            coeff = _controlled_coefficients(game, um, vm)
            weights = [reweight(tree, th, be, k) for k, (th, be, _) in enumerate(coeff)]
            drift = AdaptedValues([c[2] for c in coeff], 0)
            infsup_stop, supinf_stop = dynkin_pair_oracle(
                tree,
                game.terminal,
                game.barriers.lower,
                game.barriers.upper,
                drift=drift,
                pre_jump=dict(game.barriers.flagged),
                weights=weights,
            )
            # the inner stopping game has a value on a finite tree
            assert abs(infsup_stop - supinf_stop) <= 1e-9 * (1.0 + abs(infsup_stop))
            vals[a, b] = infsup_stop
    infsup = float(vals.max(axis=1).min())
    supinf = float(vals.min(axis=0).max())
    return supinf, infsup

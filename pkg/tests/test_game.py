import numpy as np
import pytest

from treebsde import (
    BarrierPair,
    ControlGrid,
    DensityNotPositive,
    GameSpec,
    GeneratorSpec,
    MarkSet,
    ProblemSpec,
    SingularSigma,
    TimeGrid,
    TooLargeToEnumerate,
    backward_clamped_solve,
    brute_force_game_oracle,
    build_tree,
    constant_control_map,
    constant_values,
    dynkin_value,
    hamiltonian,
    saddle_select,
    solve_game,
    tilt_dual,
)


def wide_game(tree, terminal, **kwargs):
    barriers = BarrierPair(constant_values(tree, -1e6), constant_values(tree, 1e6))
    controls = kwargs.pop("controls", ControlGrid((0.0,), (0.0,)))
    return GameSpec(tree, controls, barriers, terminal, **kwargs)


def payoff_table_game(tree, table, terminal=0.0, lower=-1e6, upper=1e6):
    """Controls are row/column indices; running payoff reads the matrix."""
    table = np.asarray(table, dtype=float)
    barriers = BarrierPair(constant_values(tree, lower), constant_values(tree, upper))
    controls = ControlGrid(tuple(range(table.shape[0])), tuple(range(table.shape[1])))
    return GameSpec(
        tree, controls, barriers, terminal,
        running=lambda t, x, u, v: table[u, v],
    )


class TestHamiltonian:
    def test_zero_game(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(tree, np.zeros(2))
        assert hamiltonian(game, 0.0, 0.0, 1.0, np.zeros((1, 0)), 0.0, 0.0) == 0.0

    def test_drift_term(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(
            tree, np.zeros(2),
            controls=ControlGrid((-1.0, 1.0), (-1.0, 1.0)),
            drift=lambda t, x, u, v: u - v,
        )
        vals = {
            hamiltonian(game, 0.0, 0.0, 1.0, np.zeros((1, 0)), u, v)
            for u in (-1.0, 1.0) for v in (-1.0, 1.0)
        }
        assert vals == {-2.0, 0.0, 2.0}

    def test_mark_term(self):
        tree = build_tree(TimeGrid(1.0, 1), MarkSet((1.0,), (0.2,)))
        game = wide_game(
            tree, np.zeros(3),
            tilt=lambda t, e, x, u, v: 1.0,
        )
        # r*beta*lambda = 2 * 1 * 0.2
        out = hamiltonian(game, 0.0, 0.0, 0.0, np.array([[2.0]]), 0.0, 0.0)
        assert out == pytest.approx(0.4, abs=1e-15)

    def test_singular_sigma(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(tree, np.zeros(2), sigma=lambda t, x: 0.0 * x)
        with pytest.raises(SingularSigma):
            hamiltonian(game, 0.0, 0.0, 1.0, np.zeros((1, 0)), 0.0, 0.0)


class TestSaddleSelect:
    def test_pure_saddle(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[1.0, 2.0], [0.0, 3.0]])
        u, v, h, gap = saddle_select(game, 0.0, 0.0, 0.0, np.zeros((1, 0)))
        assert (u, v) == (0, 1)
        assert h == 2.0
        assert gap == 0.0

    def test_matching_pennies_gap(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[0.0, 1.0], [1.0, 0.0]])
        _, _, h, gap = saddle_select(game, 0.0, 0.0, 0.0, np.zeros((1, 0)))
        assert h == 1.0  # infsup side
        assert gap == 1.0

    def test_constant_table_first_index(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[5.0, 5.0], [5.0, 5.0]])
        u, v, h, gap = saddle_select(game, 0.0, 0.0, 0.0, np.zeros((1, 0)))
        assert (u, v, h, gap) == (0, 0, 5.0, 0.0)


class TestTiltDual:
    def test_no_marks_shrinks_nothing(self):
        tree = build_tree(TimeGrid(1.0, 1))
        zg, rg = tilt_dual(tree, np.array([2.0]), np.zeros((1, 0)))
        assert zg[0] == 2.0

    def test_single_mark(self):
        tree = build_tree(TimeGrid(1.0, 1), MarkSet((1.0,), (0.2,)))
        zg, rg = tilt_dual(tree, np.array([1.0]), np.array([[3.0]]))
        assert zg[0] == pytest.approx(0.8, abs=1e-15)  # 1 - dt*lambda
        assert rg[0, 0] == pytest.approx(3.0 - 0.2 * 3.0, abs=1e-15)


class TestSolveGame:
    def test_degenerate_equals_clamped_solve(self):
        tree = build_tree(TimeGrid(1.0, 2), MarkSet((1.0,), (0.3,)))
        rng = np.random.default_rng(40)
        lower = constant_values(tree, -1.0)
        upper = constant_values(tree, 1.0)
        xi = rng.uniform(-1.0, 1.0, 9)
        game = GameSpec(tree, ControlGrid((0.0,), (0.0,)), BarrierPair(lower, upper), xi)
        result = solve_game(game)
        problem = ProblemSpec(
            tree, GeneratorSpec("constant", {"c0": 0.0}), BarrierPair(lower, upper), xi
        )
        plain = backward_clamped_solve(problem)
        for k in range(3):
            assert np.array_equal(result.Y.layer(k), plain.Y.layer(k))
        assert result.max_gap == 0.0

    def test_constant_running_payoff_accumulates(self):
        tree = build_tree(TimeGrid(1.0, 2), MarkSet((1.0,), (0.2,)))
        rng = np.random.default_rng(41)
        xi = rng.normal(size=9)
        game = wide_game(tree, xi, running=lambda t, x, u, v: 1.0)
        result = solve_game(game)
        expect = float(tree.layer_probabilities(2) @ xi) + 1.0  # E[xi] + T*h
        assert result.Y.layer(0)[0] == pytest.approx(expect, abs=1e-12)

    def test_one_step_matrix_value(self):
        # dt = 1, xi = 0, wide barriers: the value is the saddle of the matrix
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[1.0, 2.0], [0.0, 3.0]])
        result = solve_game(game, with_oracle=True)
        assert result.Y.layer(0)[0] == 2.0
        assert result.oracle["supinf"] == pytest.approx(2.0, abs=1e-12)
        assert result.oracle["infsup"] == pytest.approx(2.0, abs=1e-12)

    def test_saddle_maps_recorded(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[1.0, 2.0], [0.0, 3.0]])
        result = solve_game(game)
        assert result.u_star(0) == [0]
        assert result.v_star(0) == [1]


class TestDynkinValue:
    def test_one_step_tilted_expectation(self):
        # theta = 0.5 tilts the coin to (0.75, 0.25); xi = (1, -1) -> 0.5
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(tree, np.array([1.0, -1.0]), drift=lambda t, x, u, v: 0.5)
        um = constant_control_map(tree, 0)
        vm = constant_control_map(tree, 0)
        r1, r2 = dynkin_value(game, um, vm)
        assert r1.layer(0)[0] == pytest.approx(0.5, abs=1e-15)
        assert r2.layer(0)[0] == pytest.approx(0.5, abs=1e-15)

    def test_routes_agree_with_marks(self):
        tree = build_tree(TimeGrid(1.0, 3), MarkSet((1.0,), (0.4,)))
        rng = np.random.default_rng(42)
        lower = constant_values(tree, -0.8)
        upper = constant_values(tree, 0.8)
        xi = rng.uniform(-0.8, 0.8, tree.layer_size(3))
        game = GameSpec(
            tree, ControlGrid((0.0, 1.0), (0.0, 1.0)), BarrierPair(lower, upper), xi,
            drift=lambda t, x, u, v: 0.3 * u - 0.2 * v,
            tilt=lambda t, e, x, u, v: 0.5 * u,
            running=lambda t, x, u, v: u * v,
        )
        um = [rng.integers(0, 2, tree.layer_size(k)) for k in range(3)]
        vm = [rng.integers(0, 2, tree.layer_size(k)) for k in range(3)]
        r1, r2 = dynkin_value(game, um, vm)
        for k in range(4):
            assert np.max(np.abs(r1.layer(k) - r2.layer(k))) <= 1e-14

    def test_single_control_matches_solve_game(self):
        tree = build_tree(TimeGrid(1.0, 2), MarkSet((1.0,), (0.3,)))
        rng = np.random.default_rng(43)
        lower = constant_values(tree, -0.5)
        upper = constant_values(tree, 0.5)
        xi = rng.uniform(-0.5, 0.5, 9)
        game = GameSpec(
            tree, ControlGrid((1.0,), (1.0,)), BarrierPair(lower, upper), xi,
            drift=lambda t, x, u, v: 0.4 * u,
            running=lambda t, x, u, v: 0.1,
        )
        result = solve_game(game)
        r2 = dynkin_value(game, constant_control_map(tree, 0),
                          constant_control_map(tree, 0), route="R2")
        for k in range(3):
            assert np.array_equal(result.Y.layer(k), r2.layer(k))

    def test_density_not_positive(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(tree, np.zeros(2), drift=lambda t, x, u, v: 3.0)
        with pytest.raises(DensityNotPositive):
            dynkin_value(game, constant_control_map(tree, 0),
                         constant_control_map(tree, 0), route="R1")

    def test_bad_route(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = wide_game(tree, np.zeros(2))
        with pytest.raises(ValueError):
            dynkin_value(game, constant_control_map(tree, 0),
                         constant_control_map(tree, 0), route="R3")


class TestGameOracle:
    def test_single_pair_matches_dynkin(self):
        tree = build_tree(TimeGrid(1.0, 2))
        rng = np.random.default_rng(44)
        lower = constant_values(tree, -0.6)
        upper = constant_values(tree, 0.6)
        xi = rng.uniform(-0.6, 0.6, 4)
        game = GameSpec(
            tree, ControlGrid((1.0,), (1.0,)), BarrierPair(lower, upper), xi,
            drift=lambda t, x, u, v: 0.3,
            running=lambda t, x, u, v: -0.2,
        )
        supinf, infsup = brute_force_game_oracle(game)
        r1 = dynkin_value(game, constant_control_map(tree, 0),
                          constant_control_map(tree, 0), route="R1")
        assert supinf == pytest.approx(infsup, abs=1e-12)
        assert infsup == pytest.approx(r1.layer(0)[0], abs=1e-10)

    def test_weak_duality(self):
        tree = build_tree(TimeGrid(1.0, 1))
        game = payoff_table_game(tree, [[0.0, 1.0], [1.0, 0.0]],
                                 lower=-0.3, upper=0.3)
        supinf, infsup = brute_force_game_oracle(game)
        assert supinf <= infsup + 1e-12

    def test_size_cap(self):
        tree = build_tree(TimeGrid(1.0, 4), MarkSet((1.0,), (0.2,)))
        game = payoff_table_game(tree, [[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(TooLargeToEnumerate):
            brute_force_game_oracle(game)


class TestControlGrid:
    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            ControlGrid((), (1.0,))

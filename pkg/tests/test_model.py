import numpy as np
import pytest

from treebsde import (
    BarrierPair,
    GeneratorSpec,
    MarkSet,
    ProblemSpec,
    TimeGrid,
    UnknownForm,
    barriers_from_functions,
    build_tree,
    constant_values,
    evaluate_generator,
    validate,
)


def small_tree():
    return build_tree(TimeGrid(1.0, 2), MarkSet((1.0,), (0.2,)))


def flat_problem(tree, lower, upper, terminal, flagged=None, lipschitz=0.0):
    barriers = BarrierPair(
        constant_values(tree, lower), constant_values(tree, upper), flagged or {}
    )
    gen = GeneratorSpec("constant", {"c0": 0.0}, lipschitz=lipschitz)
    return ProblemSpec(tree, gen, barriers, terminal)


class TestGeneratorRegistry:
    def test_unknown_form(self):
        with pytest.raises(UnknownForm):
            GeneratorSpec("cubic", {})

    def test_affine_constant_part(self):
        spec = GeneratorSpec("affine", {"a0": 1.0})
        out = evaluate_generator(spec, 0.3, 0.0, np.zeros(2), np.zeros(2), np.zeros((2, 0)))
        assert np.all(out == 1.0)

    def test_affine_y_slope(self):
        spec = GeneratorSpec("affine", {"b": 2.0})
        out = evaluate_generator(spec, 0.0, 0.0, np.array([3.0]), np.zeros(1), np.zeros((1, 0)))
        assert out[0] == 6.0

    def test_clip(self):
        spec = GeneratorSpec("lipschitz-clip", {"a0": 5.0, "clip": 1.0})
        out = evaluate_generator(spec, 0.0, 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 0)))
        assert out[0] == 1.0

    def test_mark_components(self):
        spec = GeneratorSpec("affine", {"d": [2.0, -1.0]})
        v = np.array([[1.0, 3.0]])
        out = evaluate_generator(spec, 0.0, 0.0, np.zeros(1), np.zeros(1), v)
        assert out[0] == pytest.approx(-1.0, abs=1e-15)

    def test_depends_on_solution(self):
        assert not GeneratorSpec("constant", {"c0": 1.0}).depends_on_solution
        assert GeneratorSpec("affine", {"c": 0.5}).depends_on_solution


class TestValidation:
    def test_all_pass(self):
        tree = small_tree()
        report = validate(flat_problem(tree, 0.0, 1.0, np.full(9, 0.5)), require_h=True)
        assert report.passed

    def test_coincident_barriers_fail_strict_separation(self):
        tree = small_tree()
        report = validate(flat_problem(tree, 0.0, 0.0, np.zeros(9)), require_h=True)
        assert report.check("barrier-order").passed
        assert not report.check("strict-separation").passed

    def test_flagged_left_limit_violation(self):
        tree = small_tree()
        flagged = {1: (np.zeros(3), np.zeros(3))}  # U_pre equals L_pre
        report = validate(
            flat_problem(tree, 0.0, 1.0, np.full(9, 0.5), flagged=flagged), require_h=True
        )
        assert not report.check("strict-separation").passed

    def test_terminal_sandwich(self):
        tree = small_tree()
        report = validate(flat_problem(tree, 0.0, 1.0, np.full(9, 1.5)))
        assert not report.check("terminal-sandwich").passed

    def test_lipschitz_probe_catches_understated_constant(self):
        tree = small_tree()
        barriers = BarrierPair(constant_values(tree, -5.0), constant_values(tree, 5.0))
        gen = GeneratorSpec("affine", {"b": 2.0}, lipschitz=0.5)  # understated
        report = validate(ProblemSpec(tree, gen, barriers, np.zeros(9)))
        assert not report.check("lipschitz-probe").passed

    def test_lipschitz_probe_accepts_honest_constant(self):
        tree = small_tree()
        barriers = BarrierPair(constant_values(tree, -5.0), constant_values(tree, 5.0))
        gen = GeneratorSpec("affine", {"b": 1.0, "c": 0.5, "d": [0.3]}, lipschitz=1.8)
        report = validate(ProblemSpec(tree, gen, barriers, np.zeros(9)))
        assert report.check("lipschitz-probe").passed

    def test_contraction_margin_warning(self):
        tree = build_tree(TimeGrid(4.0, 2))  # dt = 2
        barriers = BarrierPair(constant_values(tree, -5.0), constant_values(tree, 5.0))
        gen = GeneratorSpec("affine", {"b": 0.6}, lipschitz=0.6)  # C_f*dt = 1.2
        report = validate(ProblemSpec(tree, gen, barriers, np.zeros(4)))
        assert not report.check("contraction-margin").passed


class TestBarriers:
    def test_flagged_realization_from_callables(self):
        tree = small_tree()
        barriers = barriers_from_functions(
            tree,
            lower_fn=lambda t, x: -1.0,
            upper_fn=lambda t, x: 1.0 + t,
            flagged={1: (None, 0.25)},
        )
        lp, up = barriers.pre_jump(1)
        assert np.all(lp == -1.0)  # missing side defaults to the at-time value
        assert np.all(up == 0.25)
        lp0, up0 = barriers.pre_jump(2)  # unflagged: left limit equals the value
        assert np.all(up0 == barriers.upper.layer(2))

    def test_terminal_broadcast(self):
        tree = small_tree()
        problem = flat_problem(tree, 0.0, 1.0, 0.5)
        assert problem.terminal.shape == (9,)

    def test_terminal_wrong_length(self):
        tree = small_tree()
        with pytest.raises(ValueError):
            flat_problem(tree, 0.0, 1.0, np.zeros(4))

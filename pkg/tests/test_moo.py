import math

import numpy as np
import pytest

from mouc import moo
from mouc.instance import Instance
from mouc.model import build_model
from mouc.moo import (
    AwsParams,
    InfeasibleModelError,
    SweepConfig,
    aws,
    completed_subproblems,
    epsilon_grid,
    epsilon_sweep,
    offsets,
    refinement_count,
    run_budgeted,
    uniform_sweep,
    uniform_weights,
    utopia_nadir,
    workers_from_env,
)
from mouc.pareto import dominates

from builders import curved_three_unit, random_tiny, single_unit_t1, thermal
from oracle import Oracle


def _pareto_certified(oracle, f, rtol=1e-6):
    """No feasible point beats ``f`` in f1 at emissions ``<= f2`` (exact enumeration)."""
    best = oracle.solve((1.0, 0.0), cap=(1, f[1]))
    return best.value >= f[0] - rtol * max(1.0, abs(f[0]))


# ---------------------------------------------------------------- parameters

def test_aws_params_defaults_and_checks():
    p = AwsParams()
    assert (p.n_initial, p.delta_J, p.C, p.max_rounds) == (10, 0.1, 1.5, 20)
    assert p.overlap_eps == pytest.approx(0.01)
    with pytest.raises(ValueError):
        AwsParams(delta_J=0.1, overlap_eps=0.2)
    with pytest.raises(ValueError):
        AwsParams(n_initial=0)


def test_sweep_config_checks():
    assert SweepConfig(mode="mc", layers=2).relaxation == "mc2"
    assert SweepConfig().relaxation == "quadcon"
    for bad in (dict(mode="x"), dict(layers=0), dict(step=0.0), dict(step=1.5),
                dict(bounds=(0, 1, 2)), dict(bounds=(0, 1, 2, float("inf")))):
        with pytest.raises(ValueError):
            SweepConfig(**bad)


def test_workers_from_env(monkeypatch):
    monkeypatch.delenv("MOUC_WORKERS", raising=False)
    assert workers_from_env() == 1
    monkeypatch.setenv("MOUC_WORKERS", "3")
    assert workers_from_env() == 3
    monkeypatch.setenv("MOUC_WORKERS", "junk")
    assert workers_from_env(2) == 2


# ---------------------------------------------------------------- grids and geometry

def test_uniform_weights():
    w = uniform_weights(10)
    assert w[0] == 0.0 and w[1] == pytest.approx(1 / 9) and w[-1] == 1.0
    assert [round(v, 3) for v in w[:2]] == [0.0, 0.111]
    assert uniform_weights(2) == [0.0, 1.0]
    with pytest.raises(ValueError):
        uniform_weights(1)


@pytest.mark.parametrize("step, count", [(0.2, 6), (0.1, 11), (0.05, 21), (0.025, 41),
                                         (0.0125, 81), (1.0, 2)])
def test_epsilon_grid_sizes(step, count):
    grid = epsilon_grid(step)
    assert len(grid) == count
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)


def test_epsilon_grid_non_divisor_keeps_one():
    assert epsilon_grid(0.3) == [0.0, 0.3, 0.6, 0.9, 1.0]


def test_offsets_45_degrees():
    theta, d1, d2 = offsets((1.0, 3.0), (3.0, 1.0), 0.1)
    assert theta == pytest.approx(math.pi / 4)
    assert d1 == pytest.approx(0.070711, abs=1e-6) and d2 == pytest.approx(0.070711, abs=1e-6)


def test_offsets_vertical_segment():
    theta, d1, d2 = offsets((0.5, 1.0), (0.5, 0.0), 0.1)
    assert theta == math.pi / 2 and d2 == 0.1
    assert abs(d1) < 1e-17


@pytest.mark.parametrize("length, l_avg, C, n", [(1.0, 1.0, 1.0, 1), (2.0, 1.0, 1.5, 3),
                                                 (0.2, 1.0, 1.5, 0), (1.0, 1.0, 1.5, 2),
                                                 (1.0, 0.0, 1.5, 0)])
def test_refinement_count(length, l_avg, C, n):
    assert refinement_count(length, l_avg, C) == n


# ---------------------------------------------------------------- anchors

def test_utopia_nadir_shared_minimizer_is_degenerate():
    inst = Instance(thermal=(thermal(0, 2, 10, a=1.0, b=1.0, c=1.0, s=3.0, beta=0.5,
                                     gamma=0.1),), hydro=(), demand=(5.0,))
    a = utopia_nadir(build_model(inst))
    assert a.utopia == pytest.approx(a.nadir, rel=1e-9)
    assert a.degenerate == (True, True)
    assert np.all(a.scales == 1.0)


@pytest.mark.parametrize("seed", [0, 2, 5])
def test_utopia_nadir_matches_enumeration(seed):
    inst = random_tiny(seed, I=2, T=3)
    a = utopia_nadir(build_model(inst))
    o = Oracle(inst)
    cost_min, co2_min = o.solve((1.0, 0.0)), o.solve((0.0, 1.0))
    assert a.utopia[0] == pytest.approx(cost_min.value, rel=1e-6)
    assert a.utopia[1] == pytest.approx(co2_min.value, rel=1e-6, abs=1e-9)
    # nadir from the lexicographic anchors, second stage under the same cap slack
    def lex_cap(v):
        return v + moo.ANCHOR_SLACK * max(1.0, abs(v))

    f2_at_cost = o.solve((0.0, 1.0), cap=(0, lex_cap(cost_min.value)), slack=False).value
    f1_at_co2 = o.solve((1.0, 0.0), cap=(1, lex_cap(co2_min.value)), slack=False).value
    assert a.nadir[1] == pytest.approx(f2_at_cost, rel=1e-5)
    assert a.nadir[0] == pytest.approx(f1_at_co2, rel=1e-5)
    assert a.nadir_is_estimate


def test_anchors_bracket_the_front():
    a = utopia_nadir(build_model(curved_three_unit()))
    cost_pt, co2_pt = a.points
    assert cost_pt.f[0] < co2_pt.f[0] and cost_pt.f[1] > co2_pt.f[1]
    assert a.degenerate == (False, False)


def test_infeasible_model_raises():
    inst = Instance(thermal=(thermal(0, 0, 10, a=1.0, b=1.0),), hydro=(), demand=(50.0,))
    with pytest.raises(InfeasibleModelError):
        utopia_nadir(build_model(inst))


def test_anchors_from_bounds():
    a = moo.anchors_from_bounds((1, 3, 2, 2))
    assert a.utopia == (1.0, 2.0) and a.nadir == (3.0, 2.0)
    assert a.degenerate == (False, True) and not a.nadir_is_estimate


# ---------------------------------------------------------------- sweeps

def test_uniform_two_pairs_gives_extremes():
    m = build_model(curved_three_unit())
    front = uniform_sweep(m, 2)
    a = utopia_nadir(m)
    assert len(front) == 2
    assert front.points[0].f == pytest.approx(a.points[0].f)
    assert front.points[1].f == pytest.approx(a.points[1].f)
    assert front.status == "Completed"


@pytest.mark.parametrize("seed", [1, 8])
def test_uniform_points_are_pareto_optimal(seed):
    inst = random_tiny(seed, I=2, T=3)
    front = uniform_sweep(build_model(inst), 5)
    o = Oracle(inst)
    assert len(front) >= 1
    for p in front:
        assert _pareto_certified(o, p.f)


@pytest.mark.parametrize("seed", [1, 8])
def test_epsilon_points_are_pareto_optimal(seed):
    inst = random_tiny(seed, I=2, T=3)
    front = epsilon_sweep(build_model(inst), 2, SweepConfig(step=0.25))
    o = Oracle(inst)
    for p in front:
        assert _pareto_certified(o, p.f)


@pytest.mark.parametrize("mode, layers", [("quadcon", 1), ("mc", 1), ("mc", 2)])
def test_epsilon_sweep_grid_and_monotone(mode, layers):
    m = build_model(curved_three_unit())
    cfg = SweepConfig(mode=mode, layers=layers, step=0.2)
    front = epsilon_sweep(m, 2, cfg)
    assert completed_subproblems(front) == 6
    entries = [e for e in front.log if "parameter" in e]
    assert [e["parameter"] for e in entries] == epsilon_grid(0.2)
    vals = sorted((p.parameter, p.f[0]) for p in front)
    f1 = [v for _, v in vals]
    assert all(b <= a + 1e-6 * max(1.0, abs(a)) for a, b in zip(f1, f1[1:]))


def test_epsilon_one_matches_free_minimizer():
    m = build_model(curved_three_unit())
    a = utopia_nadir(m)
    front = epsilon_sweep(m, 2, SweepConfig(step=0.5))
    loosest = [p for p in front if p.parameter == 1.0][0]
    assert loosest.f[0] == pytest.approx(a.points[0].f[0], rel=1e-6)


def test_aws_curved_fixture():
    m = build_model(curved_three_unit())
    front = aws(m, AwsParams(), SweepConfig())
    assert front.status == "Converged"
    assert max(moo.final_segment_lengths(front)) < 0.1
    pts = front.points
    for p in pts:
        assert not any(dominates(q, p) for q in pts)
    assert len(moo.refinement_sequence(front)) >= 1


def test_run_budgeted_caps():
    m = build_model(curved_three_unit())
    for method in moo.METHODS:
        capped = run_budgeted(m, method, SweepConfig(time_cap_ms=0.0))
        assert len(capped) == 0 and capped.status == "TimeCapReached"
    free = run_budgeted(m, "eps2", SweepConfig(step=0.5))
    inf = run_budgeted(m, "eps2", SweepConfig(step=0.5, time_cap_ms=float("inf")))
    assert [p.f for p in free] == [p.f for p in inf]
    with pytest.raises(ValueError):
        run_budgeted(m, "bogus")


def test_workers_do_not_change_the_front():
    m = build_model(curved_three_unit())
    one = epsilon_sweep(m, 1, SweepConfig(step=0.25, workers=1))
    many = epsilon_sweep(m, 1, SweepConfig(step=0.25, workers=3))
    assert [p.f for p in one] == [p.f for p in many]


def test_fixed_bounds_skip_anchor_solves():
    m = build_model(curved_three_unit())
    a = utopia_nadir(m)
    bounds = (a.utopia[0], a.nadir[0], a.utopia[1], a.nadir[1])
    front = epsilon_sweep(m, 2, SweepConfig(step=0.5, bounds=bounds))
    assert not any("stage" in e for e in front.log)
    assert front.utopia == a.utopia


def test_single_point_model_front():
    front = uniform_sweep(build_model(single_unit_t1()), 3)
    assert len(front) == 1
    assert front.points[0].f[0] == pytest.approx(34.0, rel=1e-7)

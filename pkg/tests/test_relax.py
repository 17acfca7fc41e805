from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mouc import relax
from mouc.model import QuadraticObjective, build_model
from mouc.relax import (
    INDEPENDENT,
    SHARED,
    FactorizationError,
    big_m,
    epsilon_rhs,
    lift_aws_caps,
    lift_epsilon,
    lift_point,
    partition_bounds,
    regularize_and_factor,
    square_envelope,
)

from builders import random_tiny, sample_feasible, single_unit_t1, thermal
from oracle import Oracle


def _obj(Q, lin=None):
    Q = sp.csr_matrix(np.atleast_2d(np.asarray(Q, dtype=float)))
    n = Q.shape[0]
    return QuadraticObjective(Q, np.zeros(n) if lin is None else np.asarray(lin, float), 0.0)


def lifted_violation(lp, z):
    """Largest violation of rows and bounds of a lifted problem at ``z``."""
    rows = lp.A_lift @ z - lp.b_lift
    return max(float(rows.max(initial=0.0)), float(np.max(lp.lower - z, initial=0.0)),
               float(np.max(z - lp.upper, initial=0.0)))


def _n4_model():
    from mouc.instance import HydroUnit, Instance
    h = HydroUnit(id=1, volume_to_power=1.0, min_flood=0.0, max_flood=4.0)
    inst = Instance(thermal=(thermal(0, 1, 10, a=1.0, b=1.0, beta=0.5, gamma=0.1),),
                    hydro=(h,), demand=(5.0,))
    m = build_model(inst)
    assert m.n == 4
    return m


def _factors(m):
    lay = m.layout
    return (regularize_and_factor(m.f1, lay.lower, lay.upper),
            regularize_and_factor(m.f2, lay.lower, lay.upper))


# ---------------------------------------------------------------- factorization

def test_factor_diagonal_example():
    fac = regularize_and_factor(_obj(np.diag([4.0, 0.0])), np.zeros(2), np.ones(2))
    assert fac.epsilon_reg == pytest.approx(0.04, rel=1e-15)
    assert np.allclose(fac.L.toarray(), np.diag([np.sqrt(4.04), np.sqrt(0.04)]), rtol=1e-15)


def test_factor_scalar_bounds():
    fac = regularize_and_factor(_obj([[1.0]]), [0.0], [2.0])
    r = np.sqrt(1.0 + fac.epsilon_reg)
    assert fac.epsilon_reg == pytest.approx(0.01)
    assert fac.y_lower[0] == 0.0
    assert fac.y_upper[0] == pytest.approx(2 * r, rel=1e-15)
    assert fac.image([1.5])[0] == pytest.approx(1.5 * r, rel=1e-15)


def test_factor_zero_matrix_floor():
    fac = regularize_and_factor(_obj(np.zeros((3, 3))), np.zeros(3), np.ones(3))
    assert fac.epsilon_reg == 1e-8
    assert np.allclose(fac.L.toarray(), np.sqrt(1e-8) * np.eye(3), rtol=1e-15)


@pytest.mark.parametrize("Q", [
    [[2.0, 1.0], [1.0, 2.0]],
    [[4.0, -2.0, 0.0], [-2.0, 3.0, 1.0], [0.0, 1.0, 5.0]],
    [[1.0, 1.0], [1.0, 1.0]],          # singular, fixed by the regularization
])
def test_factor_dense_reconstructs(Q):
    Q = np.array(Q)
    fac = regularize_and_factor(_obj(Q), -np.ones(len(Q)), np.ones(len(Q)))
    L = fac.L.toarray()
    assert np.allclose(L, np.tril(L))
    target = Q + fac.epsilon_reg * np.eye(len(Q))
    assert np.linalg.norm(L @ L.T - target) <= 1e-10 * np.linalg.norm(target)
    assert fac.epsilon_reg == pytest.approx(0.01 * np.abs(Q[Q != 0]).mean())


@pytest.mark.parametrize("Q", [[[1.0, 0.0], [0.0, -5.0]], [[1.0, 3.0], [3.0, 1.0]]])
def test_factor_rejects_indefinite(Q):
    with pytest.raises(FactorizationError):
        regularize_and_factor(_obj(Q), np.zeros(2), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_interval_image_contains_samples(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    lo = rng.uniform(-3, 0, 3)
    hi = lo + rng.uniform(0, 4, 3)
    fac = regularize_and_factor(_obj(B @ B.T), lo, hi)
    xs = rng.uniform(lo, hi, size=(200, 3))
    ys = xs @ fac.L.toarray()
    assert np.all(ys >= fac.y_lower - 1e-12) and np.all(ys <= fac.y_upper + 1e-12)
    assert np.all(fac.y_lower <= fac.y_upper)


def test_regularization_gap_bound():
    fac = regularize_and_factor(_obj(np.diag([2.0, 2.0])), [-3.0, 0.0], [1.0, 2.0])
    assert fac.regularization_gap() == pytest.approx(0.02 * (9 + 4))


# ---------------------------------------------------------------- envelopes

def test_envelope_single_partition_rows():
    (env,) = square_envelope(0.0, 2.0, 1)
    assert env.rows == ((0.0, -1.0, 0.0), (4.0, -1.0, 4.0), (-2.0, 1.0, -0.0))
    assert env.big_m == 0.0
    assert env.bounds_on_w(1.0) == (0.0, 2.0)
    assert env.bounds_on_w(2.0) == (4.0, 4.0)


def test_envelope_partitions():
    envs = square_envelope(0.0, 2.0, 2)
    assert [(e.lower, e.upper) for e in envs] == [(0.0, 1.0), (1.0, 2.0)]
    assert all(e.big_m == 4.0 for e in envs)
    assert partition_bounds(-1.0, 2.0, 3) == [(-1.0, 0.0), (0.0, 1.0), (1.0, 2.0)]


def test_envelope_errors():
    with pytest.raises(ValueError):
        square_envelope(1.0, 0.0, 1)
    with pytest.raises(ValueError):
        partition_bounds(0.0, 1.0, 0)


@pytest.mark.parametrize("yL, yU, M", [(0.0, 2.0, 4.0), (1.0, 1.0, 0.0), (-3.0, 1.0, 16.0)])
def test_big_m(yL, yU, M):
    assert big_m(yL, yU) == M


def test_big_m_rejects_empty():
    with pytest.raises(ValueError):
        big_m(2.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(yL=st.floats(-10, 10), width=st.floats(0, 20), N=st.integers(1, 6),
       frac=st.floats(0, 1))
def test_envelope_contains_square_and_big_m_deactivates(yL, width, N, frac):
    yU = min(yL + width, 10.0)
    envs = square_envelope(yL, yU, N)
    y = yL + frac * (yU - yL)
    w = y * y
    own = min(int(frac * N), N - 1)
    for env in envs:
        slack = max(cy * y + cw * w - r for cy, cw, r in env.rows)
        if env.partition == own:
            assert slack <= 1e-9 * max(1.0, w)
        # with the selector off the row only needs to hold up to M
        assert slack <= big_m(yL, yU) + 1e-9 * max(1.0, w)


def check_endpoint_exactness(yL, yU, N):
    worst = 0.0
    for env in square_envelope(yL, yU, N):
        (c1, w1, r1), (c2, w2, r2), (c3, w3, r3) = env.rows
        a, b = env.lower, env.upper
        # tangent at the lower end and the secant meet y^2 at a
        worst = max(worst, abs((c1 * a - r1) / -w1 - a * a), abs((r3 - c3 * a) / w3 - a * a))
        # tangent at the upper end and the secant meet y^2 at b
        worst = max(worst, abs((c2 * b - r2) / -w2 - b * b), abs((r3 - c3 * b) / w3 - b * b))
    return worst


@settings(max_examples=200, deadline=None)
@given(yL=st.floats(-10, 10), width=st.floats(0, 20), N=st.integers(1, 8))
def test_endpoint_exactness(yL, width, N):
    assert check_endpoint_exactness(yL, min(yL + width, 10.0), N) <= 1e-12


# ---------------------------------------------------------------- liftings

def test_lift_counts_n4():
    m = _n4_model()
    f1, f2 = _factors(m)
    assert lift_aws_caps(m, f1, f2, 100.0, 100.0, N=1).n_lifted == 20
    assert lift_aws_caps(m, f1, f2, 100.0, 100.0, N=2, sharing=SHARED).n_lifted == 28
    assert lift_aws_caps(m, f1, f2, 100.0, 100.0, N=2, sharing=INDEPENDENT).n_lifted == 36
    assert lift_epsilon(m, f2, 0.0, 10.0, 0.5, N=1).n_lifted == 12
    assert lift_epsilon(m, f2, 0.0, 10.0, 0.5, N=3).n_lifted == 24


@pytest.mark.parametrize("N, sharing, k", [(1, INDEPENDENT, 2), (2, INDEPENDENT, 2),
                                           (3, SHARED, 2), (2, INDEPENDENT, 1)])
def test_lift_layout_formula_and_binaries(N, sharing, k):
    m = build_model(random_tiny(3))
    f1, f2 = _factors(m)
    if k == 2:
        lp = lift_aws_caps(m, f1, f2, 1e4, 1e4, N=N, sharing=sharing)
    else:
        lp = lift_epsilon(m, f1, 0.0, 1e4, 1.0, N=N)
    s = 0 if N == 1 else (1 if sharing == SHARED or k == 1 else 2)
    n = m.n
    assert lp.n_lifted == n * (1 + 2 * k) + n * N * s
    assert lp.A_lift.shape == (len(lp.b_lift), lp.n_lifted)
    assert lp.binary_mask.sum() == m.layout.binary_mask.sum() + n * N * s
    assert len(set(lp.names)) == lp.n_lifted
    assert len(lp.row_tags) == len(lp.b_lift)
    assert lp.row_tags.count("cap1") == 1


def test_epsilon_rhs():
    assert epsilon_rhs(2.0, 10.0, 0.0) == 2.0
    assert epsilon_rhs(2.0, 10.0, 1.0) == 10.0
    assert epsilon_rhs(2.0, 10.0, 0.25) == 4.0
    with pytest.raises(ValueError):
        epsilon_rhs(3.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        epsilon_rhs(0.0, 1.0, 1.5)


def test_epsilon_cap_row_rhs():
    m = build_model(single_unit_t1())
    fac = _factors(m)[0]
    lo = lift_epsilon(m, fac, 30.0, 50.0, 0.0)
    hi = lift_epsilon(m, fac, 30.0, 50.0, 1.0)
    r = lo.row_tags.index("cap1")
    shift = fac.constant + fac.epsilon_reg * float(fac.x_lower @ fac.x_upper)
    assert lo.b_lift[r] == pytest.approx(30.0 - shift)
    assert hi.b_lift[r] == pytest.approx(50.0 - shift)
    assert lo.caps == (30.0,) and hi.caps == (50.0,)


def test_lift_rejects_bad_arguments():
    m = build_model(single_unit_t1())
    f1, f2 = _factors(m)
    with pytest.raises(ValueError):
        lift_aws_caps(m, f1, f2, 1.0, 1.0, N=0)
    with pytest.raises(ValueError):
        lift_aws_caps(m, f1, f2, 1.0, 1.0, N=2, sharing="bogus")


def lift_soundness(inst, samples, layers=(1, 2, 3), seed=0):
    """Worst violation of canonical lifts of sampled feasible points, caps = f(x)."""
    m = build_model(inst)
    rng = np.random.default_rng(seed)
    patterns = list(Oracle(inst).patterns())
    f1, f2 = _factors(m)
    worst = 0.0
    for _ in range(samples):
        x = sample_feasible(m, rng, patterns)
        c1, c2 = m.objective_values(x)
        for N in layers:
            lps = (lift_aws_caps(m, f1, f2, c1, c2, N=N),
                   lift_epsilon(m, f2, c2, c2 + 1.0, 0.0, N=N),
                   lift_epsilon(m, f1, c1, c1 + 1.0, 0.0, N=N))
            for lp in lps:
                worst = max(worst, lifted_violation(lp, lift_point(lp, x)))
    return worst


@pytest.mark.parametrize("seed", [1, 4, 9])
def test_canonical_lift_is_feasible(seed):
    assert lift_soundness(random_tiny(seed), 30, seed=seed) <= 1e-8


def _shared_counterexample():
    """Two objectives with a coupled second factor: at g=6 the first image sits in
    the upper half of its range and the second in the lower half."""
    m = build_model(single_unit_t1())
    lay = m.layout
    g, z = lay.g_index(0, 0), lay.z_index(0, 0)
    Q2 = np.zeros((3, 3))
    Q2[g, g], Q2[g, z], Q2[z, g], Q2[z, z] = 1.0, -5.0, -5.0, 30.0
    m = replace(m, f2=QuadraticObjective(sp.csr_matrix(Q2), np.zeros(3), 0.0))
    x = np.zeros(3)
    x[g], x[lay.y_index(0, 0)], x[z] = 6.0, 1.0, 1.0
    return m, x


def test_shared_selector_can_cut_feasible_points():
    m, x = _shared_counterexample()
    f1, f2 = _factors(m)
    c1, c2 = m.objective_values(x)
    pos = [(fac.image(x)[0] - fac.y_lower[0]) / (fac.y_upper[0] - fac.y_lower[0])
           for fac in (f1, f2)]
    assert pos[0] > 0.5 > pos[1]
    ind = lift_aws_caps(m, f1, f2, c1, c2, N=2, sharing=INDEPENDENT)
    shared = lift_aws_caps(m, f1, f2, c1, c2, N=2, sharing=SHARED)
    assert lifted_violation(ind, lift_point(ind, x)) <= 1e-9
    # the shared selector follows objective 1 and cannot serve objective 2
    best_shared = min(
        lifted_violation(shared, _with_selector(shared, lift_point(shared, x), p))
        for p in range(2))
    assert best_shared > 1e-3


def _with_selector(lp, z, p):
    """Set the shared selector of coordinate 0 to partition ``p``."""
    z = z.copy()
    lay = lp.layout_lift
    for q in range(lp.layers):
        z[lay.q_index(0, q, 0)] = 1.0 if q == p else 0.0
    return z


def test_lift_point_selectors_one_hot():
    m = build_model(random_tiny(2))
    f1, f2 = _factors(m)
    lp = lift_aws_caps(m, f1, f2, 1e5, 1e5, N=3)
    rng = np.random.default_rng(0)
    x = sample_feasible(m, rng, list(Oracle(m.instance).patterns()))
    z = lift_point(lp, x)
    lay = lp.layout_lift
    for blk in range(lay.selector_blocks):
        block = z[lay.q_offset(blk):lay.q_offset(blk) + lay.n * lay.layers].reshape(3, lay.n)
        assert np.all(block.sum(axis=0) == 1.0)


def test_extend_pads_objective():
    m = build_model(single_unit_t1())
    f1, f2 = _factors(m)
    lp = lift_aws_caps(m, f1, f2, 100, 100, N=2)
    ext = lp.extend(m.f1)
    assert ext.n == lp.n_lifted
    z = lift_point(lp, np.array([5.0, 1.0, 1.0]))
    assert ext.value(z) == m.f1.value(np.array([5.0, 1.0, 1.0]))


def test_membership_rows_only_with_selectors():
    m = build_model(random_tiny(2))
    f1, f2 = _factors(m)
    one = lift_aws_caps(m, f1, f2, 1e5, 1e5, N=1)
    two = lift_aws_caps(m, f1, f2, 1e5, 1e5, N=2)
    assert not any(t.startswith("membership") for t in one.row_tags)
    assert two.row_tags.count("membership1") == 2 * m.n
    assert two.row_tags.count("membership2") == 2 * m.n


def test_module_constants():
    assert relax.REG_FRACTION == 0.01 and relax.REG_FLOOR == 1e-8

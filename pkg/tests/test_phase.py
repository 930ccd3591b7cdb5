import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toruslab.errors import InvalidValue, LayoutMismatch
from toruslab.phase import (
    CoordinateLayout,
    MixedPoint,
    ModularDomain,
    in_modular_domain,
    subdomain_of,
    torus_distance,
    torus_distance_batch,
    wrap_angle,
    wrap_angles,
)

# a little cylinder R x T^1 and a plane R^2 used throughout
CYL = CoordinateLayout(labels=("r", "theta"), angle_slots=frozenset({1}))
PLANE = CoordinateLayout(labels=("a", "b"), angle_slots=frozenset())


def test_wrap_angle_oracle_values():
    # hand-picked representatives, wrapped target interval is (-pi, pi]
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-3 * math.pi / 2) == pytest.approx(math.pi / 2)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    # -pi maps to the +pi endpoint, the interval is half-open
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-15)


def test_wrap_angle_range_and_idempotence_bulk():
    rng = np.random.default_rng(7)
    thetas = rng.uniform(-100.0, 100.0, size=10_000)
    wrapped = np.array([wrap_angle(t) for t in thetas])
    assert np.all(wrapped > -math.pi)
    assert np.all(wrapped <= math.pi)
    rewrapped = np.array([wrap_angle(t) for t in wrapped])
    np.testing.assert_allclose(rewrapped, wrapped, rtol=0, atol=0)
    # wrapped value represents the same angle
    np.testing.assert_allclose(np.exp(1j * wrapped), np.exp(1j * thetas),
                               atol=1e-12)


@given(st.floats(-1e6, 1e6))
def test_wrap_angle_idempotent(theta):
    once = wrap_angle(theta)
    assert wrap_angle(once) == once


def test_wrap_angle_rejects_non_finite():
    with pytest.raises(InvalidValue):
        wrap_angle(math.inf)
    with pytest.raises(InvalidValue):
        wrap_angle(math.nan)


def test_wrap_angles_touches_only_masked_slots():
    vals = np.array([7.0, 3 * math.pi])
    out = wrap_angles(vals, CYL.angle_mask)
    assert out[0] == 7.0
    assert out[1] == pytest.approx(math.pi)


def test_mixed_point_wraps_on_construction():
    p = MixedPoint.of(CYL, [2.5, 5 * math.pi / 2])
    assert p[0] == 2.5
    assert p[1] == pytest.approx(math.pi / 2)


def test_mixed_point_validates():
    with pytest.raises(InvalidValue):
        MixedPoint.of(CYL, [1.0])
    with pytest.raises(InvalidValue):
        MixedPoint.of(CYL, [np.nan, 0.0])


def test_layout_validates():
    with pytest.raises(InvalidValue):
        CoordinateLayout(labels=("a", "a"), angle_slots=frozenset())
    with pytest.raises(InvalidValue):
        CoordinateLayout(labels=("a",), angle_slots=frozenset({3}))


def test_torus_distance_oracle_values():
    # pure real part
    a = MixedPoint.of(PLANE, [0.0, 0.0])
    b = MixedPoint.of(PLANE, [3.0, 4.0])
    assert torus_distance(a, b) == pytest.approx(5.0)
    # angular slot measures the short way around
    c = MixedPoint.of(CYL, [0.0, -math.pi + 0.1])
    d = MixedPoint.of(CYL, [0.0, math.pi - 0.1])
    assert torus_distance(c, d) == pytest.approx(0.2)
    # mixed: 3-4-5 again with a 3.0 arc (just under pi) as one leg
    e = MixedPoint.of(CYL, [4.0, 0.0])
    f = MixedPoint.of(CYL, [0.0, 3.0 - 2 * math.pi])
    assert torus_distance(e, f) == pytest.approx(5.0)


def test_torus_distance_layout_mismatch():
    with pytest.raises(LayoutMismatch):
        torus_distance(MixedPoint.of(CYL, [0, 0]), MixedPoint.of(PLANE, [0, 0]))


def test_torus_distance_metric_axioms_random():
    rng = np.random.default_rng(11)
    for _ in range(500):
        pts = [MixedPoint.of(CYL, rng.uniform(-8, 8, size=2))
               for _ in range(3)]
        a, b, c = pts
        dab = torus_distance(a, b)
        assert dab == torus_distance(b, a)
        assert torus_distance(a, a) == 0.0
        assert dab <= torus_distance(a, c) + torus_distance(c, b) + 1e-12


@given(st.floats(-30, 30), st.floats(-30, 30), st.integers(-4, 4))
def test_torus_distance_invariant_under_full_turns(t1, t2, k):
    a = MixedPoint.of(CYL, [0.0, t1])
    b = MixedPoint.of(CYL, [0.0, t2])
    b_shift = MixedPoint.of(CYL, [0.0, t2 + 2 * math.pi * k])
    assert torus_distance(a, b) == pytest.approx(torus_distance(a, b_shift),
                                                 abs=1e-9)


def test_torus_distance_batch_matches_scalar():
    rng = np.random.default_rng(3)
    A = rng.uniform(-5, 5, size=(40, 2))
    B = rng.uniform(-5, 5, size=(40, 2))
    batch = torus_distance_batch(CYL, A, B)
    for i in range(40):
        d = torus_distance(MixedPoint.of(CYL, A[i]), MixedPoint.of(CYL, B[i]))
        assert batch[i] == pytest.approx(d)


def test_modular_domain_membership_real_and_angular():
    dom = ModularDomain(intervals=((-1.0, 1.0), (-0.5, 0.5)))
    assert in_modular_domain(MixedPoint.of(CYL, [0.0, 0.2]), dom)
    assert not in_modular_domain(MixedPoint.of(CYL, [1.5, 0.0]), dom)
    assert not in_modular_domain(MixedPoint.of(CYL, [0.0, 0.7]), dom)
    # open at the boundary
    assert not in_modular_domain(MixedPoint.of(CYL, [1.0, 0.0]), dom)


def test_modular_domain_angular_slots_mod_2pi():
    dom = ModularDomain(intervals=(None, (-0.5, 0.5)))
    for k in range(-3, 4):
        p = MixedPoint.of(CYL, [123.0, 0.3 + 2 * math.pi * k])
        assert in_modular_domain(p, dom)
        q = MixedPoint.of(CYL, [123.0, 0.6 + 2 * math.pi * k])
        assert not in_modular_domain(q, dom)


def test_modular_domain_interval_straddling_pi():
    # (pi - 0.2, pi + 0.2) wraps across the seam
    dom = ModularDomain(intervals=(None, (math.pi - 0.2, math.pi + 0.2)))
    assert in_modular_domain(MixedPoint.of(CYL, [0, math.pi - 0.1]), dom)
    assert in_modular_domain(MixedPoint.of(CYL, [0, -math.pi + 0.1]), dom)
    assert not in_modular_domain(MixedPoint.of(CYL, [0, 0.0]), dom)


def test_modular_domain_validation():
    with pytest.raises(InvalidValue):
        ModularDomain(intervals=((2.0, 1.0),))
    wide = ModularDomain(intervals=(None, (0.0, 7.0)))
    with pytest.raises(InvalidValue):
        in_modular_domain(MixedPoint.of(CYL, [0, 0]), wide)
    short = ModularDomain(intervals=((0.0, 1.0),))
    with pytest.raises(LayoutMismatch):
        in_modular_domain(MixedPoint.of(CYL, [0, 0]), short)


def test_subdomain_of():
    outer = ModularDomain(intervals=((-2.0, 2.0), (-1.0, 1.0)))
    inner = ModularDomain(intervals=((-1.0, 1.0), (-0.5, 0.5)))
    assert subdomain_of(inner, outer, CYL)
    assert not subdomain_of(outer, inner, CYL)
    # unconstrained angular slot is the full circle
    free = ModularDomain(intervals=((-1.0, 1.0), None))
    assert not subdomain_of(free, outer, CYL)
    circle = ModularDomain(intervals=((-3.0, 3.0), None))
    assert subdomain_of(free, circle, CYL)

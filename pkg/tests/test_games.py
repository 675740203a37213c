import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popgame.core import PopulationStructure, tangent_projection
from popgame.games import (
    AffineDelay,
    Box,
    BprDelay,
    CallableDelay,
    GenericGame,
    LinearGame,
    MixedAutonomyGame,
    RoadSplitGame,
    finite_difference_jacobian,
    generic_game,
    mixed_autonomy_cone_envelope,
    mixed_autonomy_jacobian,
    mixed_autonomy_payoff,
    road_split_box_envelope,
    road_split_payoff,
)


def two_link(mu=0.5, delays=None):
    delays = delays or [AffineDelay(1.0, 1.0), AffineDelay(1.0, 1.0)]
    return MixedAutonomyGame(np.eye(2), delays, mu, [2], [1.0], [1.0])


def random_network(rng):
    """Two OD pairs over five links with random route incidence and BPR/affine delays."""
    while True:
        R = (rng.random((5, 5)) < 0.4).astype(float)
        if np.all(R.sum(axis=1) > 0):
            break
    delays = [AffineDelay(rng.uniform(0.5, 2), rng.uniform(0.5, 2)) if k % 2
              else BprDelay(rng.uniform(0.5, 2), 0.15, rng.uniform(0.5, 2)) for k in range(5)]
    return MixedAutonomyGame(R, delays, rng.uniform(0.1, 0.9), [2, 3], [0.7, 1.2], [1.0, 0.4])


# ------------------------------------------------------------------ delays

def test_affine_delay_closed_forms():
    phi = AffineDelay(2.0, 1.0)
    assert phi(1.5) == pytest.approx(4.0)
    assert phi.derivative(3.0) == pytest.approx(2.0)
    assert phi.antiderivative(2.0) == pytest.approx(2.0 ** 2 + 2.0)
    assert phi.inverse(4.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        phi.inverse(0.5)
    with pytest.raises(ValueError):
        AffineDelay(0.0, 1.0)


def test_bpr_delay_closed_forms_against_numerics():
    phi = BprDelay(1.2, 0.15, 0.8)
    generic = CallableDelay(lambda z: 1.2 * (1 + 0.15 * (z / 0.8) ** 4))
    for z in [0.0, 0.3, 1.1, 2.5]:
        assert phi.derivative(z) == pytest.approx(float(generic.derivative(z)), rel=1e-6, abs=1e-9)
        assert phi.antiderivative(z) == pytest.approx(generic.antiderivative(z), abs=1e-9)
    for q in [1.2, 1.5, 4.0, 30.0]:
        z = phi.inverse(q)
        assert abs(phi(z) - q) <= 1e-10 * max(1.0, q)
        assert generic.inverse(q) == pytest.approx(z, abs=1e-9)


def test_callable_delay_bisection_inverse():
    phi = CallableDelay(lambda z: np.exp(z))
    assert phi.alpha == pytest.approx(1.0)
    for q in [1.0, 2.0, 50.0]:
        assert abs(float(phi(phi.inverse(q))) - q) <= 1e-10 * q


# ---------------------------------------------------------- mixed autonomy

def test_mixed_autonomy_payoff_examples():
    g = two_link()
    np.testing.assert_allclose(mixed_autonomy_payoff(g, [1, 0, 0, 1]), [-1.5, -2, -1.5, -2])
    np.testing.assert_allclose(g.link_loads(np.array([1, 0, 0, 1.0])), [0.5, 1.0])
    np.testing.assert_allclose(mixed_autonomy_payoff(g, [0, 1, 1, 0]), [-2, -1.5, -2, -1.5])
    np.testing.assert_allclose(mixed_autonomy_payoff(g, np.zeros(4)), [-1, -1, -1, -1])


def test_mixed_autonomy_jacobian_example():
    g = two_link()
    expected = -np.array([[0.5, 0, 1, 0], [0, 0.5, 0, 1], [0.5, 0, 1, 0], [0, 0.5, 0, 1]])
    np.testing.assert_allclose(mixed_autonomy_jacobian(g, g.structure.uniform_state()), expected)


def test_mixed_autonomy_cone_generators_example():
    g = two_link()
    B1, B2 = mixed_autonomy_cone_envelope(g).generators
    expected = np.zeros((4, 4))
    expected[[0, 2], 0] = -0.5
    expected[[0, 2], 2] = -1.0
    np.testing.assert_array_equal(B1, expected)
    single = MixedAutonomyGame([[1]], [AffineDelay(1, 1)], 0.3, [1], [1.0], [1.0])
    np.testing.assert_allclose(single.cone_generators()[0], -np.array([[0.3, 1], [0.3, 1]]))


@pytest.mark.parametrize("R, delays, mu, routes, msg", [
    ([[1, 2]], [AffineDelay(), AffineDelay()], 0.5, [1], "0 or 1"),
    ([[0, 0], [1, 0]], [AffineDelay(), AffineDelay()], 0.5, [2], "at least one link"),
    (np.eye(2), [AffineDelay(), AffineDelay()], 1.0, [2], "mu"),
    (np.eye(2), [AffineDelay()], 0.5, [2], "delay functions"),
    (np.eye(2), [AffineDelay(), AffineDelay()], 0.5, [3], "route counts"),
    (np.eye(2), [AffineDelay(), CallableDelay(lambda z: 2 - z)], 0.5, [2], "increasing"),
])
def test_mixed_autonomy_validation(R, delays, mu, routes, msg):
    with pytest.raises(ValueError, match=msg):
        MixedAutonomyGame(R, delays, mu, routes, [1.0], [1.0])


def test_mixed_autonomy_dimension_mismatch():
    with pytest.raises(ValueError):
        two_link().payoff(np.ones(3))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_mixed_autonomy_properties_on_random_networks(seed):
    rng = np.random.default_rng(seed)
    g = random_network(rng)
    s = g.structure
    x = s.random_state(rng)
    p = g.payoff(x)
    # route payoffs are shared by autonomous and regular copies
    np.testing.assert_array_equal(p[: g.N], p[g.N:])
    assert np.all(p <= 0)
    J = g.jacobian(x)
    np.testing.assert_allclose(J, finite_difference_jacobian(g.payoff, x), rtol=1e-5, atol=1e-7)
    W = g.weight_matrix()
    WJ = W @ J
    assert np.abs(WJ - WJ.T).max() <= 1e-10
    P = tangent_projection(s)
    assert np.linalg.eigvalsh(P @ (WJ + WJ.T) @ P)[-1] <= 1e-10
    # the Jacobian lies in the cone with coefficients Phi'(z) >= 0
    slopes = g.link_slopes(g.link_loads(x))
    rebuilt = sum(c * B for c, B in zip(slopes, g.cone_generators()))
    np.testing.assert_allclose(rebuilt, J, atol=1e-12)
    G = np.array([B.ravel() for B in g.cone_generators()]).T
    coef, *_ = np.linalg.lstsq(G, J.ravel(), rcond=None)
    assert np.all(coef >= -1e-10)


def test_unweighted_contraction_fails_for_mixed_autonomy():
    g = two_link()
    x = g.structure.uniform_state()
    J = g.jacobian(x)
    a, b = 1.0, -0.75
    zeta = np.array([a, -a, b, -b])
    # each link contributes -Phi' (a + b)(mu a + b) to zeta^T J zeta, with Phi' = 1
    for B in g.cone_generators():
        assert zeta @ B @ zeta == pytest.approx(-(a + b) * (0.5 * a + b))
    assert zeta @ J @ zeta == pytest.approx(-2 * (a + b) * (0.5 * a + b))
    assert zeta @ (J + J.T) @ zeta == pytest.approx(0.25)
    W = g.weight_matrix()
    assert zeta @ (W @ J + J.T @ W) @ zeta <= 1e-12


# --------------------------------------------------------------- road split

def test_road_split_payoff_examples():
    g = RoadSplitGame()
    np.testing.assert_allclose(road_split_payoff(g, [0.5, 0, 0.5, 0]), [-0.5] * 4)
    F = g.payoff(np.array([0.5, 0, 0, 0.5]))
    assert F[0] == pytest.approx(-1.0)
    assert F[3] == pytest.approx(-1.85)
    with pytest.raises(ValueError):
        g.payoff(np.ones(3))


def test_road_split_payoff_by_hand_general_parameters():
    ct, cc, th = (1.3, 0.7), (0.4, 2.1), (1.5, 3.2)
    g = RoadSplitGame(ct, cc, th, (0.3, 0.7))
    xs1, xb1, xs2, xb2 = 0.1, 0.2, 0.45, 0.25
    F = g.payoff(np.array([xs1, xb1, xs2, xb2]))
    expected = -np.array([
        ct[0] * (xs1 + xb2) + cc[0] * xb1 * (xs1 + xb2),
        ct[1] * (xs2 + th[0] * xb1) + cc[1] * xb2 * (xs2 + xb1),
        ct[1] * (xs2 + xb1) + cc[1] * xb2 * (xs2 + xb1),
        ct[0] * (xs1 + th[1] * xb2) + cc[0] * xb1 * (xs1 + xb2),
    ])
    np.testing.assert_allclose(F, expected, rtol=1e-15)


@pytest.mark.parametrize("kwargs", [dict(ct=(0, 1)), dict(cc=(-1, 1)), dict(theta=(1.0, 2)),
                                    dict(mass=(0.5, 0.6))])
def test_road_split_validation(kwargs):
    with pytest.raises(ValueError):
        RoadSplitGame(**kwargs)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_road_split_box_reconstructs_jacobian(seed):
    rng = np.random.default_rng(seed)
    g = RoadSplitGame(tuple(rng.uniform(0.5, 2, 2)), tuple(rng.uniform(0.1, 2, 2)),
                      tuple(rng.uniform(1.1, 4, 2)), (0.4, 0.6))
    box = road_split_box_envelope(g)
    assert box.d == 4 and box.ranks == [1, 2, 1, 2]
    x = g.structure.random_state(rng)
    # box coefficients are the state coordinates
    np.testing.assert_allclose(box.member(x), g.jacobian(x), atol=1e-12)
    np.testing.assert_allclose(box.member(x), finite_difference_jacobian(g.payoff, x), atol=1e-5)


def test_road_split_box_corner_and_origin():
    g = RoadSplitGame()
    box = g.envelope()
    np.testing.assert_array_equal(box.member(np.zeros(4)), box.G0)
    m1, m2 = 0.5, 0.5
    (C1, D1), _, (C3, D3), _ = box.factors
    expected = box.G0 + m1 * C1 @ D1.T + m2 * C3 @ D3.T
    np.testing.assert_allclose(box.member([m1, 0, m2, 0]), expected)
    np.testing.assert_allclose(g.jacobian(np.array([m1, 0, m2, 0])), expected)
    assert len(box.corners().vertices) == 16


def test_road_split_without_crossing_cost_is_linear():
    g = RoadSplitGame(cc=(0.0, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        np.testing.assert_allclose(g.jacobian(g.structure.random_state(rng)), g.envelope().G0)


def test_box_rejects_bad_factor_shapes():
    with pytest.raises(ValueError):
        Box(np.zeros((3, 3)), ((np.ones((3, 1)), np.ones((3, 2))),))
    with pytest.raises(ValueError):
        Box(np.zeros((3, 3)), ((np.ones((2, 1)), np.ones((2, 1))),))
    with pytest.raises(ValueError):
        Box(np.zeros((2, 2)), ((np.ones(2), np.ones(2)),)).member([0.5, 0.5])


# ------------------------------------------------------------ generic games

def test_generic_game_finite_difference_fallback():
    s = PopulationStructure.single(3)
    g = generic_game(s, lambda x: -x)
    np.testing.assert_allclose(g.jacobian(s.uniform_state()), -np.eye(3), atol=1e-8)
    assert g.envelope() is None


def test_generic_game_constant_payoff():
    s = PopulationStructure.single(2)
    g = GenericGame(s, lambda x: np.array([1.0, 2.0]))
    np.testing.assert_allclose(g.jacobian(s.uniform_state()), 0, atol=1e-12)


def test_generic_game_antisymmetric_coupling():
    s = PopulationStructure.single(2)
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    g = LinearGame(s, A)
    np.testing.assert_array_equal(g.jacobian(s.uniform_state()), A)
    rng = np.random.default_rng(2)
    for _ in range(10):
        zeta = s.random_tangent(rng)
        assert zeta @ (A + A.T) @ zeta == 0.0


def test_generic_game_warns_on_wrong_jacobian():
    s = PopulationStructure.single(2)
    g = GenericGame(s, lambda x: x ** 2, lambda x: np.eye(2))
    with pytest.warns(RuntimeWarning):
        g.check_jacobian(np.array([0.8, 0.2]))
    good = GenericGame(s, lambda x: x ** 2, lambda x: np.diag(2 * x))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert good.check_jacobian(np.array([0.8, 0.2])) < 1e-8


def test_linear_game_dimension_check():
    with pytest.raises(ValueError):
        LinearGame(PopulationStructure.single(2), np.eye(3))

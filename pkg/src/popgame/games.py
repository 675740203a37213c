"""Memoryless payoff mechanisms and constant-matrix envelopes of their Jacobians."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import PopulationStructure
from .edm import adaptive_simpson


# ---------------------------------------------------------------- envelopes

@dataclass(frozen=True)
class ConvHull:
    vertices: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Cone:
    generators: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Box:
    """``{G0 + sum_i gamma_i C_i D_i^T : gamma in [0, 1]^d}``."""

    G0: np.ndarray
    factors: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        n = self.G0.shape[0]
        factors = []
        for C, D in self.factors:
            C = np.atleast_2d(np.asarray(C, dtype=float).T).T
            D = np.atleast_2d(np.asarray(D, dtype=float).T).T
            if C.shape != D.shape or C.shape[0] != n:
                raise ValueError(f"factor shapes {C.shape} and {D.shape} do not match n={n}")
            factors.append((C, D))
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def d(self) -> int:
        return len(self.factors)

    @property
    def ranks(self) -> list[int]:
        return [C.shape[1] for C, _ in self.factors]

    @property
    def C(self) -> np.ndarray:
        return np.hstack([C for C, _ in self.factors]) if self.factors else np.zeros((self.G0.shape[0], 0))

    @property
    def D(self) -> np.ndarray:
        return np.hstack([D for _, D in self.factors]) if self.factors else np.zeros((self.G0.shape[0], 0))

    def member(self, gamma: Sequence[float]) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.d,):
            raise ValueError(f"expected {self.d} box coefficients")
        J = np.array(self.G0, dtype=float)
        for g, (C, D) in zip(gamma, self.factors):
            J = J + g * (C @ D.T)
        return J

    def corners(self) -> ConvHull:
        return ConvHull(tuple(self.member(g) for g in itertools.product((0.0, 1.0), repeat=self.d)))


@dataclass(frozen=True)
class SumEnvelope:
    hull: ConvHull
    cone: Cone


JacobianEnvelope = Union[ConvHull, Cone, Box, SumEnvelope]


# ----------------------------------------------------------- delay functions

class DelayFunction:
    """Strictly increasing link delay with codomain ``[alpha, inf)`` on ``z >= 0``.

    Subclasses give closed forms; the base class supplies quadrature for
    the antiderivative and bracketed bisection for the inverse.
    """

    alpha: float

    def __call__(self, z):
        raise NotImplementedError

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        return (self(z + h) - self(z - h)) / (2 * h)

    def antiderivative(self, z) -> float:
        return adaptive_simpson(lambda s: float(self(s)), 0.0, float(z))

    def inverse(self, q: float) -> float:
        q = float(q)
        if q < self.alpha:
            raise ValueError(f"delay level {q} is below the free-flow delay {self.alpha}")
        hi = 1.0
        while self(hi) < q:
            hi *= 2.0
        lo = 0.0
        while hi - lo > 1e-12 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if self(mid) < q:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class AffineDelay(DelayFunction):
    """``a z + alpha`` with ``a > 0``."""

    a: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("affine delay slope must be positive")

    def __call__(self, z):
        return self.a * np.asarray(z, dtype=float) + self.alpha

    def derivative(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.a)

    def antiderivative(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * self.a * z * z + self.alpha * z

    def inverse(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < self.alpha):
            raise ValueError(f"delay level below the free-flow delay {self.alpha}")
        return (q - self.alpha) / self.a

    def to_json(self):
        return {"type": "affine", "a": self.a, "alpha": self.alpha}


@dataclass(frozen=True)
class BprDelay(DelayFunction):
    """``alpha (1 + beta (z / kappa)^4)``."""

    alpha: float = 1.0
    beta: float = 0.15
    kappa: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.kappa > 0):
            raise ValueError("BPR parameters must be positive")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * (1.0 + self.beta * (z / self.kappa) ** 4)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        return 4.0 * self.alpha * self.beta * z ** 3 / self.kappa ** 4

    def antiderivative(self, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * (z + self.beta * z ** 5 / (5.0 * self.kappa ** 4))

    def inverse(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < self.alpha):
            raise ValueError(f"delay level below the free-flow delay {self.alpha}")
        return self.kappa * ((q / self.alpha - 1.0) / self.beta) ** 0.25

    def to_json(self):
        return {"type": "bpr", "alpha": self.alpha, "beta": self.beta, "kappa": self.kappa}


class CallableDelay(DelayFunction):
    """Wrap a user delay map; derivative by central differences unless given."""

    def __init__(self, fn: Callable, derivative: Optional[Callable] = None):
        self._fn = fn
        self._dfn = derivative
        self.alpha = float(fn(np.asarray(0.0)))

    def __call__(self, z):
        return self._fn(np.asarray(z, dtype=float))

    def derivative(self, z):
        if self._dfn is not None:
            return self._dfn(np.asarray(z, dtype=float))
        return super().derivative(z)


# --------------------------------------------------------------------- games

def finite_difference_jacobian(F: Callable, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((F(x).size, n))
    for k in range(n):
        h = rel_step * max(1.0, abs(x[k]))
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (F(x + e) - F(x - e)) / (2 * h)
    return J


class PopulationGame:
    """Common interface: ``payoff``, ``jacobian`` and an optional ``envelope``."""

    structure: PopulationStructure

    def payoff(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        return finite_difference_jacobian(self.payoff, x)

    def envelope(self) -> Optional[JacobianEnvelope]:
        return None

    def contraction_weights(self) -> np.ndarray:
        """Population weights under which the game is known to be weighted-contractive."""
        return np.ones(self.structure.rho)


class GenericGame(PopulationGame):
    """A user-supplied payoff map ``F`` with optional analytic Jacobian and envelope."""

    def __init__(self, structure: PopulationStructure, payoff: Callable,
                 jacobian: Optional[Callable] = None, envelope: Optional[JacobianEnvelope] = None,
                 weights: Optional[Sequence[float]] = None, mismatch_tol: float = 1e-3):
        self.structure = structure
        self._F = payoff
        self._J = jacobian
        self._envelope = envelope
        self._weights = None if weights is None else np.asarray(weights, dtype=float)
        self.mismatch_tol = mismatch_tol

    def payoff(self, x):
        return np.asarray(self._F(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        if self._J is None:
            return finite_difference_jacobian(self.payoff, x)
        return np.asarray(self._J(np.asarray(x, dtype=float)), dtype=float)

    def check_jacobian(self, x) -> float:
        """Relative mismatch between analytic and finite-difference Jacobians; warns above tolerance."""
        fd = finite_difference_jacobian(self.payoff, x)
        err = float(np.abs(self.jacobian(x) - fd).max() / max(1.0, np.abs(fd).max()))
        if err > self.mismatch_tol:
            warnings.warn(f"Jacobian differs from finite differences by {err:.2e}", RuntimeWarning)
        return err

    def envelope(self):
        return self._envelope

    def contraction_weights(self):
        return np.ones(self.structure.rho) if self._weights is None else self._weights


def generic_game(structure, payoff, jacobian=None, **kwargs) -> GenericGame:
    return GenericGame(structure, payoff, jacobian, **kwargs)


class LinearGame(GenericGame):
    """``F(x) = A x + b``; its Jacobian ``A`` is its own (one-vertex) envelope."""

    def __init__(self, structure: PopulationStructure, A, b=None):
        A = np.asarray(A, dtype=float)
        b = np.zeros(structure.n) if b is None else np.asarray(b, dtype=float)
        if A.shape != (structure.n, structure.n) or b.shape != (structure.n,):
            raise ValueError("linear game dimensions do not match the population structure")
        self.A, self.b = A, b
        super().__init__(structure, lambda x: A @ x + b, lambda x: A, ConvHull((A,)))


class MixedAutonomyGame(PopulationGame):
    """Routing game with autonomous and regular vehicles sharing links.

    Social state is ``[x_aut; x_reg]``; population ``r < gamma`` holds the
    autonomous vehicles of OD pair ``r`` and ``gamma + r`` the regular ones.
    Link load is ``z = mu R^T x_aut + R^T x_reg``.
    """

    def __init__(self, routing, delays: Sequence[DelayFunction], mu: float,
                 routes_per_od: Sequence[int], mass_aut: Sequence[float],
                 mass_reg: Sequence[float]):
        R = np.asarray(routing, dtype=float)
        if R.ndim != 2:
            raise ValueError("routing matrix must be two-dimensional")
        if not np.all((R == 0) | (R == 1)):
            raise ValueError("routing matrix entries must be 0 or 1")
        if np.any(R.sum(axis=1) == 0):
            raise ValueError("every route must traverse at least one link")
        if not 0 < mu < 1:
            raise ValueError("headway factor mu must lie in (0, 1)")
        if len(delays) != R.shape[1]:
            raise ValueError(f"{R.shape[1]} links but {len(delays)} delay functions")
        if sum(routes_per_od) != R.shape[0]:
            raise ValueError("route counts do not match the routing matrix rows")
        if not len(routes_per_od) == len(mass_aut) == len(mass_reg):
            raise ValueError("per-OD lists differ in length")
        grid = np.linspace(0.0, 10.0, 101)
        for ell, phi in enumerate(delays):
            if np.any(np.diff(phi(grid)) <= 0):
                raise ValueError(f"delay of link {ell} is not strictly increasing")
        self.R = R
        self.delays = tuple(delays)
        self.mu = float(mu)
        self.routes_per_od = tuple(int(c) for c in routes_per_od)
        self.structure = PopulationStructure(
            self.routes_per_od * 2, tuple(mass_aut) + tuple(mass_reg))
        self.N, self.L = R.shape
        self.RR = np.vstack([R, R])
        self.load_map = np.hstack([self.mu * R.T, R.T])

    def link_loads(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * self.N,):
            raise ValueError(f"expected state of length {2 * self.N}, got {x.shape}")
        return self.load_map @ x

    def link_delays(self, z) -> np.ndarray:
        return np.array([float(phi(zl)) for phi, zl in zip(self.delays, z)])

    def link_slopes(self, z) -> np.ndarray:
        return np.array([float(phi.derivative(zl)) for phi, zl in zip(self.delays, z)])

    def payoff(self, x):
        return -self.RR @ self.link_delays(self.link_loads(x))

    def jacobian(self, x):
        slopes = self.link_slopes(self.link_loads(x))
        return -(self.RR * slopes) @ self.load_map

    def cone_generators(self) -> tuple[np.ndarray, ...]:
        """``B_l = -[R_l; R_l][mu R_l^T, R_l^T]`` so that ``J = sum_l Phi_l' B_l``."""
        gens = []
        for ell in range(self.L):
            col = self.R[:, ell]
            gens.append(-np.outer(np.concatenate([col, col]),
                                  np.concatenate([self.mu * col, col])))
        return tuple(gens)

    def envelope(self) -> Cone:
        return Cone(self.cone_generators())

    def contraction_weights(self):
        gamma = len(self.routes_per_od)
        return np.array([self.mu] * gamma + [1.0] * gamma)

    def weight_matrix(self) -> np.ndarray:
        return np.diag(self.structure.expand(self.contraction_weights()))


def mixed_autonomy_payoff(game: MixedAutonomyGame, x) -> np.ndarray:
    return game.payoff(x)


def mixed_autonomy_jacobian(game: MixedAutonomyGame, x) -> np.ndarray:
    return game.jacobian(x)


def mixed_autonomy_cone_envelope(game: MixedAutonomyGame) -> Cone:
    return game.envelope()


class RoadSplitGame(PopulationGame):
    """Lane choice of two populations approaching a road diverge.

    State is ``(x_s^1, x_b^1, x_s^2, x_b^2)``: steadfast and bypassing flow
    headed to each branch, normalized by the total flow.
    """

    def __init__(self, ct=(1.0, 1.0), cc=(1.0, 1.0), theta=(2.7, 2.7), mass=(0.5, 0.5)):
        self.ct = tuple(float(c) for c in ct)
        self.cc = tuple(float(c) for c in cc)
        self.theta = tuple(float(t) for t in theta)
        if min(self.ct) <= 0 or min(self.cc) < 0:
            raise ValueError("traversal costs must be positive and crossing costs nonnegative")
        if min(self.theta) <= 1:
            raise ValueError("detour factors must exceed 1")
        if abs(sum(mass) - 1.0) > 1e-12:
            raise ValueError("population masses must sum to 1")
        self.structure = PopulationStructure((2, 2), tuple(mass))

    def payoff(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (4,):
            raise ValueError("road-split state has four entries")
        xs1, xb1, xs2, xb2 = x
        (c1t, c2t), (c1c, c2c), (th1, th2) = self.ct, self.cc, self.theta
        lane1 = xs1 + xb2
        lane2 = xs2 + xb1
        return -np.array([
            c1t * lane1 + c1c * xb1 * lane1,
            c2t * (xs2 + th1 * xb1) + c2c * xb2 * lane2,
            c2t * lane2 + c2c * xb2 * lane2,
            c1t * (xs1 + th2 * xb2) + c1c * xb1 * lane1,
        ])

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        xs1, xb1, xs2, xb2 = x
        (c1t, c2t), (c1c, c2c), (th1, th2) = self.ct, self.cc, self.theta
        lane1 = xs1 + xb2
        lane2 = xs2 + xb1
        return -np.array([
            [c1t + c1c * xb1, c1c * lane1, 0.0, c1t + c1c * xb1],
            [0.0, c2t * th1 + c2c * xb2, c2t + c2c * xb2, c2c * lane2],
            [0.0, c2t + c2c * xb2, c2t + c2c * xb2, c2c * lane2],
            [c1t + c1c * xb1, c1c * lane1, 0.0, c1t * th2 + c1c * xb1],
        ])

    def envelope(self) -> Box:
        (c1t, c2t), (c1c, c2c), (th1, th2) = self.ct, self.cc, self.theta
        e = np.eye(4)
        a, b = e[0] + e[3], e[1] + e[2]
        G0 = -np.array([
            [c1t, 0, 0, c1t],
            [0, c2t * th1, c2t, 0],
            [0, c2t, c2t, 0],
            [c1t, 0, 0, c1t * th2],
        ])
        factors = (
            (-a[:, None], (c1c * e[1])[:, None]),
            (-np.column_stack([a, b]), np.column_stack([c1c * a, c2c * e[3]])),
            (-b[:, None], (c2c * e[3])[:, None]),
            (-np.column_stack([a, b]), np.column_stack([c1c * e[1], c2c * b])),
        )
        return Box(G0, factors)


def road_split_payoff(game: RoadSplitGame, x) -> np.ndarray:
    return game.payoff(x)


def road_split_box_envelope(game: RoadSplitGame) -> Box:
    return game.envelope()

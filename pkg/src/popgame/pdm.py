"""Payoff dynamics models: the generic interface and the smoothing PDM with its Legendre storage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import PopulationStructure, SupplyRate
from .games import MixedAutonomyGame

ADMISSIBLE_TOL = 1e-12


@dataclass(frozen=True)
class PdmSpec:
    """A payoff dynamics model ``q' = f(q, x)``, ``p = h(q, x)`` recovering ``F`` at rest."""

    state_dim: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    steady_state_payoff: Callable[[np.ndarray], np.ndarray]
    structure: Optional[PopulationStructure] = None

    def admissible(self, q) -> bool:
        return bool(np.all(np.isfinite(q)))

    def consistent_state(self, x) -> np.ndarray:
        raise NotImplementedError("generic PDMs need an explicit initial state")


class SmoothingPdm:
    """First-order smoothing of link delays: ``tau q' = -q + Phi(z)``, ``p = -[R; R] q``."""

    def __init__(self, game: MixedAutonomyGame, tau: float = 1.0):
        if not tau > 0:
            raise ValueError("time constant tau must be positive")
        self.game = game
        self.tau = float(tau)
        self.structure = game.structure
        self.state_dim = game.L
        self.alpha = np.array([phi.alpha for phi in game.delays])

    # dynamics -------------------------------------------------------------

    def admissible(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(np.isfinite(q)) and np.all(q >= self.alpha - ADMISSIBLE_TOL))

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.state_dim,):
            raise ValueError(f"expected PDM state of length {self.state_dim}, got {q.shape}")
        if not self.admissible(q):
            raise ValueError(f"PDM state {q} lies below the free-flow delays {self.alpha}")
        return q

    def f(self, q, x) -> np.ndarray:
        q = self._check_q(q)
        z = self.game.link_loads(x)
        return (self.game.link_delays(z) - q) / self.tau

    def h(self, q, x=None) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.state_dim,):
            raise ValueError(f"expected PDM state of length {self.state_dim}, got {q.shape}")
        return -self.game.RR @ q

    def steady_state_payoff(self, x) -> np.ndarray:
        return self.game.payoff(x)

    def consistent_state(self, x) -> np.ndarray:
        return self.game.link_delays(self.game.link_loads(x))

    # storage ------------------------------------------------------------

    def potential(self, z) -> float:
        """``phi(z) = sum_l int_0^{z_l} Phi_l``."""
        return float(sum(float(phi.antiderivative(zl)) for phi, zl in zip(self.game.delays, z)))

    def legendre_transform(self, q) -> tuple[float, np.ndarray]:
        """Return ``(min_{y >= 0} phi(y) - q^T y, minimizer)``."""
        q = self._check_q(q)
        zbar = np.array([
            0.0 if ql <= a else float(phi.inverse(ql))
            for phi, ql, a in zip(self.game.delays, q, self.alpha)
        ])
        return self.potential(zbar) - float(q @ zbar), zbar

    def storage(self, q, x) -> float:
        z = self.game.link_loads(x)
        conj, _ = self.legendre_transform(q)
        return (self.potential(z) - float(q @ z) - conj) / self.tau

    def varsigma(self, q, x) -> float:
        z = self.game.link_loads(x)
        _, zbar = self.legendre_transform(q)
        # Phi(zbar) = q by construction of the minimizer
        return float((z - zbar) @ (self.game.link_delays(z) - np.asarray(q))) / self.tau ** 2

    def storage_gradients(self, q, x) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dQ/dq, dQ/dx)``."""
        z = self.game.link_loads(x)
        _, zbar = self.legendre_transform(q)
        dq = (zbar - z) / self.tau
        dx = self.game.load_map.T @ ((self.game.link_delays(z) - np.asarray(q)) / self.tau)
        return dq, dx

    def supply_rate(self) -> SupplyRate:
        return SupplyRate.weighted(self.structure, self.game.contraction_weights())


def smoothing_f(pdm: SmoothingPdm, q, x) -> np.ndarray:
    return pdm.f(q, x)


def smoothing_h(pdm: SmoothingPdm, q) -> np.ndarray:
    return pdm.h(q)


def legendre_transform(pdm: SmoothingPdm, q):
    return pdm.legendre_transform(q)


def storage_Q(pdm: SmoothingPdm, q, x) -> float:
    return pdm.storage(q, x)


def sigma_varsigma(pdm: SmoothingPdm, q, x) -> float:
    return pdm.varsigma(q, x)


def sample_admissible(pdm: SmoothingPdm, rng: np.random.Generator, scale: float = 2.0) -> np.ndarray:
    """Random admissible PDM state: delays of random link loads in ``[0, scale * max mass]``."""
    zmax = scale * max(pdm.structure.masses) * 2
    return pdm.game.link_delays(rng.uniform(0.0, zmax, pdm.state_dim))


@dataclass
class PdmDissipativityReport:
    samples: int
    violations: int
    worst_slack: float
    identity_error: float
    sign_violations: int
    equivalence_failures: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.sign_violations == 0 and self.equivalence_failures == 0

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "identity_error": self.identity_error,
            "sign_violations": self.sign_violations,
            "equivalence_failures": self.equivalence_failures,
            "ok": self.ok,
        }


def _fd_dq(pdm: SmoothingPdm, q, x) -> np.ndarray:
    g = np.empty(pdm.state_dim)
    for k in range(pdm.state_dim):
        h = 1e-6 * max(1.0, abs(q[k]))
        e = np.zeros(pdm.state_dim)
        e[k] = h
        lo = q - e if q[k] - h >= pdm.alpha[k] else q
        hi = q + e
        g[k] = (pdm.storage(hi, x) - pdm.storage(lo, x)) / (hi[k] - lo[k])
    return g


def verify_pdm_dissipativity(pdm: SmoothingPdm, supply: Optional[SupplyRate] = None,
                             samples: int = 1000, seed: int = 0, gradient: str = "analytic",
                             slack_tol: float = 1e-8) -> PdmDissipativityReport:
    """Sample ``dQ/dq f + dQ/dx zeta <= -varsigma - psi^T Pi psi``.

    ``psi = [dh/dq f + dh/dx zeta; zeta]``. With ``gradient="fd"`` the
    ``dQ/dq`` term is taken from finite differences of ``Q``. Also reports
    ``max |dQ/dx zeta + psi^T Pi psi|``, nonnegativity of ``Q`` and
    ``varsigma`` and the vanishing equivalences with ``f = 0``; a quarter of
    the samples sit on the rest manifold ``q = Phi(z)``.
    """
    supply = supply or pdm.supply_rate()
    s = pdm.structure
    rng = np.random.default_rng(seed)
    worst, ident = np.inf, 0.0
    violations = sign_violations = equivalence_failures = 0
    for k in range(samples):
        x = s.random_state(rng)
        zeta = s.random_tangent(rng)
        q = pdm.consistent_state(x) if k % 4 == 3 else sample_admissible(pdm, rng)
        f = pdm.f(q, x)
        dq, dx = pdm.storage_gradients(q, x)
        if gradient == "fd":
            dq = _fd_dq(pdm, q, x)
        psi_u = -pdm.game.RR @ f
        supply_val = supply.quadratic(psi_u, zeta)
        vs = pdm.varsigma(q, x)
        Q = pdm.storage(q, x)
        lhs = dq @ f + dx @ zeta
        slack = -vs - supply_val - lhs
        worst = min(worst, slack)
        ident = max(ident, abs(dx @ zeta + supply_val))
        if slack < -slack_tol:
            violations += 1
        if Q < -1e-12 or vs < -1e-12:
            sign_violations += 1
        rest = np.linalg.norm(f) <= 1e-8
        if (Q <= 1e-10) != rest or (vs <= 1e-10) != rest:
            equivalence_failures += 1
    return PdmDissipativityReport(samples, violations, float(worst), float(ident),
                                  sign_violations, equivalence_failures)

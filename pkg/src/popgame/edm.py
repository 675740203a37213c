"""Impartial pairwise comparison dynamics, their storage functions and Nash gaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import PopulationStructure, SupplyRate

RateFn = Callable[[np.ndarray], np.ndarray]


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 50) -> float:
    """Integrate ``f`` over ``[a, b]`` by recursive Simpson refinement."""

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(lo, hi, fa, fm, fb, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, lo, mid)
        right = simpson(fm, frm, fb, mid, hi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, fa, flm, fm, left, eps / 2, depth - 1)
                + recurse(mid, hi, fm, frm, fb, right, eps / 2, depth - 1))

    if a == b:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


@dataclass(frozen=True)
class SwitchRate:
    """A switch-rate function ``phi`` with its antiderivative ``int_0^t phi``.

    Both callables must accept numpy arrays. Without an explicit
    antiderivative, adaptive Simpson quadrature is used.
    """

    phi: RateFn
    antiderivative: Optional[RateFn] = None
    name: str = "custom"

    def integral(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.antiderivative is not None:
            return self.antiderivative(t)
        scalar = lambda s: float(self.phi(np.asarray(s)))
        return np.vectorize(lambda s: adaptive_simpson(scalar, 0.0, float(s)) if s > 0 else 0.0)(t)

    def validate(self, span: float = 10.0, points: int = 201) -> None:
        """Sample the rate: zero for ``s <= 0``, positive for ``s > 0``, antiderivative consistent."""
        s = np.linspace(-span, span, points)
        vals = np.asarray(self.phi(s), dtype=float)
        if np.any(vals[s <= 0] != 0):
            raise ValueError(f"switch rate {self.name} is nonzero for a nonpositive argument")
        if np.any(vals[s > 0] <= 0):
            raise ValueError(f"switch rate {self.name} is not positive for a positive argument")
        # a wide stencil keeps quadrature noise (1e-10 absolute) below the tolerance
        h = 1e-3
        t = s[np.abs(s) > 2 * h]
        deriv = (self.integral(t + h) - self.integral(t - h)) / (2 * h)
        err = np.abs(deriv - self.phi(t)) / np.maximum(1.0, np.abs(self.phi(t)))
        if err.max() > 1e-6:
            raise ValueError(f"antiderivative of {self.name} disagrees with the rate by {err.max():.2e}")


def smith_rate() -> SwitchRate:
    return SwitchRate(
        phi=lambda s: np.maximum(s, 0.0),
        antiderivative=lambda t: 0.5 * np.maximum(t, 0.0) ** 2,
        name="smith",
    )


def power_rate(exponent: float) -> SwitchRate:
    """``phi(s) = [s]_+^k``; Lipschitz for ``k >= 1``."""
    k = float(exponent)
    if k < 1:
        raise ValueError("exponent must be >= 1 for a Lipschitz switch rate")
    return SwitchRate(
        phi=lambda s: np.maximum(s, 0.0) ** k,
        antiderivative=lambda t: np.maximum(t, 0.0) ** (k + 1) / (k + 1),
        name=f"power{k:g}",
    )


@dataclass(frozen=True)
class IpcProtocol:
    """Impartial pairwise comparison protocol.

    ``rates`` holds either one switch rate shared by every strategy, or one
    per strategy (length ``n``, in social-state order). The rate for a
    switch ``i -> j`` depends only on the destination ``j``.
    """

    structure: PopulationStructure
    rates: Sequence[SwitchRate] = field(default_factory=lambda: (smith_rate(),))

    def __post_init__(self):
        rates = tuple(self.rates)
        if len(rates) not in (1, self.structure.n):
            raise ValueError(f"expected 1 or {self.structure.n} switch rates, got {len(rates)}")
        for rate in rates:
            rate.validate()
        object.__setattr__(self, "rates", rates)

    @classmethod
    def smith(cls, structure: PopulationStructure) -> IpcProtocol:
        return cls(structure, (smith_rate(),))

    @property
    def name(self) -> str:
        return self.rates[0].name if len(self.rates) == 1 else "ipc"

    def _rates(self, pr, sl):
        diff = pr[None, :] - pr[:, None]
        if len(self.rates) == 1:
            return self.rates[0].phi(diff)
        A = np.empty_like(diff)
        for j, rate in enumerate(self.rates[sl]):
            A[:, j] = rate.phi(diff[:, j])
        return A

    def _tables(self, xr, pr, sl):
        """Return ``A[i, j] = phi_j(p_j - p_i)`` and ``B[i, j] = int_0^{p_j - p_i} phi_j``."""
        diff = pr[None, :] - pr[:, None]
        if len(self.rates) == 1:
            rate = self.rates[0]
            return rate.phi(diff), rate.integral(diff)
        A = np.empty_like(diff)
        B = np.empty_like(diff)
        for j, rate in enumerate(self.rates[sl]):
            A[:, j] = rate.phi(diff[:, j])
            B[:, j] = rate.integral(diff[:, j])
        return A, B

    def _blocks(self, x, p):
        s = self.structure
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if x.shape != (s.n,) or p.shape != (s.n,):
            raise ValueError(f"expected x and p of length {s.n}, got {x.shape} and {p.shape}")
        for sl in s.slices:
            yield sl, x[sl], p[sl]

    def velocity(self, x, p) -> np.ndarray:
        nu = np.empty(self.structure.n)
        for sl, xr, pr in self._blocks(x, p):
            A = self._rates(pr, sl)
            nu[sl] = A.T @ xr - xr * A.sum(axis=1)
        return nu

    def storage(self, x, p, weights=None) -> float:
        w = _weights(self.structure, weights)
        total = 0.0
        for r, (sl, xr, pr) in enumerate(self._blocks(x, p)):
            _, B = self._tables(xr, pr, sl)
            total += w[r] * float(xr @ B.sum(axis=1))
        return total

    def sigma(self, x, p, weights=None) -> float:
        w = _weights(self.structure, weights)
        total = 0.0
        for r, (sl, xr, pr) in enumerate(self._blocks(x, p)):
            A, B = self._tables(xr, pr, sl)
            nu = A.T @ xr - xr * A.sum(axis=1)
            total -= w[r] * float(nu @ B.sum(axis=1))
        return total

    def storage_gradients(self, x, p, weights=None) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dS/dx, dS/dp)`` of the (weighted) storage function."""
        w = _weights(self.structure, weights)
        gx = np.empty(self.structure.n)
        gp = np.empty(self.structure.n)
        for r, (sl, xr, pr) in enumerate(self._blocks(x, p)):
            A, B = self._tables(xr, pr, sl)
            gx[sl] = w[r] * B.sum(axis=1)
            # d/dp_k of sum_i x_i sum_j Psi_j(p_j - p_i)
            gp[sl] = w[r] * (xr @ A - xr * A.sum(axis=1))
        return gx, gp


def _weights(structure: PopulationStructure, weights) -> np.ndarray:
    if weights is None:
        return np.ones(structure.rho)
    w = np.asarray(weights, dtype=float)
    if w.shape != (structure.rho,):
        raise ValueError(f"expected {structure.rho} population weights, got shape {w.shape}")
    return w


def ipc_velocity(protocol: IpcProtocol, x, p) -> np.ndarray:
    return protocol.velocity(x, p)


def ipc_storage(protocol: IpcProtocol, x, p, weights=None) -> float:
    return protocol.storage(x, p, weights)


def ipc_sigma(protocol: IpcProtocol, x, p, weights=None) -> float:
    return protocol.sigma(x, p, weights)


def storage_gradients(protocol: IpcProtocol, x, p, weights=None):
    return protocol.storage_gradients(x, p, weights)


def nash_gap(structure: PopulationStructure, x, p) -> float:
    """Sum over populations of ``m^r max_i p_i^r - x^r . p^r``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != (structure.n,) or p.shape != (structure.n,):
        raise ValueError(f"expected x and p of length {structure.n}")
    gap = 0.0
    for sl, m in zip(structure.slices, structure.masses):
        gap += m * p[sl].max() - float(x[sl] @ p[sl])
    return max(gap, 0.0)


@dataclass
class DissipativityReport:
    samples: int
    violations: int
    worst_slack: float
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
            "sign_violations": self.sign_violations,
            "equivalence_failures": self.equivalence_failures,
            "ok": self.ok,
        }


def verify_delta_dissipativity(protocol: IpcProtocol, supply: SupplyRate, samples: int = 1000,
                               seed: int = 0, magnitude: float = 3.0, weights=None,
                               slack_tol: float = 1e-8,
                               sigma_fn: Optional[Callable] = None) -> DissipativityReport:
    """Sample the supply-rate inequality of the (weighted) IPC storage function.

    For each ``(x, p, u)`` checks
    ``dS/dx nu + dS/dp u <= -sigma + [u; nu]^T Pi [u; nu] + slack_tol``,
    plus nonnegativity of ``S`` and ``sigma`` and the vanishing equivalences
    ``S = 0 <=> sigma = 0 <=> nu = 0`` at thresholds ``(1e-10, 1e-8)``.
    A quarter of the samples are placed at rest points so the equivalences
    are exercised in both directions. ``sigma_fn`` overrides the
    dissipation term (used to mutation-test the checker).
    """
    s = protocol.structure
    if supply.n != s.n:
        raise ValueError(f"supply rate is for n={supply.n}, structure has n={s.n}")
    sigma_fn = sigma_fn or protocol.sigma
    rng = np.random.default_rng(seed)
    worst = np.inf
    violations = sign_violations = equivalence_failures = 0
    for k in range(samples):
        x = s.random_state(rng)
        p = magnitude * rng.standard_normal(s.n)
        u = magnitude * rng.standard_normal(s.n)
        if k % 4 == 3:
            p = _rest_payoff(s, x, rng, magnitude)
        nu = protocol.velocity(x, p)
        gx, gp = protocol.storage_gradients(x, p, weights)
        S = protocol.storage(x, p, weights)
        sig = sigma_fn(x, p, weights)
        slack = -sig + supply.quadratic(u, nu) - (gx @ nu + gp @ u)
        worst = min(worst, slack)
        if slack < -slack_tol:
            violations += 1
        if S < -1e-12 or sig < -1e-12:
            sign_violations += 1
        rest = np.linalg.norm(nu) < 1e-8
        if (S < 1e-10) != rest or (sig < 1e-10) != rest:
            equivalence_failures += 1
    return DissipativityReport(samples, violations, float(worst), sign_violations,
                               equivalence_failures)


def _rest_payoff(structure, x, rng, magnitude):
    """A payoff under which ``x`` is a best response (equal on the support)."""
    p = np.empty(structure.n)
    for sl in structure.slices:
        level = magnitude * rng.standard_normal()
        p[sl] = level
    return p

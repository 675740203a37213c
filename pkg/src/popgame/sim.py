"""Closed-loop integration of evolutionary dynamics with memoryless or dynamic payoffs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import PopulationStructure
from .edm import IpcProtocol, nash_gap
from .games import PopulationGame
from .pdm import SmoothingPdm

log = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12
DRIFT_TOL = 1e-11
MAX_HALVINGS = 30


class NumericalError(RuntimeError):
    """Integration produced a non-finite or unrecoverable state."""


# ------------------------------------------------------------ closed loops

class MemorylessLoop:
    """``x' = nu(x, F(x))`` with Lyapunov function ``V = S_w(x, F(x))``."""

    has_pdm = False

    def __init__(self, game: PopulationGame, protocol: IpcProtocol, weights=None):
        self.game = game
        self.protocol = protocol
        self.structure = game.structure
        self.weights = game.contraction_weights() if weights is None else np.asarray(weights, float)

    def rhs(self, x, q=None):
        return self.protocol.velocity(x, self.game.payoff(x)), None

    def payoff(self, x, q=None):
        return self.game.payoff(x)

    def lyapunov(self, x, q=None) -> float:
        return self.protocol.storage(x, self.game.payoff(x), self.weights)

    def lyapunov_rate(self, x, q=None) -> tuple[float, float]:
        """Return ``(dV/dt, sigma)`` from the analytic right-hand sides."""
        p = self.game.payoff(x)
        nu = self.protocol.velocity(x, p)
        gx, gp = self.protocol.storage_gradients(x, p, self.weights)
        rate = gx @ nu + gp @ (self.game.jacobian(x) @ nu)
        return float(rate), self.protocol.sigma(x, p, self.weights)

    def admissible(self, q) -> bool:
        return True

    def pdm_rate(self, x, q):
        return np.zeros(0)


class PdmLoop:
    """``x' = nu(x, h(q))``, ``q' = f(q, x)`` with ``V = S_w(x, h(q)) + Q(q, x)``."""

    has_pdm = True

    def __init__(self, pdm: SmoothingPdm, protocol: IpcProtocol, weights=None):
        self.pdm = pdm
        self.game = pdm.game
        self.protocol = protocol
        self.structure = pdm.structure
        self.weights = (pdm.game.contraction_weights() if weights is None
                        else np.asarray(weights, float))

    def rhs(self, x, q):
        return self.protocol.velocity(x, self.pdm.h(q, x)), self.pdm.f(q, x)

    def payoff(self, x, q):
        return self.pdm.h(q, x)

    def lyapunov(self, x, q) -> float:
        return self.protocol.storage(x, self.pdm.h(q, x), self.weights) + self.pdm.storage(q, x)

    def lyapunov_rate(self, x, q) -> tuple[float, float]:
        p = self.pdm.h(q, x)
        nu = self.protocol.velocity(x, p)
        f = self.pdm.f(q, x)
        gx, gp = self.protocol.storage_gradients(x, p, self.weights)
        dq, dx = self.pdm.storage_gradients(q, x)
        rate = gx @ nu + gp @ (-self.game.RR @ f) + dq @ f + dx @ nu
        dissipation = self.protocol.sigma(x, p, self.weights) + self.pdm.varsigma(q, x)
        return float(rate), float(dissipation)

    def admissible(self, q) -> bool:
        return self.pdm.admissible(q)

    def pdm_rate(self, x, q):
        return self.pdm.f(q, x)


# --------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    structure: PopulationStructure
    times: np.ndarray
    states: np.ndarray
    payoffs: np.ndarray
    lyapunov: np.ndarray
    nash_gaps: np.ndarray
    velocity_norms: np.ndarray
    pdm_states: Optional[np.ndarray] = None
    pdm_rate_norms: Optional[np.ndarray] = None
    step: float = 1e-2
    halvings: int = 0
    loop: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def csv_header(self) -> list[str]:
        n = self.structure.n
        cols = ["t"] + [f"x_{i + 1}" for i in range(n)]
        if self.pdm_states is not None:
            cols += [f"q_{i + 1}" for i in range(self.pdm_states.shape[1])]
        cols += [f"p_{i + 1}" for i in range(n)] + ["V", "nash_gap"]
        return cols

    def csv_rows(self):
        for k in range(len(self.times)):
            row = [self.times[k], *self.states[k]]
            if self.pdm_states is not None:
                row += list(self.pdm_states[k])
            row += [*self.payoffs[k], self.lyapunov[k], self.nash_gaps[k]]
            yield row


def _rk4(loop, x, q, h):
    def f(xx, qq):
        dx, dq = loop.rhs(xx, qq)
        return dx, (None if dq is None else dq)

    k1x, k1q = f(x, q)
    if q is None:
        k2x, _ = f(x + 0.5 * h * k1x, None)
        k3x, _ = f(x + 0.5 * h * k2x, None)
        k4x, _ = f(x + h * k3x, None)
        return x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x), None
    k2x, k2q = f(x + 0.5 * h * k1x, q + 0.5 * h * k1q)
    k3x, k3q = f(x + 0.5 * h * k2x, q + 0.5 * h * k2q)
    k4x, k4q = f(x + h * k3x, q + h * k3q)
    return (x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q))


def _trial_ok(loop, x, q) -> bool:
    if np.any(x < -NEGATIVE_TOL):
        return False
    return q is None or loop.admissible(q)


def _advance(loop, x, q, h, depth=0):
    """One step of size ``h``; rejected steps are replaced by two half steps."""
    try:
        xn, qn = _rk4(loop, x, q, h)
    except ValueError:
        # an intermediate stage left the PDM domain
        xn, qn = None, None
    if xn is not None and not (np.all(np.isfinite(xn)) and (qn is None or np.all(np.isfinite(qn)))):
        raise NumericalError(f"non-finite state after step of size {h:g}")
    if xn is not None and _trial_ok(loop, xn, qn):
        return xn, qn, 0
    if depth >= MAX_HALVINGS:
        raise NumericalError("step halving limit reached; state keeps leaving its domain")
    xm, qm, c1 = _advance(loop, x, q, h / 2, depth + 1)
    xe, qe, c2 = _advance(loop, xm, qm, h / 2, depth + 1)
    return xe, qe, 1 + c1 + c2


def renormalize(structure: PopulationStructure, x: np.ndarray) -> np.ndarray:
    """Restore block masses when drift exceeds ``DRIFT_TOL``.

    A uniform correction is used when it keeps entries nonnegative,
    otherwise the block is clipped and rescaled.
    """
    x = x.copy()
    for sl, m in zip(structure.slices, structure.masses):
        drift = m - x[sl].sum()
        if abs(drift) <= DRIFT_TOL:
            continue
        shifted = x[sl] + drift / (sl.stop - sl.start)
        if np.all(shifted >= 0):
            x[sl] = shifted
        else:
            clipped = np.maximum(x[sl], 0.0)
            x[sl] = m * clipped / clipped.sum()
    return x


def _integrate(loop, x0, q0, horizon, step, stride) -> Trajectory:
    s = loop.structure
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    x = s.check_state(np.array(x0, dtype=float))
    q = None if q0 is None else np.array(q0, dtype=float)
    if q is not None and not loop.admissible(q):
        raise ValueError(f"initial PDM state {q} is inadmissible")
    steps = int(round(horizon / step))
    times, xs, qs, ps, vs, gaps, vn, fn = [], [], [], [], [], [], [], []

    def record(k):
        p = loop.payoff(x, q)
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite payoff at t={k * step:g}")
        times.append(k * step)
        xs.append(x.copy())
        if q is not None:
            qs.append(q.copy())
            fn.append(float(np.linalg.norm(loop.pdm_rate(x, q))))
        ps.append(p)
        vs.append(loop.lyapunov(x, q))
        gaps.append(nash_gap(s, x, p))
        vn.append(float(np.linalg.norm(loop.protocol.velocity(x, p))))

    record(0)
    halvings = 0
    for k in range(1, steps + 1):
        x, q, c = _advance(loop, x, q, step)
        halvings += c
        x = renormalize(s, x)
        if k % stride == 0 or k == steps:
            record(k)
    if halvings:
        log.debug("integration needed %d step halvings", halvings)
    return Trajectory(
        structure=s,
        times=np.array(times),
        states=np.array(xs),
        payoffs=np.array(ps),
        lyapunov=np.array(vs),
        nash_gaps=np.array(gaps),
        velocity_norms=np.array(vn),
        pdm_states=np.array(qs) if q is not None else None,
        pdm_rate_norms=np.array(fn) if q is not None else None,
        step=step,
        halvings=halvings,
        loop=loop,
    )


def integrate_memoryless(game: PopulationGame, protocol: IpcProtocol, x0, horizon: float,
                         step: float = 1e-2, stride: int = 10, weights=None) -> Trajectory:
    """Fixed-step RK4 of ``x' = nu(x, F(x))``, recording every ``stride`` steps."""
    return _integrate(MemorylessLoop(game, protocol, weights), x0, None, horizon, step, stride)


def integrate_closed_loop(pdm: SmoothingPdm, protocol: IpcProtocol, x0, q0=None,
                          horizon: float = 100.0, step: float = 1e-2, stride: int = 10,
                          weights=None) -> Trajectory:
    """Joint RK4 of the EDM and the PDM; ``q0=None`` starts on the rest manifold ``q = Phi(z(x0))``."""
    if q0 is None:
        q0 = pdm.consistent_state(x0)
    return _integrate(PdmLoop(pdm, protocol, weights), x0, q0, horizon, step, stride)


# ----------------------------------------------------------------- monitors

@dataclass
class LyapunovReport:
    flags: list[int]
    max_increase: float
    rate_violations: int
    worst_rate_slack: float

    @property
    def ok(self) -> bool:
        return not self.flags and self.rate_violations == 0

    def to_json(self) -> dict:
        return {
            "flags": len(self.flags),
            "max_increase": self.max_increase,
            "rate_violations": self.rate_violations,
            "worst_rate_slack": self.worst_rate_slack,
        }


def lyapunov_monitor(trajectory: Trajectory, tolerance: float = 1e-7, rate_samples: int = 20,
                     rate_tol: float = 1e-6) -> LyapunovReport:
    """Flag increases ``V_{k+1} - V_k > tolerance * max(1, V_k)``.

    At up to ``rate_samples`` stored points also checks
    ``dV/dt <= -(sigma + varsigma) + rate_tol`` from the analytic
    right-hand sides. Diagnostic only: it makes no stability claim.
    """
    V = trajectory.lyapunov
    inc = np.diff(V)
    allowed = tolerance * np.maximum(1.0, V[:-1])
    flags = [int(k) for k in np.nonzero(inc > allowed)[0]]
    max_inc = float(inc.max()) if len(inc) else 0.0
    rate_violations, worst = 0, np.inf
    loop = trajectory.loop
    if loop is not None and rate_samples > 0:
        idx = np.unique(np.linspace(0, len(trajectory) - 1, rate_samples).astype(int))
        for k in idx:
            q = None if trajectory.pdm_states is None else trajectory.pdm_states[k]
            rate, dissipation = loop.lyapunov_rate(trajectory.states[k], q)
            slack = -dissipation + rate_tol - rate
            worst = min(worst, slack)
            if slack < 0:
                rate_violations += 1
    return LyapunovReport(flags, max_inc, rate_violations, float(worst))


@dataclass
class RestPoint:
    x: np.ndarray
    q: Optional[np.ndarray]
    nash_gap: float


def detect_rest_point(trajectory: Trajectory, tol: float = 1e-6) -> Optional[RestPoint]:
    """The final state if ``|nu| <= tol`` (and ``|f| <= tol`` with a PDM).

    The Nash gap against the memoryless payoff ``F(x*)`` must then be at
    most ``10 tol``; otherwise no rest point is reported.
    """
    if len(trajectory) == 0:
        return None
    if trajectory.velocity_norms[-1] > tol:
        return None
    q = None
    if trajectory.pdm_states is not None:
        if trajectory.pdm_rate_norms[-1] > tol:
            return None
        q = trajectory.pdm_states[-1]
    x = trajectory.final_state
    gap = nash_gap(trajectory.structure, x, trajectory.loop.game.payoff(x))
    if gap > 10 * tol:
        log.warning("rest point candidate has Nash gap %.3e above %.3e", gap, 10 * tol)
        return None
    return RestPoint(x.copy(), None if q is None else q.copy(), gap)

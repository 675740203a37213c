"""Stability certificates from constant-matrix envelopes of the payoff Jacobian.

All matrix conditions are evaluated on the tangent space of the simplex
product: blocks are expressed in an orthonormal tangent basis ``U`` so the
per-population ones vectors (where ``P`` vanishes) never mask a margin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    PopulationStructure,
    SupplyRate,
    restricted_lambda_max,
    symmetrize,
    tangent_basis,
    tangent_projection,
)
from .games import Box, Cone, ConvHull, JacobianEnvelope, PopulationGame, SumEnvelope

log = logging.getLogger(__name__)

SEMIDEFINITE_TOL = 1e-10
WITNESS_TOL = 1e-9
DEFAULT_MARGIN = 1e-8


@dataclass
class Budget:
    iterations: int = 2000
    restarts: int = 5
    grid_points: int = 61
    polish_sweeps: int = 30


@dataclass
class Certificate:
    """Outcome of a certification: verdict, multipliers and the achieved spectrum.

    ``lambda_max`` is the largest tangent-restricted eigenvalue over all
    condition blocks at the stored multipliers.
    """

    verdict: str
    weights: Optional[np.ndarray]
    omegas: np.ndarray
    lambda_max: float
    margin: float
    envelope_kind: str
    seed: Optional[int] = None
    witness: Optional[dict] = None
    supply: Optional[SupplyRate] = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self) -> dict:
        out = {
            "verdict": self.verdict,
            "envelope": self.envelope_kind,
            "weights": None if self.weights is None else [float(w) for w in self.weights],
            "omegas": [float(o) for o in self.omegas],
            "lambda_max": float(self.lambda_max),
            "margin": float(self.margin),
            "seed": self.seed,
        }
        if self.witness is not None:
            out["witness"] = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.witness.items()
            }
        return out


# ------------------------------------------------------------ pointwise check

@dataclass
class PointwiseReport:
    samples: int
    violations: int
    worst: float
    witness_x: Optional[np.ndarray]
    witness_zeta: Optional[np.ndarray]

    @property
    def ok(self) -> bool:
        return self.violations == 0


def incremental_form(supply: SupplyRate, J: np.ndarray, zeta: np.ndarray) -> float:
    """``zeta^T [J; I]^T Pi [J; I] zeta``."""
    return supply.quadratic(J @ zeta, zeta)


def check_pointwise(game: PopulationGame, supply: SupplyRate, x_samples,
                    tol: float = 1e-8) -> PointwiseReport:
    """Largest tangent eigenvalue of ``sym([J(x); I]^T Pi [J(x); I])`` over sampled states.

    A sampling check, not a proof. The witness is the worst state and its
    top tangent eigenvector (unit norm).
    """
    U = tangent_basis(game.structure)
    worst, wx, wz, violations = -np.inf, None, None, 0
    xs = np.atleast_2d(np.asarray(x_samples, dtype=float))
    for x in xs:
        lam, vec = restricted_lambda_max(supply.incremental_matrix(game.jacobian(x)), U)
        if lam > tol:
            violations += 1
        if lam > worst:
            worst, wx, wz = lam, x.copy(), vec
    return PointwiseReport(len(xs), violations, float(worst), wx, wz)


def find_pointwise_witness(game: PopulationGame, supply: SupplyRate, samples: int = 200,
                           seed: int = 0) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    xs = [game.structure.uniform_state()] + [game.structure.random_state(rng) for _ in range(samples)]
    rep = check_pointwise(game, supply, xs)
    if rep.worst > WITNESS_TOL:
        value = incremental_form(supply, game.jacobian(rep.witness_x), rep.witness_zeta)
        if value > WITNESS_TOL:
            return {"kind": "pointwise", "x": rep.witness_x, "zeta": rep.witness_zeta, "value": value}
    return None


# ------------------------------------------------------- condition assembly

def _require_passive_form(supply: SupplyRate):
    if np.any(supply.pi11 != 0):
        raise ValueError("envelope conditions require Pi11 = 0")


def _vertex_block(supply: SupplyRate, A: np.ndarray, U: np.ndarray) -> np.ndarray:
    return U.T @ supply.incremental_matrix(A) @ U


def _generator_block(supply: SupplyRate, B: np.ndarray, U: np.ndarray) -> np.ndarray:
    return U.T @ symmetrize(supply.pi12.T @ B + B.T @ supply.pi12) @ U


def assemble_scheck(supply: SupplyRate, box: Box, P: np.ndarray, omegas: Sequence[float]) -> np.ndarray:
    """The S-procedure matrix of size ``n + sum(ranks)``.

    ``[[P (Pi12^T G0 + G0^T Pi12 + Pi22) P, P (Pi12^T C + D Omega)],
       [(C^T Pi12 + Omega D^T) P, -2 Omega]]``
    """
    _require_passive_form(supply)
    omegas = np.asarray(omegas, dtype=float)
    if omegas.shape != (box.d,):
        raise ValueError(f"expected {box.d} S-procedure multipliers, got shape {omegas.shape}")
    n = box.G0.shape[0]
    if P.shape != (n, n) or supply.n != n:
        raise ValueError("dimension mismatch between supply rate, box and projection")
    Omega = np.diag(np.repeat(omegas, box.ranks)) if box.d else np.zeros((0, 0))
    C, D = box.C, box.D
    pi12, G0 = supply.pi12, box.G0
    top = P @ (pi12.T @ G0 + G0.T @ pi12 + supply.pi22) @ P
    off = P @ (pi12.T @ C + D @ Omega)
    return symmetrize(np.block([[top, off], [off.T, -2.0 * Omega]]))


def scheck_reduced(supply: SupplyRate, box: Box, structure: PopulationStructure,
                   omegas: Sequence[float]) -> np.ndarray:
    """S-procedure matrix with the tangent block expressed in the basis ``U``."""
    U = tangent_basis(structure)
    S = assemble_scheck(supply, box, tangent_projection(structure), omegas)
    r = sum(box.ranks)
    T = np.zeros((structure.n + r, U.shape[1] + r))
    T[: structure.n, : U.shape[1]] = U
    T[structure.n :, U.shape[1] :] = np.eye(r)
    return T.T @ S @ T


def condition_blocks(envelope: JacobianEnvelope, supply: SupplyRate, structure: PopulationStructure,
                     omegas: Sequence[float] = ()) -> list[tuple[str, int, np.ndarray, bool]]:
    """All tangent-restricted condition blocks: ``(kind, index, matrix, strict)``.

    Strict blocks need ``lambda_max <= -margin``; semidefinite blocks
    (cone generators and ``Pi22``) need ``lambda_max <= 0``.
    """
    _require_passive_form(supply)
    U = tangent_basis(structure)
    blocks = []
    if isinstance(envelope, (ConvHull, SumEnvelope)):
        hull = envelope.hull if isinstance(envelope, SumEnvelope) else envelope
        for i, A in enumerate(hull.vertices):
            blocks.append(("vertex", i, _vertex_block(supply, A, U), True))
    if isinstance(envelope, (Cone, SumEnvelope)):
        cone = envelope.cone if isinstance(envelope, SumEnvelope) else envelope
        blocks.append(("pi22", 0, U.T @ symmetrize(supply.pi22) @ U, False))
        for i, B in enumerate(cone.generators):
            blocks.append(("generator", i, _generator_block(supply, B, U), False))
    if isinstance(envelope, Box):
        blocks.append(("scheck", 0, scheck_reduced(supply, envelope, structure, omegas), True))
    return blocks


def _envelope_kind(envelope) -> str:
    return {ConvHull: "convhull", Cone: "cone", Box: "box", SumEnvelope: "sum"}[type(envelope)]


def _evaluate(envelope, supply, structure, omegas, margin):
    """Direct re-check: returns (certified, lambda_max, witness)."""
    worst, witness, ok = -np.inf, None, True
    for kind, idx, M, strict in condition_blocks(envelope, supply, structure, omegas):
        if M.shape[0] == 0:
            continue
        vals, vecs = np.linalg.eigh(symmetrize(M))
        lam = float(vals[-1])
        limit = (-margin if strict else 0.0) + SEMIDEFINITE_TOL
        if lam > limit:
            ok = False
        if lam > worst:
            worst = lam
            witness = {"kind": kind, "index": idx, "vector": vecs[:, -1], "value": lam}
    return ok, worst, witness


def _direct_certificate(envelope, supply, structure, margin, omegas=()) -> Certificate:
    ok, lam, witness = _evaluate(envelope, supply, structure, omegas, margin)
    if not ok and witness is not None and witness["kind"] != "scheck":
        U = tangent_basis(structure)
        zeta = U @ witness["vector"][: U.shape[1]]
        witness = {"kind": witness["kind"], "index": witness["index"], "zeta": zeta,
                   "value": witness["value"]}
    return Certificate("certified" if ok else "refuted", None, np.asarray(omegas, dtype=float),
                       lam, margin, _envelope_kind(envelope), witness=None if ok else witness,
                       supply=supply)


def check_convhull(supply: SupplyRate, hull: ConvHull, structure: PopulationStructure,
                   margin: float = 0.0) -> Certificate:
    """Every vertex must satisfy the incremental condition on the tangent space."""
    return _direct_certificate(hull, supply, structure, margin)


def check_cone(supply: SupplyRate, cone: Cone, structure: PopulationStructure) -> Certificate:
    """``P Pi22 P <= 0`` and ``P (Pi12^T B + B^T Pi12) P <= 0`` for each generator (semidefinite)."""
    return _direct_certificate(cone, supply, structure, 0.0)


def check_sum(supply: SupplyRate, envelope: SumEnvelope, structure: PopulationStructure,
              margin: float = 0.0) -> Certificate:
    return _direct_certificate(envelope, supply, structure, margin)


# -------------------------------------------------------------------- solver

@dataclass
class FeasibilityResult:
    theta: np.ndarray
    lambda_max: float
    evaluations: int


def _lambda_max(M0, Ms, theta):
    M = M0 + np.tensordot(theta, Ms, axes=1)
    return float(np.linalg.eigvalsh(M)[-1])


def _subgradient(M0, Ms, theta):
    M = M0 + np.tensordot(theta, Ms, axes=1)
    vals, vecs = np.linalg.eigh(M)
    top = vals[-1]
    V = vecs[:, vals >= top - 1e-9 * max(1.0, abs(top))]
    # average over the top eigenspace for repeated eigenvalues
    g = np.einsum("kij,ia,ja->k", Ms, V, V) / V.shape[1]
    return float(top), g


def feasibility_solve(M0: np.ndarray, Ms: Sequence[np.ndarray], theta_min, theta_max=1e3,
                      budget: Optional[Budget] = None, seed: int = 0) -> FeasibilityResult:
    """Minimize ``lambda_max(M0 + sum_i theta_i M_i)`` over the box ``[theta_min, theta_max]``.

    Projected subgradient with Polyak steps (target: best value minus 1e-3)
    from random log-uniform restarts, then a logarithmic grid when there are
    at most three unknowns, then coordinate-wise golden-section polishing.
    Deterministic for a given seed.
    """
    budget = budget or Budget()
    M0 = symmetrize(M0)
    Ms = np.array([symmetrize(M) for M in Ms]).reshape(len(Ms), *M0.shape)
    k = len(Ms)
    lo = np.broadcast_to(np.asarray(theta_min, dtype=float), (k,)).copy()
    hi = np.broadcast_to(np.asarray(theta_max, dtype=float), (k,)).copy()
    if np.any(lo <= 0) or np.any(hi < lo):
        raise ValueError("bounds must satisfy 0 < theta_min <= theta_max")
    if k == 0:
        return FeasibilityResult(np.zeros(0), _lambda_max(M0, Ms, np.zeros(0)), 1)

    rng = np.random.default_rng(seed)
    evals = 0
    best_theta, best = None, np.inf
    start_lo = np.log10(np.maximum(lo, 1e-2))
    start_hi = np.log10(np.minimum(hi, 1e2))
    for _ in range(max(budget.restarts, 1)):
        theta = 10.0 ** rng.uniform(start_lo, np.maximum(start_hi, start_lo))
        theta = np.clip(theta, lo, hi)
        val, g = _subgradient(M0, Ms, theta)
        evals += 1
        if val < best:
            best, best_theta = val, theta.copy()
        for _ in range(budget.iterations):
            gg = float(g @ g)
            if gg == 0.0:
                break
            step = (val - (best - 1e-3)) / gg
            theta = np.clip(theta - step * g, lo, hi)
            val, g = _subgradient(M0, Ms, theta)
            evals += 1
            if val < best:
                best, best_theta = val, theta.copy()

    if k <= 3 and budget.grid_points > 1:
        axes = [np.clip(np.logspace(-3, 3, budget.grid_points), l, h) for l, h in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        for chunk in np.array_split(grid, max(1, len(grid) // 4096)):
            mats = M0[None] + np.tensordot(chunk, Ms, axes=1)
            vals = np.linalg.eigvalsh(mats)[:, -1]
            evals += len(chunk)
            i = int(np.argmin(vals))
            if vals[i] < best:
                best, best_theta = float(vals[i]), chunk[i].copy()

    theta = best_theta.copy()
    for _ in range(budget.polish_sweeps):
        before = best
        for i in range(k):
            t, val, n_ev = _golden_coordinate(M0, Ms, theta, i, lo[i], hi[i])
            evals += n_ev
            if val < best:
                best, theta[i] = val, t
        if before - best <= 1e-15 * max(1.0, abs(best)):
            break
    return FeasibilityResult(theta, best, evals)


def _golden_coordinate(M0, Ms, theta, i, a, b, iters: int = 90):
    """Golden-section search of a convex one-dimensional slice."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    trial = theta.copy()

    def f(t):
        trial[i] = t
        return _lambda_max(M0, Ms, trial)

    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    for _ in range(iters):
        if b - a <= 1e-15 * max(1.0, abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
        n += 1
    return (c, fc, n) if fc <= fd else (d, fd, n)


# ----------------------------------------------------------- certification

def _search_pencil(envelope, structure, supply, n_weights):
    """Affine pencil of all condition blocks in the unknowns ``theta``.

    With ``supply=None`` the unknowns are the population weights of the
    delta-passive template followed by the S-procedure multipliers;
    otherwise only the multipliers. Returns the block-diagonal constant
    term, the coefficient matrices and a callable mapping ``theta`` to
    ``(supply, omegas)``.
    """
    d = envelope.d if isinstance(envelope, Box) else 0
    k = n_weights + d

    def unpack(theta):
        theta = np.asarray(theta, dtype=float)
        if supply is None:
            sup = _weighted_supply(structure, theta[:n_weights])
        else:
            sup = supply
        return sup, theta[n_weights:]

    def stacked(theta):
        sup, om = unpack(theta)
        mats = [M for _, _, M, _ in condition_blocks(envelope, sup, structure, om)]
        return _block_diag(mats)

    M0 = stacked(np.zeros(k))
    Ms = [stacked(np.eye(k)[i]) - M0 for i in range(k)]
    return M0, Ms, unpack


def _weighted_supply(structure, w):
    """The weighted template; zero weights allowed here only to build the pencil basis."""
    W = np.diag(structure.expand(w))
    Z = np.zeros_like(W)
    return SupplyRate.from_blocks(Z, 0.5 * W, Z)


def _block_diag(mats):
    size = sum(M.shape[0] for M in mats)
    out = np.zeros((size, size))
    i = 0
    for M in mats:
        j = i + M.shape[0]
        out[i:j, i:j] = M
        i = j
    return out


def certify_weighted_contraction(envelope: JacobianEnvelope, structure: PopulationStructure,
                                 weights: Optional[Sequence[float]] = None,
                                 supply: Optional[SupplyRate] = None,
                                 budget: Optional[Budget] = None, margin: float = DEFAULT_MARGIN,
                                 game: Optional[PopulationGame] = None, seed: int = 0,
                                 weight_min: float = 1e-3, omega_min: float = 1e-9,
                                 theta_max: float = 1e3) -> Certificate:
    """Search multipliers that certify the envelope conditions.

    ``weights=None`` and ``supply=None`` search the population weights of
    the delta-passive template together with any S-procedure multipliers;
    fixed ``weights`` (or an explicit ``supply``) leave only the
    multipliers. Cone generators use the semidefinite tolerance, hull
    vertices and the S-procedure matrix the strict ``margin``.

    The verdict is recomputed from the stored multipliers. A failed search
    is ``refuted`` when nothing was searched and the condition itself fails,
    or when ``game`` yields a pointwise witness with fixed multipliers;
    otherwise ``inconclusive``.
    """
    if envelope is None:
        raise ValueError("certification requires a Jacobian envelope")
    if weights is not None and supply is not None:
        raise ValueError("give either fixed weights or a supply rate, not both")
    if weights is not None:
        supply = SupplyRate.weighted(structure, weights)
    search_weights = supply is None
    n_w = structure.rho if search_weights else 0
    d = envelope.d if isinstance(envelope, Box) else 0
    kind = _envelope_kind(envelope)

    if n_w + d == 0:
        cert = _direct_certificate(envelope, supply, structure, margin)
        cert.weights = None if weights is None else np.asarray(weights, dtype=float)
        cert.seed = seed
        if not cert.certified and game is not None:
            found = find_pointwise_witness(game, supply, seed=seed)
            if found is not None:
                cert.witness = found
        return cert

    M0, Ms, unpack = _search_pencil(envelope, structure, supply, n_w)
    lo = np.array([weight_min] * n_w + [omega_min] * d)
    result = feasibility_solve(M0, Ms, lo, theta_max, budget, seed)
    theta = result.theta.copy()
    if search_weights:
        # homogeneous in (w, omega): normalize the largest weight to 1
        theta = theta / theta[:n_w].max()
    sup, omegas = unpack(theta)
    ok, lam, witness = _evaluate(envelope, sup, structure, omegas, margin)
    if np.any(omegas <= 0):
        ok = False
    w_out = theta[:n_w] if search_weights else (
        None if weights is None else np.asarray(weights, dtype=float))
    verdict = "certified" if ok else "inconclusive"
    wit = None
    if not ok and not search_weights and game is not None:
        wit = find_pointwise_witness(game, sup, seed=seed)
        if wit is not None:
            verdict = "refuted"
    log.debug("certification %s: lambda_max=%.3e after %d evaluations", verdict, lam, result.evaluations)
    return Certificate(verdict, w_out, omegas, lam, margin, kind, seed, wit, sup)


# -------------------------------------------------------------- soundness

@dataclass
class SoundnessReport:
    samples: int
    violations: int
    worst: float
    corner_lambda_max: float
    convhull_verdict: str

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.convhull_verdict == "certified"

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "violations": self.violations,
            "worst": self.worst,
            "corner_lambda_max": self.corner_lambda_max,
            "convhull_verdict": self.convhull_verdict,
            "ok": self.ok,
        }


def sproc_soundness_check(certificate: Certificate, box: Box, structure: PopulationStructure,
                          samples: int = 10000, seed: int = 0, tol: float = 1e-8) -> SoundnessReport:
    """Sample ``gamma`` in the box and unit tangent ``zeta``; the incremental form must be <= tol.

    Also enumerates the ``2^d`` corners through the convex-hull check.
    """
    if not certificate.certified:
        raise ValueError("soundness sampling needs a certified box certificate")
    supply = certificate.supply
    rng = np.random.default_rng(seed)
    P = tangent_projection(structure)
    worst, violations = -np.inf, 0
    for _ in range(samples):
        gamma = rng.uniform(0.0, 1.0, box.d)
        zeta = P @ rng.standard_normal(structure.n)
        nz = np.linalg.norm(zeta)
        if nz == 0:
            continue
        zeta /= nz
        val = incremental_form(supply, box.member(gamma), zeta)
        worst = max(worst, val)
        if val > tol:
            violations += 1
    corners = check_convhull(supply, box.corners(), structure)
    return SoundnessReport(samples, violations, float(worst), float(corners.lambda_max),
                           corners.verdict)

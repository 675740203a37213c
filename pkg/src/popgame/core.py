"""Population geometry, tangent-space projections and symmetric eigensolvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# Default numerical tolerances.
SYMMETRY_TOL = 1e-9
NSD_TOL = 1e-12
JACOBI_REL_TOL = 1e-14
MASS_TOL = 1e-9
NONNEG_TOL = 1e-12


@dataclass(frozen=True)
class PopulationStructure:
    """Strategy counts ``n^r`` and masses ``m^r`` of each population."""

    strategy_counts: tuple[int, ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.strategy_counts)
        masses = tuple(float(m) for m in self.masses)
        if len(counts) == 0:
            raise ValueError("at least one population is required")
        if len(counts) != len(masses):
            raise ValueError("strategy_counts and masses differ in length")
        if any(c < 1 for c in counts):
            raise ValueError(f"strategy counts must be >= 1, got {counts}")
        if any(not np.isfinite(m) or m <= 0 for m in masses):
            raise ValueError(f"masses must be positive, got {masses}")
        object.__setattr__(self, "strategy_counts", counts)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def single(cls, n: int, mass: float = 1.0) -> PopulationStructure:
        return cls((n,), (mass,))

    @property
    def rho(self) -> int:
        return len(self.strategy_counts)

    @property
    def n(self) -> int:
        return sum(self.strategy_counts)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for c in self.strategy_counts:
            out.append(slice(start, start + c))
            start += c
        return out

    @property
    def labels(self) -> np.ndarray:
        """Population index of every strategy coordinate."""
        return np.repeat(np.arange(self.rho), self.strategy_counts)

    def block_sums(self, v: np.ndarray) -> np.ndarray:
        v = self._check_vector(v)
        return np.array([v[s].sum() for s in self.slices])

    def expand(self, per_population: Sequence[float]) -> np.ndarray:
        """Repeat one value per population over that population's strategies."""
        vals = np.asarray(per_population, dtype=float)
        if vals.shape != (self.rho,):
            raise ValueError(f"expected {self.rho} values, got shape {vals.shape}")
        return np.repeat(vals, self.strategy_counts)

    def uniform_state(self) -> np.ndarray:
        return self.expand(np.array(self.masses) / np.array(self.strategy_counts))

    def random_state(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a state uniformly from the simplex product."""
        e = rng.exponential(size=self.n)
        x = np.empty(self.n)
        for s, m in zip(self.slices, self.masses):
            x[s] = m * e[s] / e[s].sum()
        return x

    def random_tangent(self, rng: np.random.Generator) -> np.ndarray:
        return tangent_projection(self) @ rng.standard_normal(self.n)

    def check_state(self, x: np.ndarray, tol: float = MASS_TOL) -> np.ndarray:
        x = self._check_vector(x)
        if np.any(x < -NONNEG_TOL):
            raise ValueError(f"state has negative entries: min {x.min():.3e}")
        err = np.abs(self.block_sums(x) - np.array(self.masses))
        if np.any(err > tol):
            raise ValueError(f"population masses violated by up to {err.max():.3e}")
        return x

    def _check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        return v

    def to_json(self) -> dict:
        return {
            "populations": [
                {"n": c, "mass": m} for c, m in zip(self.strategy_counts, self.masses)
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> PopulationStructure:
        pops = data["populations"]
        return cls(tuple(p["n"] for p in pops), tuple(p.get("mass", 1.0) for p in pops))


def tangent_projection(structure: PopulationStructure) -> np.ndarray:
    """Orthogonal projection onto the tangent space of the simplex product.

    Block ``r`` is ``I - 11^T / n^r``.
    """
    P = np.zeros((structure.n, structure.n))
    for s, c in zip(structure.slices, structure.strategy_counts):
        P[s, s] = np.eye(c) - 1.0 / c
    return P


def tangent_basis(structure: PopulationStructure) -> np.ndarray:
    """Orthonormal basis (columns) of the tangent space, Helmert construction.

    The result has ``n - rho`` columns; populations with one strategy
    contribute none.
    """
    cols = []
    for s, c in zip(structure.slices, structure.strategy_counts):
        for k in range(1, c):
            v = np.zeros(structure.n)
            idx = np.arange(s.start, s.start + k + 1)
            v[idx[:k]] = 1.0
            v[idx[k]] = -float(k)
            cols.append(v / np.sqrt(k * (k + 1)))
    if not cols:
        return np.zeros((structure.n, 0))
    return np.column_stack(cols)


def _basis_from_projection(P: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((P + P.T) / 2)
    return vecs[:, vals > 0.5]


def symmetrize(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return (M + M.T) / 2


class EigenDecomposition(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def sym_eig(matrix: np.ndarray, method: str = "lapack") -> EigenDecomposition:
    """Eigen-decompose a symmetric matrix; eigenvalues ascending.

    ``method="jacobi"`` runs the pure cyclic Jacobi solver, ``"lapack"``
    delegates to ``numpy.linalg.eigh``.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    M = symmetrize(M)
    if method == "lapack":
        vals, vecs = np.linalg.eigh(M)
    elif method == "jacobi":
        vals, vecs = jacobi_eigh(M)
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    return EigenDecomposition(vals, vecs)


def jacobi_eigh(M: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a symmetric matrix.

    Sweeps until the off-diagonal Frobenius norm falls below
    ``1e-14 * ||M||_F``.
    """
    A = np.array(M, dtype=float)
    k = A.shape[0]
    V = np.eye(k)
    threshold = JACOBI_REL_TOL * np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= threshold:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    vals = np.diag(A).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], V[:, order]


class TangentCheck(NamedTuple):
    lambda_max: float
    passed: bool
    vector: np.ndarray


def restricted_lambda_max(matrix: np.ndarray, basis: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of ``matrix`` restricted to span(basis), with its vector."""
    if basis.shape[1] == 0:
        return -np.inf, np.zeros(basis.shape[0])
    R = basis.T @ symmetrize(matrix) @ basis
    vals, vecs = sym_eig(R)
    return float(vals[-1]), basis @ vecs[:, -1]


def is_nsd_on_tangent(matrix: np.ndarray, P: np.ndarray, margin: float = 0.0) -> TangentCheck:
    """Test ``zeta^T M zeta <= -margin |zeta|^2`` for all tangent ``zeta``.

    The spectrum is computed on the range of ``P`` (the known per-population
    kernel is deflated), so a strict margin is meaningful. An empty tangent
    space passes with ``lambda_max = -inf``.
    """
    M = np.asarray(matrix, dtype=float)
    P = np.asarray(P, dtype=float)
    if M.shape != P.shape or M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {M.shape}, projection {P.shape}")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    lam, vec = restricted_lambda_max(M, _basis_from_projection(P))
    return TangentCheck(lam, bool(lam <= -margin + NSD_TOL), vec)


@dataclass(frozen=True)
class SupplyRate:
    """Symmetric ``2n x 2n`` supply-rate matrix acting on ``[u; nu]``."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
            raise ValueError(f"supply rate must be 2n x 2n, got shape {M.shape}")
        if np.abs(M - M.T).max(initial=0.0) > 1e-12:
            raise ValueError("supply rate must be symmetric")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def from_blocks(cls, pi11, pi12, pi22) -> SupplyRate:
        pi12 = np.asarray(pi12, dtype=float)
        return cls(np.block([[pi11, pi12], [pi12.T, pi22]]))

    @classmethod
    def delta_passive(cls, n: int) -> SupplyRate:
        Z = np.zeros((n, n))
        return cls.from_blocks(Z, 0.5 * np.eye(n), Z)

    @classmethod
    def weighted(cls, structure: PopulationStructure, weights: Sequence[float]) -> SupplyRate:
        """Composite rate of per-population delta-passive EDMs: Pi12 = W/2."""
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("population weights must be positive")
        W = np.diag(structure.expand(w))
        Z = np.zeros_like(W)
        return cls.from_blocks(Z, 0.5 * W, Z)

    @property
    def n(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def pi11(self) -> np.ndarray:
        return self.matrix[: self.n, : self.n]

    @property
    def pi12(self) -> np.ndarray:
        return self.matrix[: self.n, self.n :]

    @property
    def pi21(self) -> np.ndarray:
        return self.matrix[self.n :, : self.n]

    @property
    def pi22(self) -> np.ndarray:
        return self.matrix[self.n :, self.n :]

    def quadratic(self, u: np.ndarray, v: np.ndarray) -> float:
        s = np.concatenate([u, v])
        return float(s @ self.matrix @ s)

    def incremental_matrix(self, J: np.ndarray) -> np.ndarray:
        """Symmetric part of ``[J; I]^T Pi [J; I]``."""
        J = np.asarray(J, dtype=float)
        M = J.T @ self.pi11 @ J + J.T @ self.pi12 + self.pi21 @ J + self.pi22
        return symmetrize(M)

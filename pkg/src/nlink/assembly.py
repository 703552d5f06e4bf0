"""Block assembly of the link equations and their reduction to an ODE.

The unknowns of one instantaneous solve are the joint forces ``n_1..n_N``,
the velocity ``Xdot`` and the joint moments ``m_1..m_N``. Force balance on
each link gives ``n`` as a suffix sum of link drag forces, which is how
``A11^{-1}`` is applied here: no dense inverse is ever formed. Eliminating
``n`` and ``m`` leaves the square system ``B(X) Xdot = F(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from nlink.model import (
    BoundaryCondition,
    Configuration,
    drag_matrix,
    joint_moments,
    normals,
)

EPS = np.finfo(float).eps
COND_LIMIT = 1.0 / (64.0 * EPS)


class SingularSystem(RuntimeError):
    """The reduced matrix is numerically singular."""


@dataclass(frozen=True)
class KinematicMatrix:
    """Map from ``Xdot`` to link-midpoint velocities, shape (2N, N+2)."""

    entries: np.ndarray

    @property
    def blocks(self) -> np.ndarray:
        """The same matrix viewed as (N, 2, N+2): one 2-row block per link."""
        return self.entries.reshape(-1, 2, self.entries.shape[1])

    def __matmul__(self, W):
        return self.entries @ W


@dataclass(frozen=True)
class Blocks:
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    A23: np.ndarray
    F3: np.ndarray


@dataclass(frozen=True)
class ReducedSystem:
    """``B xdot = rhs`` restricted to the unknowns left free by the BC.

    ``slots`` lists which entries of the full ``X`` the reduced unknowns are.
    ``suffix`` holds the (N, 2, N+2) operator giving ``n_i = suffix[i] @ Xdot``.
    """

    B: np.ndarray
    rhs: np.ndarray
    bc: BoundaryCondition
    cond_estimate: float
    slots: np.ndarray
    suffix: np.ndarray
    lu: tuple | None = None

    def solve(self) -> np.ndarray:
        if self.B.shape[0] == 0:
            return np.zeros(0)
        return scipy.linalg.lu_solve(self.lu, self.rhs)

    def residual(self, xdot) -> float:
        """Relative residual ``|B xdot - rhs| / |rhs|`` (absolute if rhs = 0)."""
        r = np.linalg.norm(self.B @ xdot - self.rhs)
        scale = np.linalg.norm(self.rhs)
        return float(r / scale) if scale > 0 else float(r)


@dataclass(frozen=True)
class MobilityMatrix:
    """Dissipation form ``M = M1 + M2`` with ``Xdot^T M Xdot`` the drag power."""

    M: np.ndarray
    M1: np.ndarray
    M2: np.ndarray

    def restricted(self, slots) -> np.ndarray:
        return self.M[np.ix_(slots, slots)]


def _g_blocks(config: Configuration) -> np.ndarray:
    N, h = config.N, config.h
    nrm = normals(config.theta)  # (N, 2)
    w = np.tril(np.full((N, N), h), -1) + np.diag(np.full(N, 0.5 * h))
    G = np.zeros((N, 2, N + 2))
    G[:, :, :N] = w[:, None, :] * nrm.T[None, :, :]
    G[:, 0, N] = 1.0
    G[:, 1, N + 1] = 1.0
    return G


def assemble_G(config: Configuration) -> KinematicMatrix:
    """Kinematic matrix: ``(G W)_i = (W_{N+1}, W_{N+2}) + h sum_{k<i} e_k^perp W_k
    + (h/2) e_i^perp W_i``."""
    return KinematicMatrix(_g_blocks(config).reshape(2 * config.N, config.N + 2))


def _drag_blocks(config: Configuration) -> np.ndarray:
    p = config.params
    return drag_matrix(config.theta, p.c_par, p.c_perp)


def link_torque_coefficient(config: Configuration) -> float:
    """Rotational drag of one rigid link about its midpoint, ``h^3 c_perp / 12``."""
    return config.h**3 * config.params.c_perp / 12.0


def assemble_blocks(config: Configuration) -> Blocks:
    """The blocks of the full (4N+2)-unknown saddle system, built entry by entry."""
    N, h = config.N, config.h
    nrm = normals(config.theta)
    A11 = np.zeros((2 * N, 2 * N))
    for i in range(N):
        A11[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = -np.eye(2)
        if i + 1 < N:
            A11[2 * i : 2 * i + 2, 2 * i + 2 : 2 * i + 4] = np.eye(2)
    C = _drag_blocks(config)
    G = _g_blocks(config)
    A12 = h * np.einsum("iab,ibk->iak", C, G).reshape(2 * N, N + 2)
    A21 = np.zeros((N + 2, 2 * N))
    for i in range(N):
        A21[i, 2 * i : 2 * i + 2] = 0.5 * h * nrm[i]
        if i + 1 < N:
            A21[i, 2 * i + 2 : 2 * i + 4] = 0.5 * h * nrm[i]
    A21[N : N + 2, 0:2] = np.eye(2)
    A22 = np.zeros((N + 2, N + 2))
    A22[np.arange(N), np.arange(N)] = -link_torque_coefficient(config)
    A23 = np.zeros((N + 2, N))
    for i in range(N):
        A23[i, i] = -1.0
        if i + 1 < N:
            A23[i, i + 1] = 1.0
    F3 = np.concatenate([[0.0], joint_moments(config)])
    return Blocks(A11, A12, A21, A22, A23, F3)


def full_system_solve(config: Configuration):
    """Solve the un-reduced saddle system with a generic dense solver.

    Independent of :func:`reduce`: the blocks are assembled literally and the
    boundary condition is imposed by deleting rows and columns. Returns
    ``(xdot, n, m)`` with ``xdot`` of length N+2 (zeros in constrained slots),
    ``n`` of shape (N+1, 2) and ``m`` of shape (N+1,).
    """
    N = config.N
    b = assemble_blocks(config)
    nu = 4 * N + 2
    K = np.zeros((nu, nu))
    K[: 2 * N, : 2 * N] = b.A11
    K[: 2 * N, 2 * N : 3 * N + 2] = b.A12
    K[2 * N : 3 * N + 2, : 2 * N] = b.A21
    K[2 * N : 3 * N + 2, 2 * N : 3 * N + 2] = b.A22
    K[2 * N : 3 * N + 2, 3 * N + 2 :] = b.A23
    K[3 * N + 2 :, 3 * N + 2 :] = np.eye(N)
    f = np.zeros(nu)
    f[3 * N + 2 :] = b.F3

    keep = np.ones(nu, dtype=bool)  # unknowns
    rows = np.ones(nu, dtype=bool)  # equations
    if config.bc is not BoundaryCondition.FREE:
        keep[3 * N : 3 * N + 2] = False  # r1 velocity
        rows[3 * N : 3 * N + 2] = False  # n_1 = 0
    if config.bc is BoundaryCondition.CLAMPED:
        keep[2 * N] = False  # theta_1 velocity
        rows[3 * N + 2] = False  # m_1 = 0
    sol = np.zeros(nu)
    sol[keep] = np.linalg.solve(K[np.ix_(rows, keep)], f[rows])

    n = np.zeros((N + 1, 2))
    n[:N] = sol[: 2 * N].reshape(N, 2)
    m = np.zeros(N + 1)
    m[:N] = sol[3 * N + 2 :]
    return sol[2 * N : 3 * N + 2], n, m


def _factorize(B: np.ndarray):
    if B.shape[0] == 0:
        return None, 1.0
    lu = scipy.linalg.lu_factor(B, check_finite=True)
    anorm = np.linalg.norm(B, 1)
    rcond, info = lapack.dgecon(lu[0], anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond <= 0.0:
        return lu, np.inf
    return lu, 1.0 / rcond


def reduce(config: Configuration) -> ReducedSystem:
    """Eliminate forces and moments, leaving ``B(X) Xdot = rhs``.

    Raises :class:`SingularSystem` when the 1-norm condition estimate exceeds
    ``1 / (64 eps)``.
    """
    N, h = config.N, config.h
    C = _drag_blocks(config)
    G = _g_blocks(config)
    link_force = h * np.einsum("iab,ibk->iak", C, G)  # (N, 2, N+2)
    suffix = np.cumsum(link_force[::-1], axis=0)[::-1]  # n_i = suffix[i] @ Xdot
    nrm = normals(config.theta)

    B = np.zeros((N + 2, N + 2))
    pair = suffix.copy()
    pair[:-1] += suffix[1:]
    B[:N] = 0.5 * h * np.einsum("ia,iak->ik", nrm, pair)
    B[np.arange(N), np.arange(N)] -= link_torque_coefficient(config)
    B[N:] = suffix[0]

    m = np.zeros(N + 1)
    m[1:N] = joint_moments(config)
    rhs = np.zeros(N + 2)
    rhs[:N] = m[:N] - m[1:]

    # Pinned: the n_1 = 0 rows go with the r1 columns. Clamped: the unknown
    # m_1 enters only the first moment row, which goes with the theta_1 column.
    slots = config.bc.free_slots(N)
    rows = slots
    Bs = B[np.ix_(rows, slots)]
    lu, cond = _factorize(Bs)
    if not cond <= COND_LIMIT:
        raise SingularSystem(
            f"reduce: condition estimate {cond:.3e} exceeds {COND_LIMIT:.3e} "
            f"(N={N}, bc={config.bc.value})"
        )
    return ReducedSystem(
        B=Bs,
        rhs=rhs[rows],
        bc=config.bc,
        cond_estimate=float(cond),
        slots=slots,
        suffix=suffix,
        lu=lu,
    )


def mobility(config: Configuration) -> MobilityMatrix:
    """``M = (h^3/12) c_perp diag(1..1, 0, 0) - h G^T C G``."""
    N, h = config.N, config.h
    C = _drag_blocks(config)
    G = _g_blocks(config)
    M1 = np.zeros((N + 2, N + 2))
    M1[np.arange(N), np.arange(N)] = link_torque_coefficient(config)
    M2 = -h * np.einsum("iak,iab,ibl->kl", G, C, G)
    M2 = 0.5 * (M2 + M2.T)
    return MobilityMatrix(M=M1 + M2, M1=M1, M2=M2)

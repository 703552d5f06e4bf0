"""Arclength interpolants, space-time norms and refinement studies.

Discrete link quantities are turned into functions of arclength ``s`` so that
filaments with different link counts can be compared on ``[0, T] x [0, L]``:

==============  =====================================  ==================
kind            definition                             space
==============  =====================================  ==================
r_linear        vertices ``r_i`` at ``s = (i-1) h``    continuous, affine
n_linear        joint forces ``n_i``                   continuous, affine
m_linear        joint moments ``m_i``                  continuous, affine
theta_linear    ``theta_1`` at 0, ``theta_i`` at ih    continuous, affine
theta_pc        ``theta_i`` on link ``i``              piecewise constant
m_pc            ``m_i`` on link ``i``                  piecewise constant
r_hat           ``r_1 + int_0^s (cos, sin)(theta^h)``  C^1
==============  =====================================  ==================

Spatial integrals are exact per link for the polynomial kinds and use
Gauss-Legendre quadrature otherwise; time integrals use the trapezoid rule on
the trajectory samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from nlink.assembly import link_torque_coefficient
from nlink.dynamics import IntegratorSpec, Trajectory, simulate, vertex_velocities
from nlink.model import (
    BoundaryCondition,
    Configuration,
    InternalLoads,
    PhysParams,
    drag_matrix,
    elastic_energy,
    normals,
    tangents,
    vertices,
)

KINDS = ("r_linear", "n_linear", "m_linear", "theta_pc", "theta_linear", "m_pc", "r_hat")
LINEAR_KINDS = ("r_linear", "n_linear", "m_linear", "theta_linear")
PC_KINDS = ("theta_pc", "m_pc")
NORMS = ("L2_QT", "L2_H1", "L2_Linf")
TEST_FAMILY_VERSION = 1


class InsufficientSampling(ValueError):
    """Too few trajectory samples for the time quadrature."""


def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _expint(a, delta, u):
    """``int_0^u exp(i (a + delta v)) dv`` for arrays, stable as delta -> 0."""
    z = 1j * delta * u
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    phi = np.where(small, 1 + z / 2 + z * z / 6 + z**3 / 24, np.expm1(safe) / safe)
    return np.exp(1j * a) * u * phi


@dataclass(frozen=True)
class Interpolant:
    """Arclength reconstruction of one discrete quantity.

    ``values`` are nodal values (N+1, ...) for the continuous kinds and cell
    values (N, ...) for the piecewise-constant ones; ``theta`` is kept for
    ``r_hat``.
    """

    kind: str
    L: float
    N: int
    values: np.ndarray
    theta: np.ndarray | None = None

    @property
    def h(self) -> float:
        return self.L / self.N

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.floor(s / self.h).astype(int), 0, self.N - 1)
        u = s / self.h - i
        return i, u

    def __call__(self, s):
        i, u = self._locate(s)
        v = self.values
        if self.kind in PC_KINDS:
            return v[i]
        if self.kind in LINEAR_KINDS:
            if v.ndim == 2:
                u = u[..., None]
            return v[i] * (1 - u) + v[i + 1] * u
        # r_hat: nodal values stored in values, integrate inside the cell
        th = self.theta_nodes
        a, b = th[i], th[i + 1]
        z = _expint(a, b - a, u) * self.h
        return v[i] + np.stack([z.real, z.imag], axis=-1)

    def derivative(self, s):
        """Derivative in ``s`` (cell interiors for the affine kinds)."""
        i, u = self._locate(s)
        v = self.values
        if self.kind in PC_KINDS:
            return np.zeros_like(v[i])
        if self.kind in LINEAR_KINDS:
            return (v[i + 1] - v[i]) / self.h
        th = self.theta_nodes
        return tangents(th[i] * (1 - u) + th[i + 1] * u)

    @property
    def theta_nodes(self) -> np.ndarray:
        return np.concatenate([[self.theta[0]], self.theta])

    @property
    def cell_slopes(self) -> np.ndarray:
        """``(v_{i+1} - v_i) / h`` per cell for the affine kinds."""
        return np.diff(self.values, axis=0) / self.h


def _theta_nodes(theta):
    return np.concatenate([[theta[0]], theta])


def build_interpolant(kind: str, config: Configuration, loads: InternalLoads | None = None) -> Interpolant:
    """Build one of the interpolants listed in the module docstring."""
    if kind not in KINDS:
        raise ValueError(f"unknown interpolant kind {kind!r}; expected one of {KINDS}")
    L, N = config.params.L, config.N
    if kind in ("n_linear", "m_linear", "m_pc") and loads is None:
        raise ValueError(f"{kind} needs internal loads")
    if kind == "r_linear":
        values = vertices(config)
    elif kind == "n_linear":
        values = np.asarray(loads.n)
    elif kind == "m_linear":
        values = np.asarray(loads.m)
    elif kind == "m_pc":
        values = np.asarray(loads.m)[:N]
    elif kind == "theta_pc":
        values = np.asarray(config.theta)
    elif kind == "theta_linear":
        values = _theta_nodes(config.theta)
    else:
        th = _theta_nodes(config.theta)
        steps = _expint(th[:-1], np.diff(th), 1.0) * config.h
        values = np.empty((N + 1, 2))
        values[0] = config.r1
        values[1:] = config.r1 + np.cumsum(np.stack([steps.real, steps.imag], axis=-1), axis=0)
    return Interpolant(kind=kind, L=L, N=N, values=np.array(values, dtype=float),
                       theta=np.array(config.theta))


# -- per-snapshot spatial integrals -------------------------------------------------


def _sq(a):
    a = np.asarray(a)
    return a * a if a.ndim <= 1 else np.sum(a * a, axis=-1)


def _dot(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a * b if a.ndim <= 1 else np.sum(a * b, axis=-1)


def l2_squared_linear(nodes, h) -> float:
    """Exact ``int |v|^2 ds`` for the continuous affine interpolant of ``nodes``."""
    a, b = nodes[:-1], nodes[1:]
    return float(h * np.sum(_sq(a) + _dot(a, b) + _sq(b)) / 3.0)


def l2_squared_pc(cells, h) -> float:
    return float(h * np.sum(_sq(cells)))


def _quad_points(N, h, order=6):
    x, w = _gauss(order)
    s = (np.arange(N)[:, None] + x[None, :]) * h
    return s, w * h


def _space_sq(interp: Interpolant, norm: str) -> float:
    """Squared spatial norm of one interpolant (value part only)."""
    h, N = interp.h, interp.N
    v = interp.values
    if norm == "L2_Linf":
        if interp.kind == "r_hat":
            s, _ = _quad_points(N, h, 8)
            vals = interp(np.concatenate([s.ravel(), [interp.L]]))
            return float(np.max(_sq(vals)))
        return float(np.max(_sq(v)))
    if interp.kind in LINEAR_KINDS:
        return l2_squared_linear(v, h)
    if interp.kind in PC_KINDS:
        return l2_squared_pc(v, h)
    s, w = _quad_points(N, h, 8)
    return float(np.sum(w * _sq(interp(s))))


def _deriv_interpolant(interp: Interpolant) -> Interpolant:
    """The s-derivative as a piecewise-constant interpolant."""
    if interp.kind in PC_KINDS:
        raise ValueError(f"{interp.kind} is piecewise constant: its s-derivative is not in L2")
    if interp.kind == "r_hat":
        raise ValueError("use kind='theta_linear' for the s-derivative of r_hat's angle")
    return Interpolant(kind="m_pc", L=interp.L, N=interp.N, values=interp.cell_slopes)


def space_norm(interp: Interpolant, norm: str = "L2", derivative: bool = False) -> float:
    """Norm on ``(0, L)`` of one snapshot interpolant: ``L2``, ``H1`` or ``Linf``."""
    key = {"L2": "L2_QT", "H1": "L2_H1", "Linf": "L2_Linf"}.get(norm)
    if key is None:
        raise ValueError("norm must be 'L2', 'H1' or 'Linf'")
    if derivative:
        if interp.kind == "r_hat":
            return math.sqrt(interp.L) if norm == "L2" else 1.0
        interp = _deriv_interpolant(interp)
    q = _space_sq(interp, key)
    if key == "L2_H1":
        q += _space_sq(_deriv_interpolant(interp), "L2_QT")
    return math.sqrt(q)


def _time_derivative_values(traj: Trajectory, kind: str) -> list:
    """Per-sample nodal/cell values of the time derivative of ``kind``."""
    N = traj.N
    E, h = traj.params.E, traj.h
    if kind == "r_linear":
        return list(traj.vertex_velocities())
    thd = traj.Xdot[:, :N]
    if kind == "theta_pc":
        return list(thd)
    if kind == "theta_linear":
        return [_theta_nodes(row) for row in thd]
    if kind in ("m_linear", "m_pc"):
        md = np.zeros((len(traj), N + 1))
        md[:, 1:N] = E / h * np.diff(thd, axis=1)
        if traj.bc is BoundaryCondition.CLAMPED and len(traj) > 1:
            md[:, 0] = np.gradient(traj.m[:, 0], traj.times)
        return list(md if kind == "m_linear" else md[:, :N])
    if kind == "n_linear":
        if len(traj) < 2:
            raise InsufficientSampling("time derivative of n needs at least 2 samples")
        return list(np.gradient(traj.n, traj.times, axis=0))
    raise ValueError(f"time derivative not available for {kind}")


def snapshot_interpolants(traj: Trajectory, kind: str) -> list:
    return [build_interpolant(kind, traj.config(k), traj.loads(k)) for k in range(len(traj))]


def time_integral(times, values) -> float:
    return float(np.trapezoid(np.asarray(values, dtype=float), np.asarray(times, dtype=float)))


def qt_norm(traj: Trajectory, kind: str, norm: str = "L2_QT", derivative: str | None = None) -> float:
    """Space-time norm of an interpolant (or of its ``s``/``t`` derivative).

    ``norm`` is one of ``L2_QT`` (``L^2`` on ``[0,T] x [0,L]``), ``L2_H1``
    (``L^2`` in time of the ``H^1(0,L)`` norm) or ``L2_Linf``.
    """
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}")
    if len(traj) < 3:
        raise InsufficientSampling(f"need at least 3 samples, got {len(traj)}")
    if derivative not in (None, "s", "t"):
        raise ValueError("derivative must be None, 's' or 't'")
    interps = snapshot_interpolants(traj, kind)
    if derivative == "t":
        vals = _time_derivative_values(traj, kind)
        interps = [Interpolant(kind=it.kind, L=it.L, N=it.N, values=np.asarray(v), theta=it.theta)
                   for it, v in zip(interps, vals)]
    elif derivative == "s":
        if kind == "r_hat":
            q = np.full(len(traj), traj.params.L)
            if norm == "L2_H1":
                raise ValueError("second s-derivative of r_hat: use theta_linear")
            if norm == "L2_Linf":
                q = np.ones(len(traj))
            return math.sqrt(time_integral(traj.times, q))
        interps = [_deriv_interpolant(it) for it in interps]
    q = np.array([_space_sq(it, norm) for it in interps])
    if norm == "L2_H1":
        q = q + np.array([_space_sq(_deriv_interpolant(it), "L2_QT") for it in interps])
    return math.sqrt(max(time_integral(traj.times, q), 0.0))


def torque_term_magnitude(traj: Trajectory) -> float:
    """``|| (h^2/12) c_perp d/dt theta_bar ||`` over ``[0,T] x [0,L]``."""
    coef = traj.h**2 * traj.params.c_perp / 12.0
    return coef * qt_norm(traj, "theta_pc", "L2_QT", derivative="t")


# -- initial data ---------------------------------------------------------------------


def init_from_curve(theta0, r0_start=(0.0, 0.0), N: int = 10, params: PhysParams | None = None,
                    bc=BoundaryCondition.FREE, time: float = 0.0, order: int = 5) -> Configuration:
    """Link angles as cell averages of the angle profile ``theta0(s)``.

    Averages use ``order``-point Gauss-Legendre quadrature per link.
    """
    params = params or PhysParams()
    h = params.L / N
    s, w = _quad_points(N, h, order)
    vals = np.asarray(np.vectorize(theta0, otypes=[float])(s), dtype=float)
    theta = (vals * w).sum(axis=1) / h
    return Configuration(theta=theta, r1=r0_start, params=params, bc=bc, time=time)


def reference_curve(theta0, s, r0_start=(0.0, 0.0), order: int = 12):
    """Continuous centreline ``r0(s) = r0_start + int_0^s (cos, sin)(theta0)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x, w = _gauss(order)
    pts = s[:, None] * x[None, :]
    th = np.vectorize(theta0, otypes=[float])(pts)
    out = np.empty(s.shape + (2,))
    out[..., 0] = (np.cos(th) * w).sum(axis=1) * s
    out[..., 1] = (np.sin(th) * w).sum(axis=1) * s
    return np.asarray(r0_start, dtype=float) + out


def initial_data_error(theta0, config: Configuration, r0_start=None, order: int = 8) -> float:
    """``|| r^h(0, .) - r0 ||_{H^1(0,L)}`` by per-link Gauss-Legendre quadrature."""
    r0_start = config.r1 if r0_start is None else np.asarray(r0_start, dtype=float)
    N, h = config.N, config.h
    s, w = _quad_points(N, h, order)
    interp = build_interpolant("r_linear", config)
    # r0 at link starts, then the partial integral inside each link
    starts = reference_curve(theta0, np.arange(N) * h, r0_start, order=4 * order)
    x, wx = _gauss(order)
    local = (s - np.arange(N)[:, None] * h)  # offset within the link
    inner = (np.arange(N)[:, None, None] * h + local[:, :, None] * x[None, None, :])
    th_in = np.vectorize(theta0, otypes=[float])(inner)
    r_ref = starts[:, None, :] + np.stack(
        [(np.cos(th_in) * wx).sum(-1) * local, (np.sin(th_in) * wx).sum(-1) * local], axis=-1
    )
    diff = interp(s) - r_ref
    th_q = np.vectorize(theta0, otypes=[float])(s)
    ddiff = tangents(config.theta)[:, None, :] - tangents(th_q)
    sq = (w * (_sq(diff) + _sq(ddiff))).sum()
    return float(math.sqrt(sq))


def initial_energy_bound(theta0_s_sup: float, params: PhysParams) -> float:
    """``(E/2) L ||theta0_s||_inf^2``, a link-count-independent bound on the initial energy."""
    return 0.5 * params.E * params.L * theta0_s_sup**2


# -- refinement study -----------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Self-convergence errors against a fine reference run.

    Convergence is only known up to subsequences, so monotone decrease here
    does not certify a unique limit.
    """

    Ns: list
    N_ref: int
    hs: np.ndarray
    errors: dict
    orders: dict
    monotone: dict
    threshold: float = 1.0
    trajectories: dict = field(default_factory=dict, repr=False)
    notes: str = ("self-convergence against a finite reference; the limit is known only "
                  "up to subsequences, so a unique limit is not certified")

    @property
    def passed(self) -> bool:
        return bool(self.monotone.get("r") and self.orders.get("r", -np.inf) >= self.threshold)

    def rows(self):
        for k, N in enumerate(self.Ns):
            yield {
                "N": N,
                "h": float(self.hs[k]),
                "err_r_L2QT": float(self.errors["r"][k]),
                "err_m_L2QT": float(self.errors["m"][k]),
                "err_n_L2QT": float(self.errors["n"][k]),
            }

    def to_dict(self) -> dict:
        return {
            "Ns": list(self.Ns),
            "N_ref": self.N_ref,
            "h": [float(x) for x in self.hs],
            "errors": {k: [float(x) for x in v] for k, v in self.errors.items()},
            "orders": {k: (None if v is None else float(v)) for k, v in self.orders.items()},
            "monotone": {k: bool(v) for k, v in self.monotone.items()},
            "threshold": self.threshold,
            "passed": self.passed,
            "notes": self.notes,
        }


def _nodal_on_grid(values, N, M):
    """Values of the affine interpolant of ``values`` (N+1 nodes) at M+1 uniform nodes."""
    s = np.linspace(0.0, 1.0, M + 1) * N
    i = np.clip(np.floor(s).astype(int), 0, N - 1)
    u = (s - i)
    if values.ndim == 2:
        u = u[:, None]
    return values[i] * (1 - u) + values[i + 1] * u


def field_error(traj: Trajectory, ref: Trajectory, field_name: str, grid_cells: int) -> float:
    """``L^2([0,T] x [0,L])`` distance between the affine interpolants of two runs.

    Both are evaluated on a common grid of ``grid_cells`` links; when both link
    counts divide it the difference is affine per grid cell and the spatial
    integral is exact.
    """
    tol = 1e-12 * max(1.0, abs(ref.times[-1]))
    if traj.times.shape != ref.times.shape or not np.allclose(traj.times, ref.times, rtol=0, atol=tol):
        raise ValueError("trajectories must share sample times")
    h = traj.params.L / grid_cells
    q = np.empty(len(traj))
    if field_name == "r":
        A, B = traj.vertices(), ref.vertices()
    elif field_name == "n":
        A, B = traj.n, ref.n
    elif field_name == "m":
        A, B = traj.m, ref.m
    else:
        raise ValueError(f"unknown field {field_name!r}")
    for k in range(len(traj)):
        d = _nodal_on_grid(A[k], traj.N, grid_cells) - _nodal_on_grid(B[k], ref.N, grid_cells)
        q[k] = l2_squared_linear(d, h)
    return math.sqrt(max(time_integral(traj.times, q), 0.0))


def fit_order(hs, errs):
    """Least-squares slope of ``log err`` against ``log h`` (``None`` if any error is 0)."""
    hs, errs = np.asarray(hs, float), np.asarray(errs, float)
    if np.any(errs <= 0) or hs.size < 2:
        return None
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _strictly_decreasing(x):
    x = np.asarray(x, dtype=float)
    return bool(np.all(np.diff(x) < 0))


def _run(args):
    theta0, params, spec, N, bc, r0 = args
    return N, simulate(init_from_curve(theta0, r0, N, params, bc), spec)


def run_family(theta0, params, spec, Ns, bc=BoundaryCondition.FREE, r0_start=(0.0, 0.0),
               workers: int = 1) -> dict:
    """Simulate the same initial profile at several link counts."""
    jobs = [(theta0, params, spec, int(N), BoundaryCondition.parse(bc), tuple(r0_start)) for N in Ns]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(_run, jobs))
    return dict(map(_run, jobs))


def self_convergence(theta0, params: PhysParams, spec: IntegratorSpec, Ns, N_ref: int,
                     bc=BoundaryCondition.FREE, r0_start=(0.0, 0.0), workers: int = 1,
                     grid_factor: int = 4, threshold: float = 1.0,
                     keep_trajectories: bool = False) -> ConvergenceReport:
    """Errors of the r, m and n interpolants against a reference run.

    ``theta0`` must be picklable (a module-level function or a
    ``functools.partial``) when ``workers > 1``.
    """
    Ns = [int(N) for N in Ns]
    if len(Ns) < 1 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError(f"Ns must be strictly increasing, got {Ns}")
    if N_ref < 4 * max(Ns):
        raise ValueError(f"N_ref = {N_ref} must be at least 4 * max(Ns) = {4 * max(Ns)}")
    trajs = run_family(theta0, params, spec, Ns + [int(N_ref)], bc, r0_start, workers)
    ref = trajs[int(N_ref)]
    grid = grid_factor * int(N_ref)
    errors = {name: np.array([field_error(trajs[N], ref, name, grid) for N in Ns])
              for name in ("r", "m", "n")}
    hs = params.L / np.array(Ns, dtype=float)
    orders = {name: _largest_monotone_order(hs, e) for name, e in errors.items()}
    monotone = {name: _strictly_decreasing(e) for name, e in errors.items()}
    return ConvergenceReport(
        Ns=Ns, N_ref=int(N_ref), hs=hs, errors=errors, orders=orders, monotone=monotone,
        threshold=threshold, trajectories=trajs if keep_trajectories else {},
    )


def _largest_monotone_order(hs, errs):
    """Fitted order over the longest run of consecutive strictly decreasing errors."""
    errs = np.asarray(errs, dtype=float)
    if errs.size < 2 or np.any(errs <= 0):
        return None
    best = (0, 1)
    start = 0
    for k in range(1, errs.size + 1):
        if k == errs.size or errs[k] >= errs[k - 1]:
            if k - start > best[1] - best[0]:
                best = (start, k)
            start = k
    a, b = best
    if b - a < 2:
        return None
    return fit_order(hs[a:b], errs[a:b])


# -- weak-form residuals --------------------------------------------------------------


def default_test_family(L: float, t0: float, T: float):
    """Fixed family of separable test functions ``phi(s) psi(t)``, compactly supported."""
    span = T - t0

    def bump_s(s):
        return (s * (L - s)) ** 2 / (L / 2) ** 4

    def bump_t(t):
        return ((t - t0) * (T - t)) ** 2 / (span / 2) ** 4

    return [
        (bump_s, bump_t),
        (lambda s: bump_s(s) * np.sin(2 * np.pi * s / L), bump_t),
        (lambda s: bump_s(s) * np.cos(3 * np.pi * s / L),
         lambda t: bump_t(t) * np.cos(2 * np.pi * (t - t0) / span)),
    ]


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _snapshot_residuals(traj: Trajectory, k: int, phi, cell_averaged: bool, order: int = 8):
    c = traj.config(k)
    N, h, p = c.N, c.h, c.params
    s, w = _quad_points(N, h, order)
    u = s / h - np.arange(N)[:, None]
    phi_q = np.asarray(phi(s), dtype=float)
    phibar = (phi_q * w).sum(axis=1) / h
    weight = np.broadcast_to(phibar[:, None], s.shape) if cell_averaged else phi_q

    vd = vertex_velocities(c, traj.Xdot[k])
    rdot_q = vd[:-1, None, :] * (1 - u[..., None]) + vd[1:, None, :] * u[..., None]
    C = drag_matrix(c.theta, p.c_par, p.c_perp)
    n = traj.n[k]
    m = traj.m[k]
    ns = (n[1:] - n[:-1]) / h
    force = np.einsum("iab,iqb->iqa", C, rdot_q) + ns[:, None, :]
    r1 = np.einsum("iq,iqa->a", w * weight, force)

    n_q = n[:-1, None, :] * (1 - u[..., None]) + n[1:, None, :] * u[..., None]
    e = tangents(c.theta)
    ms = (m[1:] - m[:-1]) / h
    cross = _cross(np.broadcast_to(e[:, None, :], n_q.shape), n_q)
    moment = ms[:, None] + cross
    if cell_averaged:
        moment = moment - (h**2 / 12.0) * p.c_perp * traj.Xdot[k, :N][:, None]
    r2 = float((w * weight * moment).sum())

    th_s = np.concatenate([[0.0], np.diff(c.theta)]) / h  # theta_linear slope per link
    if cell_averaged:
        m_field = np.broadcast_to(m[:N, None], s.shape)
    else:
        m_field = m[:-1, None] * (1 - u) + m[1:, None] * u
    const = m_field - p.E * th_s[:, None]
    r3 = float((w * weight * const).sum())
    return r1, r2, r3


def weak_form_residual(traj: Trajectory, test_fns=None, cell_averaged: bool = False) -> dict:
    """Residuals of the continuous force, moment and constitutive equations.

    The interpolants replace ``(r, n, m)``; the curvature term uses
    ``E d(theta^h)/ds``, which equals ``E (r_hat_s x r_hat_ss)``. With
    ``cell_averaged=True`` every test function is replaced by its link
    averages and the extra link-torque term is included, which turns the
    residuals into the discrete equations themselves, so they vanish up to
    rounding. Returns the largest absolute residual over the family for each
    of ``force``, ``moment`` and ``constitutive``.
    """
    if len(traj) < 3:
        raise InsufficientSampling(f"need at least 3 samples, got {len(traj)}")
    if test_fns is None:
        test_fns = default_test_family(traj.params.L, traj.times[0], traj.times[-1])
    out = {"force": 0.0, "moment": 0.0, "constitutive": 0.0}
    for phi, psi in test_fns:
        per = [_snapshot_residuals(traj, k, phi, cell_averaged) for k in range(len(traj))]
        psi_t = np.asarray(psi(traj.times), dtype=float)
        f = np.array([p[0] for p in per])
        r1 = np.array([time_integral(traj.times, psi_t * f[:, j]) for j in range(2)])
        r2 = time_integral(traj.times, psi_t * np.array([p[1] for p in per]))
        r3 = time_integral(traj.times, psi_t * np.array([p[2] for p in per]))
        out["force"] = max(out["force"], float(np.linalg.norm(r1)))
        out["moment"] = max(out["moment"], abs(r2))
        out["constitutive"] = max(out["constitutive"], abs(r3))
    return out

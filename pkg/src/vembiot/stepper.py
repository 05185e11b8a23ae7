"""
Backward Euler time stepping for the three-field system.

The free-free block of the symmetric operator is factorized once per time
step size and reused. Dirichlet dofs are eliminated symmetrically.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import BlockSystem
from .dofspace import BoundaryData, dirichlet_values, interpolate_into_Qh, interpolate_into_Vh, project_into_Zh


class SolverError(RuntimeError):
    """Singular factorization or non-convergent iterative solve."""


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.n_steps < 1 or not self.t_final > self.t0:
            raise ValueError("need n_steps >= 1 and t_final > t0")

    @property
    def dt(self) -> float:
        return (self.t_final - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class FieldState:
    u: np.ndarray
    p: np.ndarray
    psi: np.ndarray
    t: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.p, self.psi])


@dataclass
class Problem:
    """Load data for a run: body force, fluid source and boundary data."""

    body: Callable | None = None
    source: Callable | None = None
    boundary: BoundaryData | None = None

    def __post_init__(self):
        if self.boundary is None:
            self.boundary = BoundaryData()


def initialize(system: BlockSystem, u0=None, p0=None, psi0=None, t0: float = 0.0) -> FieldState:
    """Interpolate initial fields.

    If ``psi0`` is omitted it is made consistent with ``u0`` and ``p0`` by
    solving the constraint row ``B1 u + B2 p - A3 psi = 0``.
    """
    dm = system.dofmap
    mesh = dm.mesh
    u = interpolate_into_Vh(u0, mesh) if u0 is not None else np.zeros(dm.n_u)
    p = interpolate_into_Qh(p0, mesh) if p0 is not None else np.zeros(dm.n_p)
    if psi0 is not None:
        psi = project_into_Zh(psi0, mesh, [pk.quad for pk in system.packs])
    else:
        psi = (system.b1 @ u + system.b2 @ p) / system.a3.diagonal()
    return FieldState(u, p, psi, t0)


class Stepper:
    """Solve one backward Euler step at a fixed ``dt``.

    Parameters
    ----------
    system : BlockSystem
    dt : float
    problem : Problem
    solver : {"direct", "minres"}
    """

    def __init__(self, system: BlockSystem, dt: float, problem: Problem | None = None, solver: str = "direct",
                 rtol: float = 1e-12):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if solver not in ("direct", "minres"):
            raise ValueError(f"unknown solver {solver!r}")
        self.system = system
        self.dt = float(dt)
        self.problem = problem or Problem()
        self.solver = solver
        self.rtol = rtol
        dm = system.dofmap
        K = system.matrix(self.dt).tocsc()
        self.free = np.flatnonzero(~dm.fixed)
        self.fixed = np.flatnonzero(dm.fixed)
        self.K = K
        self.K_ff = K[self.free][:, self.free].tocsc()
        self.K_fc = K[self.free][:, self.fixed].tocsc()
        self._lu = None
        # SPD Jacobi preconditioner from the absolute diagonal, for MINRES
        d = np.abs(self.K_ff.diagonal())
        self._precond = spla.LinearOperator(self.K_ff.shape, matvec=lambda v: v / np.where(d > 0, d, 1.0))
        if solver == "direct":
            try:
                self._lu = spla.splu(self.K_ff)
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
            d = np.abs(self._lu.U.diagonal())
            if d.size and (not np.all(np.isfinite(d)) or d.min() <= 1e-14 * d.max()):
                raise SolverError("system matrix is numerically singular; check boundary conditions")

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x, info = spla.minres(self.K_ff, rhs, M=self._precond, rtol=self.rtol, maxiter=20 * len(rhs))
            if info != 0:
                raise SolverError(f"minres did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SolverError("solution contains non-finite values")
        return x

    def rhs(self, prev: FieldState, t: float) -> np.ndarray:
        s = self.system
        pr = self.problem
        f_u, f_p = s.loads(t, pr.body, pr.source, pr.boundary)
        r_p = self.dt * f_p + s.a2t @ prev.p - s.b2.T @ prev.psi
        r = np.concatenate([f_u, -r_p, np.zeros(s.dofmap.n_z)])
        if not np.all(np.isfinite(r)):
            raise ValueError("load data produced non-finite values")
        return r

    def step(self, prev: FieldState, t: float | None = None) -> FieldState:
        t = prev.t + self.dt if t is None else t
        dm = self.system.dofmap
        r = self.rhs(prev, t)
        u_c, p_c = dirichlet_values(dm, self.problem.boundary, t)
        x = np.concatenate([u_c, p_c, np.zeros(dm.n_z)])
        x_c = x[self.fixed]
        x[self.free] = self._solve(r[self.free] - self.K_fc @ x_c)
        o = dm.offsets
        return FieldState(x[: o[1]], x[o[1] : o[2]], x[o[2] :], t)

    def residual(self, prev: FieldState, new: FieldState) -> float:
        """Relative residual of the free rows."""
        r = self.rhs(prev, new.t)
        res = (self.K @ new.vector() - r)[self.free]
        return float(np.linalg.norm(res) / max(np.linalg.norm(r[self.free]), 1e-300))


def solve_steady(system: BlockSystem, problem: Problem, solver: str = "direct") -> FieldState:
    """Stationary three-field problem: one step with ``dt = 1`` from a zero state."""
    dm = system.dofmap
    zero = FieldState(np.zeros(dm.n_u), np.zeros(dm.n_p), np.zeros(dm.n_z), 0.0)
    return Stepper(system, 1.0, problem, solver).step(zero, t=0.0)


Observer = Callable[[FieldState], None]


def run(system: BlockSystem, grid: TimeGrid, problem: Problem, initial: FieldState | None = None,
        observers: Iterable[Observer] = (), solver: str = "direct", keep_history: bool = True) -> list[FieldState]:
    """March from ``grid.t0`` to ``grid.t_final``.

    Observers are called with the initial state and after every step.
    """
    stepper = Stepper(system, grid.dt, problem, solver)
    state = initial if initial is not None else initialize(system, t0=grid.t0)
    state = replace(state, t=grid.t0)
    observers = list(observers)
    for ob in observers:
        ob(state)
    history = [state]
    for t in grid.times[1:]:
        state = stepper.step(state, t)
        for ob in observers:
            ob(state)
        if keep_history:
            history.append(state)
    return history if keep_history else [state]


def discrete_energy(system: BlockSystem, state: FieldState) -> float:
    """``1/2 a1(u,u) + 1/2 (a2~(p,p) + a3(psi,psi) - 2 b2(p,psi))``.

    Non-increasing along backward Euler steps without loads.
    """
    s = system
    u, p, z = state.u, state.p, state.psi
    return float(0.5 * u @ (s.a1 @ u) + 0.5 * (p @ (s.a2t @ p) + z @ (s.a3 @ z) - 2 * z @ (s.b2 @ p)))

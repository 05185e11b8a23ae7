"""
Manufactured solutions, discrete error norms and convergence studies.

Exact fields are written symbolically; loads, sources, tractions and fluxes
are derived by exact symbolic differentiation and compiled to numpy.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import sympy as sym

from .assembly import BlockSystem, PhysicalParams, assemble_system
from .dofspace import DIRICHLET, GAMMA, SIGMA, BoundaryCondition, BoundaryData, build_dofmap
from .mesh import PolyMesh, footing_tagger, generate, side_tagger
from .projectors import build_packs, vector_gradients
from .stepper import FieldState, Problem, TimeGrid, initialize, run, solve_steady

_x, _y, _t = sym.symbols("x y t", real=True)


def _compile(expr) -> Callable:
    """``f(pts, t) -> (npts,)`` for a scalar sympy expression."""
    f = sym.lambdify((_x, _y, _t), expr, modules="numpy")

    def g(pts, t=0.0):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(np.asarray(f(pts[:, 0], pts[:, 1], t), dtype=float), (len(pts),)).copy()

    return g


def _compile_vec(exprs) -> Callable:
    fs = [_compile(e) for e in exprs]

    def g(pts, t=0.0):
        return np.column_stack([f(pts, t) for f in fs])

    return g


def _compile_mat(M) -> Callable:
    fs = [[_compile(M[i, j]) for j in range(2)] for i in range(2)]

    def g(pts, t=0.0):
        return np.stack([np.column_stack([fs[i][j](pts, t) for j in range(2)]) for i in range(2)], axis=1)

    return g


@dataclass(eq=False)
class ManufacturedCase:
    """Closed-form ``u, p`` with induced ``psi`` and data.

    ``psi = alpha p - lam div u``; the body force, source, tractions and fluxes
    follow from the strong three-field equations. For a steady case the time
    derivatives are replaced by the fields themselves, i.e. the stationary
    problem matching one backward Euler step with unit step from rest.
    """

    name: str
    params: PhysicalParams
    bc: dict
    transient: bool
    u_expr: tuple
    p_expr: object
    t_final: float = 1.0
    family: str = "tri"
    symbols: dict = field(default_factory=dict)

    def __post_init__(self):
        par = self.params
        if callable(par.kappa) or np.ndim(par.kappa) != 0:
            raise ValueError("manufactured cases use a scalar kappa")
        kap = sym.nsimplify(par.kappa)
        lam, mu, alpha, c0, eta, rho = (sym.nsimplify(v) for v in (par.lam, par.mu, par.alpha, par.c0, par.eta, par.rho))
        u = sym.Matrix(self.u_expr)
        p = self.p_expr
        grad_u = u.jacobian([_x, _y])
        div_u = grad_u.trace()
        psi = alpha * p - lam * div_u
        stress = mu * (grad_u + grad_u.T) - psi * sym.eye(2)
        body = -sym.Matrix([sym.diff(stress[i, 0], _x) + sym.diff(stress[i, 1], _y) for i in range(2)]) / rho
        grad_p = sym.Matrix([sym.diff(p, _x), sym.diff(p, _y)])
        lap = sym.diff(kap * grad_p[0], _x) + sym.diff(kap * grad_p[1], _y)
        dp, dpsi = (sym.diff(p, _t), sym.diff(psi, _t)) if self.transient else (p, psi)
        source = (c0 + alpha**2 / lam) * dp - alpha / lam * dpsi - lap / eta
        self.symbols = dict(u=u, p=p, psi=psi, grad_u=grad_u, grad_p=grad_p, stress=stress, body=body, source=source)
        self.u = _compile_vec(u)
        self.grad_u = _compile_mat(grad_u)  # [component, direction]
        self.p = _compile(p)
        self.grad_p = _compile_vec(grad_p)
        self.psi = _compile(psi)
        self.div_u = _compile(div_u)
        self.body = _compile_vec(body)
        self.source = _compile(source)
        self._stress = _compile_mat(stress)
        self._flux = _compile_vec(kap / eta * grad_p)

    def traction(self, pts, t, n):
        return np.einsum("qij,j->qi", self._stress(pts, t), n)

    def flux(self, pts, t, n):
        return self._flux(pts, t) @ n

    def boundary_data(self) -> BoundaryData:
        trac = {tag: self.traction for tag, bc in self.bc.items() if bc.u == "traction"}
        flux = {tag: self.flux for tag, bc in self.bc.items() if bc.p == "flux"}
        return BoundaryData(u=self.u, p=self.p, traction=trac, flux=flux)

    def problem(self) -> Problem:
        return Problem(self.body, self.source, self.boundary_data())

    def mesh(self, n: int, **kw) -> PolyMesh:
        return generate(self.family, n, **kw)


@dataclass(eq=False)
class Scenario:
    """Non-manufactured run: parameters, tags, loads and time grid."""

    name: str
    params: PhysicalParams
    bc: dict
    boundary: BoundaryData
    grid: TimeGrid
    family: str = "quad"
    n: int = 16
    distortion: float = 0.3
    seed: int = 0
    tagger: Callable = footing_tagger

    def mesh(self, n: int | None = None, **kw) -> PolyMesh:
        kw.setdefault("distortion", self.distortion)
        kw.setdefault("seed", self.seed)
        return generate(self.family, self.n if n is None else n, tagger=self.tagger, **kw)

    def problem(self) -> Problem:
        return Problem(None, None, self.boundary)


SIDES = ("bottom", "right", "top", "left")
ALL_DIRICHLET = {s: DIRICHLET for s in SIDES}


def _steady_space(**over) -> ManufacturedCase:
    pi = sym.pi
    u = (
        -sym.cos(2 * pi * _x) * sym.sin(2 * pi * _y) + sym.sin(2 * pi * _y) + sym.sin(pi * _x) ** 2 * sym.sin(pi * _y) ** 2,
        sym.sin(2 * pi * _x) * sym.cos(2 * pi * _y) - sym.sin(2 * pi * _x),
    )
    p = sym.sin(pi * _x) ** 2 * sym.sin(pi * _y) ** 2
    par = PhysicalParams.from_young(100.0, 0.3, alpha=1.0, c0=1.0, eta=0.1, kappa=1.0)
    return ManufacturedCase("steady_space", par.replace(**over), dict(ALL_DIRICHLET), False, u, p, family="tri")


def _time_only(**over) -> ManufacturedCase:
    par = PhysicalParams(mu=1.0, lam=1e3, alpha=1.0, c0=0.0, eta=1.0, kappa=0.1).replace(**over)
    lam = sym.nsimplify(par.lam)
    u = (100 * sym.sin(_t) * (_x / lam + _y), 100 * sym.sin(_t) * (_x + _y / lam))
    p = sym.sin(_t) * (_x + _y)
    bc = {"bottom": GAMMA, "left": GAMMA, "top": SIGMA, "right": SIGMA}
    return ManufacturedCase("time_only", par, bc, True, u, p, family="hex")


def _space_time(**over) -> ManufacturedCase:
    par = PhysicalParams(mu=1.0, lam=1e4, alpha=1.0, c0=0.0, eta=1.0, kappa=1.0).replace(**over)
    pi = sym.pi
    lam, mu = sym.nsimplify(par.lam), sym.nsimplify(par.mu)
    e = sym.exp(-_t)
    bub = e / (mu + lam) * sym.sin(pi * _x) * sym.sin(pi * _y)
    u = (
        -e * sym.sin(2 * pi * _y) * (1 - sym.cos(2 * pi * _x)) + bub,
        e * sym.sin(2 * pi * _x) * (1 - sym.cos(2 * pi * _y)) + bub,
    )
    p = e * sym.sin(pi * _x) * sym.sin(pi * _y)
    return ManufacturedCase("space_time", par, dict(ALL_DIRICHLET), True, u, p, family="hex")


def _footing(**over) -> Scenario:
    par = PhysicalParams.from_young(3e4, 0.49995, alpha=1.0, c0=1e-3, eta=1.0, kappa=1e-4).replace(**over)
    bc = {"load": SIGMA, "top": SIGMA, "left": DIRICHLET, "right": DIRICHLET, "bottom": DIRICHLET}

    def load(pts, t, n):
        out = np.zeros((len(pts), 2))
        out[:, 1] = -1.5e4 * math.sin(math.pi * t)
        return out

    boundary = BoundaryData(traction={"load": load})
    return Scenario("footing", par, bc, boundary, TimeGrid(0.5, 5))


BUILTIN = {"steady_space": _steady_space, "time_only": _time_only, "space_time": _space_time, "footing": _footing}


def builtin_case(name: str, **overrides):
    """Return the named case; ``overrides`` replace physical parameters."""
    if name not in BUILTIN:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(BUILTIN)}")
    return BUILTIN[name](**overrides)


# ---------------------------------------------------------------- error norms


class ErrorEvaluator:
    """Sparse maps from dof vectors to projected fields at quadrature points.

    Built once per mesh; evaluating the broken norms for a state is then a
    handful of sparse products.
    """

    def __init__(self, system: BlockSystem):
        dm = system.dofmap
        self.system = system
        packs = system.packs
        pts, wts, cell_of = [], [], []
        for c, pk in enumerate(packs):
            pts.append(pk.quad.points)
            wts.append(pk.quad.weights)
            cell_of.append(np.full(len(pk.quad.weights), c))
        self.points = np.vstack(pts)
        self.weights = np.concatenate(wts)
        self.cell_of = np.concatenate(cell_of)
        nq, nc = len(self.weights), dm.n_z
        ux, uy, pv = _Rows(), _Rows(), _Rows()
        gu, gp = _Rows(), _Rows()
        q0 = 0
        for c, pk in enumerate(packs):
            vals = pk.basis.values(pk.quad.points)
            rows = q0 + np.arange(len(vals))
            q0 += len(vals)
            Pe = pk.pi_eps * dm.u_signs[c]
            ux.add(rows, dm.u_dofs[c], vals @ Pe[:3])
            uy.add(rows, dm.u_dofs[c], vals @ Pe[3:])
            G = vector_gradients(pk.basis.diameter).reshape(6, 4).T @ Pe  # (4, 3N)
            gu.add(4 * c + np.arange(4), dm.u_dofs[c], G)
            pv.add(rows, dm.p_dofs(c), vals @ pk.pi_nabla)
            gp.add(2 * c + np.arange(2), dm.p_dofs(c), pk.pi_nabla[1:3] / pk.basis.diameter)
        self.Ux = ux.tocsr((nq, dm.n_u))
        self.Uy = uy.tocsr((nq, dm.n_u))
        self.GU = gu.tocsr((4 * nc, dm.n_u))
        self.P = pv.tocsr((nq, dm.n_p))
        self.GP = gp.tocsr((2 * nc, dm.n_p))

    def squared(self, state: FieldState, case: ManufacturedCase, t: float | None = None) -> dict:
        """Absolute squared broken errors and squared exact norms."""
        t = state.t if t is None else t
        x, w, c = self.points, self.weights, self.cell_of
        u = case.u(x, t)
        gu = case.grad_u(x, t)
        p = case.p(x, t)
        gp = case.grad_p(x, t)
        psi = case.psi(x, t)
        uh = np.column_stack([self.Ux @ state.u, self.Uy @ state.u])
        guh = (self.GU @ state.u).reshape(-1, 2, 2)[c]
        ph = self.P @ state.p
        gph = (self.GP @ state.p).reshape(-1, 2)[c]
        psih = state.psi[c]
        return {
            "u1": w @ ((gu - guh) ** 2).sum(axis=(1, 2)),
            "u0": w @ ((u - uh) ** 2).sum(axis=1),
            "psi0": w @ (psi - psih) ** 2,
            "p1": w @ ((gp - gph) ** 2).sum(axis=1),
            "p0": w @ (p - ph) ** 2,
            "norm_u1": w @ (gu**2).sum(axis=(1, 2)),
            "norm_u0": w @ (u**2).sum(axis=1),
            "norm_psi0": w @ psi**2,
            "norm_p1": w @ (gp**2).sum(axis=1),
            "norm_p0": w @ p**2,
        }


class _Rows:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, block):
        R, C = np.meshgrid(rows, cols, indexing="ij")
        self.r.append(R.ravel())
        self.c.append(C.ravel())
        self.v.append(np.asarray(block).ravel())

    def tocsr(self, shape):
        return sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))), shape=shape)


SPACE_KEYS = ("u1", "u0", "psi0", "p1", "p0")
CUMULATIVE_KEYS = ("u1", "u0", "p1", "p0", "psi0")


def compute_space_errors(state: FieldState, case: ManufacturedCase, system: BlockSystem, t: float | None = None,
                         evaluator: ErrorEvaluator | None = None) -> dict:
    """Relative broken errors ``e1(u), e0(u), e0(psi), e1(p), e0(p)``.

    A field whose exact norm vanishes is reported as an absolute error and
    listed under ``"absolute"``.
    """
    ev = evaluator or ErrorEvaluator(system)
    sq = ev.squared(state, case, t)
    out, absolute = {}, []
    for k in SPACE_KEYS:
        den = sq["norm_" + k]
        if den <= 1e-300:
            out[k] = math.sqrt(sq[k])
            absolute.append(k)
        else:
            out[k] = math.sqrt(sq[k] / den)
    out["absolute"] = absolute
    return out


class CumulativeErrors:
    """Observer accumulating ``dt * sum_n ||error(t_n)||^2`` for ``n >= 1``."""

    def __init__(self, case: ManufacturedCase, system: BlockSystem, dt: float, evaluator: ErrorEvaluator | None = None):
        self.case = case
        self.dt = dt
        self.ev = evaluator or ErrorEvaluator(system)
        self.sums = dict.fromkeys(CUMULATIVE_KEYS, 0.0)
        self._first = True

    def __call__(self, state: FieldState) -> None:
        if self._first:
            self._first = False
            return
        sq = self.ev.squared(state, self.case)
        for k in self.sums:
            self.sums[k] += self.dt * sq[k]

    def result(self) -> dict:
        return {k: math.sqrt(v) for k, v in self.sums.items()}


def compute_cumulative_errors(history: Sequence[FieldState], case: ManufacturedCase, system: BlockSystem,
                              grid: TimeGrid) -> dict:
    acc = CumulativeErrors(case, system, grid.dt)
    for s in history:
        acc(s)
    return acc.result()


# ------------------------------------------------------------------- studies


@dataclass
class ErrorReport:
    """Rows of a convergence table with rates between consecutive levels."""

    kind: str  # "space", "time" or "spacetime"
    keys: tuple
    rows: list = field(default_factory=list)

    def rates(self, key: str) -> list:
        by = "dt" if self.kind == "time" else "h"
        out = [None]
        for a, b in zip(self.rows, self.rows[1:]):
            ea, eb = a[key], b[key]
            if ea <= 0 or eb <= 0:
                out.append(float("nan"))
            else:
                out.append(math.log(ea / eb) / math.log(a[by] / b[by]))
        return out

    def finest_rates(self) -> dict:
        return {k: self.rates(k)[-1] for k in self.keys}

    def columns(self) -> list:
        lead = {"space": ["Ndof", "h"], "time": ["dt"], "spacetime": ["h", "dt"]}[self.kind]
        names = {"u1": "e1(u)", "u0": "e0(u)", "psi0": "e0(psi)", "p1": "e1(p)", "p0": "e0(p)"}
        if self.kind != "space":
            names = {k: "E" + v[1:] for k, v in names.items()}
        cols = list(lead)
        for k in self.keys:
            cols += [names[k], "r"]
        return cols

    def table(self) -> list:
        rates = {k: self.rates(k) for k in self.keys}
        out = []
        for i, row in enumerate(self.rows):
            line = []
            if self.kind == "space":
                line += [str(row["ndof"]), f"{row['h']:.6g}"]
            if self.kind == "spacetime":
                line.append(f"{row['h']:.6g}")
            if self.kind != "space":
                line.append(f"{row['dt']:.6g}")
            for k in self.keys:
                r = rates[k][i]
                line += [f"{row[k]:.6g}", "-" if r is None else f"{r:.2f}"]
            out.append(line)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            w.writerows(self.table())

    def format(self) -> str:
        rows = [self.columns()] + self.table()
        widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
        return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in rows)


def system_for(case, mesh) -> BlockSystem:
    dm = build_dofmap(mesh, case.bc)
    return assemble_system(dm, build_packs(mesh), case.params)


def steady_level(case: ManufacturedCase, mesh: PolyMesh, solver: str = "direct") -> dict:
    system = system_for(case, mesh)
    state = solve_steady(system, case.problem(), solver)
    row = compute_space_errors(state, case, system, t=0.0)
    row.update(h=mesh.h, ndof=system.dofmap.n_free, ndof_total=system.dofmap.n_total, n_cells=mesh.n_cells)
    return row


def transient_level(case: ManufacturedCase, mesh: PolyMesh, n_steps: int, solver: str = "direct",
                    system: BlockSystem | None = None, evaluator: ErrorEvaluator | None = None) -> dict:
    system = system or system_for(case, mesh)
    grid = TimeGrid(case.t_final, n_steps)
    init = initialize(system, lambda x: case.u(x, 0.0), lambda x: case.p(x, 0.0), lambda x: case.psi(x, 0.0))
    acc = CumulativeErrors(case, system, grid.dt, evaluator)
    run(system, grid, case.problem(), init, observers=[acc], solver=solver, keep_history=False)
    row = acc.result()
    row.update(h=mesh.h, dt=grid.dt, ndof=system.dofmap.n_free)
    return row


def convergence_study(case: ManufacturedCase, meshes: Sequence[PolyMesh] | PolyMesh,
                      steps: Sequence[int] | None = None, solver: str = "direct", log=None) -> ErrorReport:
    """Run a space, time or joint study.

    Parameters
    ----------
    case : ManufacturedCase
    meshes : sequence of PolyMesh, or a single mesh for a time study
    steps : numbers of time steps per level (transient cases)
    """
    if isinstance(meshes, PolyMesh):
        if steps is None or len(steps) < 2:
            raise ValueError("a time study needs at least two step counts")
        system = system_for(case, meshes)
        ev = ErrorEvaluator(system)
        report = ErrorReport("time", CUMULATIVE_KEYS)
        for N in steps:
            t0 = time.perf_counter()
            report.rows.append(transient_level(case, meshes, N, solver, system, ev))
            _log(log, f"dt={case.t_final / N:.6g} done in {time.perf_counter() - t0:.1f}s")
        return report
    meshes = list(meshes)
    if len(meshes) < 2:
        raise ValueError("a convergence study needs at least two levels")
    if not case.transient:
        report = ErrorReport("space", SPACE_KEYS)
        for m in meshes:
            t0 = time.perf_counter()
            report.rows.append(steady_level(case, m, solver))
            _log(log, f"h={m.h:.4g} done in {time.perf_counter() - t0:.1f}s")
        return report
    if steps is None or len(steps) != len(meshes):
        raise ValueError("a joint study needs one step count per mesh")
    report = ErrorReport("spacetime", CUMULATIVE_KEYS)
    for m, N in zip(meshes, steps):
        t0 = time.perf_counter()
        report.rows.append(transient_level(case, m, N, solver))
        _log(log, f"h={m.h:.4g} dt={case.t_final / N:.4g} done in {time.perf_counter() - t0:.1f}s")
    return report


def _log(log, msg):
    if log is not None:
        log(msg)


EXPECTED_RATES = {
    "space": {"u1": 1.0, "u0": 2.0, "psi0": 1.0, "p1": 1.0, "p0": 2.0},
    "time": {"u1": 1.0, "u0": 1.0, "p1": 1.0, "p0": 1.0, "psi0": 1.0},
    "spacetime": {"u1": 1.0, "u0": 2.0, "p1": 1.0, "p0": 2.0, "psi0": 1.0},
}


def rate_regressions(report: ErrorReport, keys: Sequence[str] | None = None, tol: float = 0.15) -> list[str]:
    """Messages for finest-level rates outside ``expected +- tol``."""
    fails = []
    expected = EXPECTED_RATES[report.kind]
    for k, r in report.finest_rates().items():
        if keys is not None and k not in keys:
            continue
        if not (abs(r - expected[k]) <= tol):
            fails.append(f"{k}: finest rate {r:.3f}, expected {expected[k]:.2f} +- {tol}")
    return fails


# ------------------------------------------------------------- footing check


def checkerboard_cells(mesh: PolyMesh, values: np.ndarray, threshold: float = 0.05) -> list[int]:
    """Interior cells whose value exceeds ``threshold * max|values|`` and has
    the opposite sign to every edge neighbour."""
    vmax = np.abs(values).max()
    bad = []
    if vmax == 0:
        return bad
    for c in range(mesh.n_cells):
        if np.any(mesh.edge_cells[mesh.cell_edges[c]] < 0):
            continue
        if abs(values[c]) <= threshold * vmax:
            continue
        nb = mesh.cell_neighbors(c)
        if nb and all(np.sign(values[k]) == -np.sign(values[c]) and values[k] != 0 for k in nb):
            bad.append(c)
    return bad


def cell_average_p(system: BlockSystem, p: np.ndarray) -> np.ndarray:
    """Cell means of the P1 projection of a pressure vector."""
    return np.array([pk.H[0] @ pk.pi0_scalar @ p[system.dofmap.p_dofs(c)] / pk.geom.area
                     for c, pk in enumerate(system.packs)])


def run_scenario(sc: Scenario, mesh: PolyMesh | None = None, solver: str = "direct", observers=()) -> tuple:
    mesh = mesh or sc.mesh()
    system = assemble_system(build_dofmap(mesh, sc.bc), build_packs(mesh), sc.params)
    hist = run(system, sc.grid, sc.problem(), observers=observers, solver=solver)
    return system, hist


__all__ = [
    "ManufacturedCase",
    "Scenario",
    "builtin_case",
    "ErrorEvaluator",
    "compute_space_errors",
    "compute_cumulative_errors",
    "CumulativeErrors",
    "ErrorReport",
    "convergence_study",
    "rate_regressions",
    "checkerboard_cells",
    "run_scenario",
    "BoundaryCondition",
    "side_tagger",
]


def inf_sup_constant(mesh: PolyMesh, mu: float = 0.5) -> float:
    """Discrete inf-sup constant of ``b1`` on clamped ``V_h`` times mean-zero ``Z_h``.

    Smallest non-zero generalized eigenvalue of ``B A^-1 B^T`` against the
    P0 mass matrix, with ``A`` the displacement form for ``mu``. Dense; meant
    for small meshes.
    """
    import scipy.linalg

    par = PhysicalParams(mu=mu, lam=1.0, alpha=1.0, c0=0.0, eta=1.0)
    system = assemble_system(build_dofmap(mesh, {t: DIRICHLET for t in set(mesh.boundary_tags.values())}),
                             build_packs(mesh), par)
    free = ~system.dofmap.u_fixed
    A = system.a1[free][:, free].toarray()
    B = system.b1[:, free].toarray()
    M = system.a3.diagonal() * par.lam
    S = B @ np.linalg.solve(A, B.T)
    ev = scipy.linalg.eigh(S, np.diag(M), eigvals_only=True)
    # constants are in the kernel of B^T for clamped displacements
    return float(np.sqrt(max(ev[1], 0.0)))

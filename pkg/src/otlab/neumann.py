"""Nonlinear Neumann solve for the dual potential, with diagnostics.

The potential minimizes

    J(phi) = int_B c*(D phi) dx - int_{dB} g phi ds - c_R int_B phi dx

over mean-zero piecewise-linear fields on a disk mesh, where g is the
signed net boundary flux and c_R the constant that balances it.  The
minimizer satisfies -div grad c*(D phi) = c_R weakly with the flux
boundary condition, which is the equation the transport plan's entry
and exit data feed.

Minimization runs a Newton iteration preconditioned by the p = 2
stiffness operator.  The dual Hessian degenerates where D phi = 0 for
p' > 2 and blows up there for p' < 2, so search directions come from
the Hessian of the shifted density at |D phi|^2 + delta^2, with delta
walked down over three stages; an Armijo test guards every step and
falls back to the preconditioned gradient when the Newton direction
fails to descend.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .costs import RADIAL, CostSpec, cost_eval, dual_eval, dual_grad
from .measures import Ball, BoundaryData
from .meshing import DiskMesh

__all__ = [
    "ScalarField",
    "NeumannProblem",
    "net_boundary_flux",
    "solve_neumann",
    "flux_field",
    "DiagnosticsReport",
    "regularity_diagnostics",
    "holder_product_check",
]

_I2 = np.eye(2)
# continuation shifts relative to the data scale, coarse to fine
_DELTA_LADDER = (1e-2, 1e-4, 1e-6)
_WARM_ITER = 12
_FINAL_ITER = 60
# Hoelder exponent fixed for all seminorm diagnostics
HOLDER_BETA = 0.5


def net_boundary_flux(g: BoundaryData, f: BoundaryData) -> BoundaryData:
    """Signed flux density g - f on a shared circle histogram."""
    if g.dim != 2 or f.dim != 2:
        raise ValueError("net flux needs planar boundary histograms")
    if g.n_bins != f.n_bins or abs(g.radius - f.radius) > 1e-12 * g.radius:
        raise ValueError("histograms must share radius and binning")
    return BoundaryData(g.radius, g.masses - f.masses, dim=2, signed=True)


@dataclasses.dataclass(frozen=True)
class ScalarField:
    """Mean-zero nodal field on a disk mesh, one value per node."""

    mesh: DiskMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if len(v) != self.mesh.n_nodes:
            raise ValueError("need one value per mesh node")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        tol = 1e-10 * max(1.0, float(np.abs(v).max()))
        if abs(float(self.mesh.lumped_mass @ v)) > tol:
            raise ValueError("field must integrate to zero over the disk")
        object.__setattr__(self, "values", v)

    @classmethod
    def projected(cls, mesh: DiskMesh, values) -> "ScalarField":
        """Shift a raw nodal vector to its mean-zero representative."""
        v = np.asarray(values, dtype=float).ravel()
        m = mesh.lumped_mass
        return cls(mesh, v - (m @ v) / m.sum())

    @functools.cached_property
    def element_gradients(self) -> np.ndarray:
        """Constant gradient per triangle, shape (t, 2)."""
        return np.einsum("tiv,ti->tv", self.mesh.shape_gradients,
                         self.values[self.mesh.triangles])

    @functools.cached_property
    def nodal_gradients(self) -> np.ndarray:
        """Area-weighted average of the incident element gradients."""
        mesh = self.mesh
        num = np.zeros((mesh.n_nodes, 2))
        den = np.zeros(mesh.n_nodes)
        weighted = mesh.areas[:, None] * self.element_gradients
        for k in range(3):
            np.add.at(num, mesh.triangles[:, k], weighted)
            np.add.at(den, mesh.triangles[:, k], mesh.areas)
        return num / den[:, None]

    def evaluate(self, points) -> np.ndarray:
        """P1 interpolation; outside the mesh, the nearest node value."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sidx = self.mesh.locate(pts)
        out = np.empty(len(pts))
        inside = sidx >= 0
        if inside.any():
            tri = self.mesh.triangles[sidx[inside]]
            anchor = self.mesh.nodes[tri[:, 0]]
            grads = self.element_gradients[sidx[inside]]
            out[inside] = self.values[tri[:, 0]] + \
                np.sum((pts[inside] - anchor) * grads, axis=1)
        if (~inside).any():
            out[~inside] = self.values[self.mesh.nearest_node(pts[~inside])]
        return out

    def gradient(self, points) -> np.ndarray:
        """Element gradient at each point; nearest recovered nodal
        gradient for points the mesh does not cover."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sidx = self.mesh.locate(pts)
        out = np.empty((len(pts), 2))
        inside = sidx >= 0
        out[inside] = self.element_gradients[sidx[inside]]
        if (~inside).any():
            out[~inside] = self.nodal_gradients[self.mesh.nearest_node(pts[~inside])]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("node_id,x,y,phi\n")
            for i, ((x, y), v) in enumerate(zip(self.mesh.nodes, self.values)):
                fh.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


@dataclasses.dataclass(frozen=True)
class NeumannProblem:
    """Mesh, cost and signed boundary flux of one dual solve.

    c_R is the volume source balancing the boundary flux; the
    divergence theorem for -div grad c*(D phi) = c_R with outward flux
    g forces c_R = -|B_R|^{-1} int g.  Construction fills it in when
    not given and rejects an explicit value that does not balance.
    """

    mesh: DiskMesh
    cost: CostSpec
    g_boundary: BoundaryData
    c_R: Optional[float] = None

    def __post_init__(self):
        g = self.g_boundary
        if g.dim != 2:
            raise ValueError("planar boundary data required")
        if abs(g.radius - self.mesh.R) > 1e-12 * self.mesh.R:
            raise ValueError("boundary data radius must match the mesh")
        volume = math.pi * self.mesh.R ** 2
        if self.c_R is None:
            object.__setattr__(self, "c_R", -g.total_mass / volume)
        slack = g.total_mass + self.c_R * volume
        if abs(slack) > 1e-10 * max(1.0, abs(g.total_mass)):
            raise ValueError(
                f"incompatible data: flux balance off by {slack:.3e}")


def _boundary_load(mesh: DiskMesh, g: BoundaryData) -> np.ndarray:
    """Boundary-term load vector, int g hat_i ds per boundary node.

    Exact for the piecewise-constant histogram density: every edge arc
    is split at the bin edges it straddles and the linear hats are
    integrated piece by piece (midpoint rule, exact for linear factors).
    """
    load = np.zeros(mesh.n_nodes)
    nodes = mesh.boundary_nodes
    th = mesh.boundary_angles
    m = len(nodes)
    width = 2.0 * math.pi / g.n_bins
    dens = g.densities
    for k in range(m):
        alpha = th[k]
        beta = th[k + 1] if k + 1 < m else th[0] + 2.0 * math.pi
        span = beta - alpha
        lo = int(math.floor(alpha / width)) + 1
        hi = int(math.ceil(beta / width)) - 1
        cuts = [alpha] + [j * width for j in range(lo, hi + 1)] + [beta]
        for u, v in zip(cuts[:-1], cuts[1:]):
            if v <= u:
                continue
            mid = 0.5 * (u + v)
            w = dens[int(mid / width) % g.n_bins] * mesh.R * (v - u)
            load[nodes[k]] += w * (beta - mid) / span
            load[nodes[(k + 1) % m]] += w * (mid - alpha) / span
    return load


def _boundary_lp(g: BoundaryData, p: float) -> float:
    """int |g|^p ds over the circle, exact for the histogram density."""
    return float(np.sum(np.abs(g.densities) ** p) * g.bin_measure)


def _stiffness(mesh: DiskMesh, W: np.ndarray):
    """P1 operator with one 2x2 coefficient block per triangle."""
    tris = mesh.triangles
    i = np.repeat(tris, 3, axis=1).ravel()
    j = np.tile(tris, (1, 3)).ravel()
    blocks = np.einsum("tiv,tvw,tjw,t->tij", mesh.shape_gradients, W,
                       mesh.shape_gradients, mesh.areas)
    return sparse.coo_matrix((blocks.ravel(), (i, j)),
                             shape=(mesh.n_nodes,) * 2).tocsr()


def _bordered_factor(K, mass: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """LU of K bordered by the mean constraint, returned as a solve.

    Any mass-aligned component of the right-hand side lands in the
    Lagrange multiplier, so the field part of the solution does not
    depend on how the compatibility constant was split off.
    """
    lu = splu(sparse.bmat([[K, mass[:, None]], [mass[None, :], None]],
                          format="csc"))

    def apply(rhs: np.ndarray) -> np.ndarray:
        return lu.solve(np.append(rhs, 0.0))[:-1]

    return apply


def _dual_hessian(spec: CostSpec, d: np.ndarray, delta: float) -> np.ndarray:
    """Hessian blocks of the delta-shifted dual density at gradients d."""
    if spec.family == RADIAL:
        q = spec.p_prime
        nr2 = np.sum(d * d, axis=1) + delta * delta
        outer = d[:, :, None] * d[:, None, :] / nr2[:, None, None]
        return (nr2 ** ((q - 2.0) / 2.0))[:, None, None] * \
            (_I2[None] + (q - 2.0) * outer)
    # the anisotropic conjugate has no closed-form Hessian; use
    # symmetrised central differences of its gradient, the Armijo
    # fallback absorbs the truncation error
    step = max(delta, 1e-7 * (1.0 + float(np.abs(d).max())))
    cols = []
    for a in range(2):
        e = np.zeros(2)
        e[a] = step
        cols.append((dual_grad(spec, d + e) - dual_grad(spec, d - e)) /
                    (2.0 * step))
    H = np.stack(cols, axis=2)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def solve_neumann(prob: NeumannProblem, tol: float = 1e-8,
                  max_iter: int = 100_000) -> ScalarField:
    """Minimize the dual functional; see the module docstring.

    Stops when the weak residual, measured in the dual norm of the
    p = 2 stiffness operator, drops below tol (1 + |g|_{L^p}); raises
    ArithmeticError with the reached residual when the iteration
    budget runs out first.  For p = 2 the preconditioner solves the
    problem outright and no Newton pass runs.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    mesh, spec, g = prob.mesh, prob.cost, prob.g_boundary
    n = mesh.n_nodes
    dens_sup = float(np.abs(g.densities).max())
    if dens_sup == 0.0:
        return ScalarField(mesh, np.zeros(n))

    area, G, tris = mesh.areas, mesh.shape_gradients, mesh.triangles
    mass = mesh.lumped_mass
    lin = _boundary_load(mesh, g) + prob.c_R * mass
    g_lp = _boundary_lp(g, spec.p) ** (1.0 / spec.p)
    target = tol * (1.0 + g_lp)

    def grad_of(phi: np.ndarray) -> np.ndarray:
        return np.einsum("tiv,ti->tv", G, phi[tris])

    def objective(phi: np.ndarray) -> float:
        return float(area @ dual_eval(spec, grad_of(phi)) - lin @ phi)

    def residual(phi: np.ndarray) -> np.ndarray:
        flux = dual_grad(spec, grad_of(phi))
        r = np.zeros(n)
        for k in range(3):
            np.add.at(r, tris[:, k], area * np.sum(G[:, k, :] * flux, axis=1))
        return r - lin

    solve_k2 = _bordered_factor(
        _stiffness(mesh, np.broadcast_to(_I2, (mesh.n_triangles, 2, 2))), mass)
    phi = solve_k2(lin)

    iters = 0
    if abs(spec.p_prime - 2.0) > 1e-14:
        scale = dens_sup ** (1.0 / (spec.p - 1.0))
        budgets = (_WARM_ITER, _WARM_ITER,
                   max(_FINAL_ITER, max_iter - 2 * _WARM_ITER))
        for delta, budget in zip(_DELTA_LADDER, budgets):
            for _ in range(budget):
                if iters >= max_iter:
                    break
                r = residual(phi)
                rd = solve_k2(r)
                if math.sqrt(abs(r @ rd)) <= target:
                    break
                try:
                    H = _stiffness(mesh, _dual_hessian(spec, grad_of(phi),
                                                       delta * scale))
                    d = -_bordered_factor(H, mass)(r)
                    dj = float(r @ d)
                except RuntimeError:
                    dj = 1.0
                if dj >= 0.0:
                    # indefinite or failed Hessian: preconditioned descent
                    d, dj = -rd, -float(r @ rd)
                t, j0 = 1.0, objective(phi)
                while t > 1e-18:
                    # near the minimum the predicted decrease t |dj| ~ rn^2
                    # sinks below the float resolution of J; accept the
                    # step there and let the residual test drive the stop
                    noise = abs(t * dj) <= 1e-14 * (1.0 + abs(j0))
                    if noise or objective(phi + t * d) <= j0 + 1e-4 * t * dj:
                        phi = phi + t * d
                        break
                    t /= 2.0
                iters += 1

    r = residual(phi)
    rn = math.sqrt(abs(r @ solve_k2(r)))
    if rn > target:
        raise ArithmeticError(
            f"no convergence in {iters} iterations, residual {rn:.3e} "
            f"above {target:.3e}")
    return ScalarField.projected(mesh, phi)


def flux_field(phi: ScalarField, cost: CostSpec) -> np.ndarray:
    """Per-triangle transport direction grad c*(D phi).

    Piecewise constant, shape (t, 2); coincides with the element
    gradients when p = 2.
    """
    return dual_grad(cost, phi.element_gradients)


def _ratio(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 0.0 if num == 0.0 else math.inf


@dataclasses.dataclass(frozen=True)
class DiagnosticsReport:
    """Regularity ratios of one solved potential.

    Every energy is normalized by the boundary budget int |g|^p ds;
    mollification holds (r, gap) pairs with gap = int |D phi - D phi^r|^{p'}
    and fitted_exponent the log-log slope of gap against r (nan when
    fewer than two positive gaps are available).
    """

    p: float
    beta: float
    interior_radius: float
    gradient_energy: float
    dual_cost_energy: float
    interior_sup: float
    boundary_lp: float
    mollification: Tuple[Tuple[float, float], ...]
    fitted_exponent: float

    @property
    def energy_ratio(self) -> float:
        return _ratio(self.gradient_energy, self.boundary_lp)

    @property
    def dual_energy_ratio(self) -> float:
        return _ratio(self.dual_cost_energy, self.boundary_lp)

    @property
    def interior_ratio(self) -> float:
        return _ratio(self.interior_sup, self.boundary_lp)

    def mollification_ratios(self) -> list:
        """(r, gap / (r^s budget)) per scale with the fitted s."""
        s = self.fitted_exponent
        out = []
        for r, gap in self.mollification:
            ratio = _ratio(gap, r ** s * self.boundary_lp) \
                if math.isfinite(s) else math.nan
            out.append((r, ratio))
        return out

    def to_dict(self) -> dict:
        def clean(x):
            return x if math.isfinite(x) else None
        return {
            "p": self.p,
            "beta": self.beta,
            "interior_radius": self.interior_radius,
            "gradient_energy": self.gradient_energy,
            "dual_cost_energy": self.dual_cost_energy,
            "interior_sup": self.interior_sup,
            "boundary_lp": self.boundary_lp,
            "energy_ratio": clean(self.energy_ratio),
            "dual_energy_ratio": clean(self.dual_energy_ratio),
            "interior_ratio": clean(self.interior_ratio),
            "fitted_exponent": clean(self.fitted_exponent),
            "mollification": [
                {"r": r, "gap": gap, "ratio": clean(ratio)}
                for (r, gap), (_, ratio)
                in zip(self.mollification, self.mollification_ratios())],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def regularity_diagnostics(prob: NeumannProblem, phi: ScalarField,
                           phi_r_pairs: Sequence[Tuple[float, ScalarField]] = ()
                           ) -> DiagnosticsReport:
    """Energy and mollification diagnostics of a solved potential.

    Ratios reported against the boundary budget int |g|^p ds: the dual
    gradient energy int |D phi|^{p'}, the transported cost
    int c(grad c*(D phi)), the sup of |D phi|^{p'} over the ball
    shrunk by 0.5, and one gap per mollified companion field.
    """
    mesh, spec = prob.mesh, prob.cost
    if mesh.R <= 0.5:
        raise ValueError("interior diagnostics need R > 0.5")
    q = spec.p_prime
    grads = phi.element_gradients
    gnorm_q = np.linalg.norm(grads, axis=1) ** q
    flux = dual_grad(spec, grads)
    inner = np.linalg.norm(mesh.centroids, axis=1) <= mesh.R - 0.5

    gaps = []
    for r, phi_r in phi_r_pairs:
        if phi_r.mesh.n_nodes != mesh.n_nodes:
            raise ValueError("companion fields must share the mesh")
        diff = grads - phi_r.element_gradients
        gaps.append((float(r),
                     float(mesh.areas @ np.linalg.norm(diff, axis=1) ** q)))
    positive = [(r, gap) for r, gap in gaps if gap > 0.0]
    if len(positive) >= 2:
        rs, gs = np.log([r for r, _ in positive]), np.log([g for _, g in positive])
        fitted = float(np.polyfit(rs, gs, 1)[0])
    else:
        fitted = math.nan

    return DiagnosticsReport(
        p=spec.p,
        beta=HOLDER_BETA,
        interior_radius=mesh.R - 0.5,
        gradient_energy=float(mesh.areas @ gnorm_q),
        dual_cost_energy=float(mesh.areas @ cost_eval(spec, flux)),
        interior_sup=float(gnorm_q[inner].max()) if inner.any() else 0.0,
        boundary_lp=_boundary_lp(prob.g_boundary, spec.p),
        mollification=tuple(gaps),
        fitted_exponent=fitted,
    )


def holder_product_check(phi: ScalarField, cost: CostSpec, ball: Ball) -> float:
    """Ratio in the product bound for c*(D phi) + c(grad c*(D phi)).

    Both sides use discrete Hoelder seminorms (beta = 0.5) over the
    recovered nodal gradients, restricted to mesh nodes inside the
    ball and to pairs at least 2h apart; below that scale the
    piecewise-gradient jumps dominate the quotients.  Returns
    lhs / (sup |D phi|^{p'-1} [D phi]); 0 when both sides vanish.
    """
    if ball.dim != 2:
        raise ValueError("planar ball required")
    mesh = phi.mesh
    sel = np.linalg.norm(mesh.nodes - ball.center, axis=1) <= ball.radius
    if sel.sum() < 2:
        raise ValueError("ball covers fewer than two mesh nodes")
    x = mesh.nodes[sel]
    dg = phi.nodal_gradients[sel]
    s = dual_eval(cost, dg) + cost_eval(cost, dual_grad(cost, dg))

    i, j = np.triu_indices(len(x), k=1)
    dist = np.linalg.norm(x[i] - x[j], axis=1)
    far = dist >= 2.0 * mesh.h
    if not far.any():
        raise ValueError("no node pairs at separation 2h in the ball")
    w = dist[far] ** HOLDER_BETA
    lhs = float(np.max(np.abs(s[i][far] - s[j][far]) / w))
    grad_semi = float(np.max(
        np.linalg.norm(dg[i][far] - dg[j][far], axis=1) / w))
    sup_d = float(np.linalg.norm(dg, axis=1).max())
    if grad_semi <= 1e-10 * max(1.0, sup_d):
        # constant gradient at working precision: both sides are roundoff
        return 0.0
    return _ratio(lhs, sup_d ** (cost.p_prime - 1.0) * grad_semi)

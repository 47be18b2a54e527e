"""Exact discrete optimal transport and the smallness quantities built on it.

The engine solves min <C, gamma> over couplings of two weighted atom
clouds as a linear program and certifies optimality through the dual.
On top of the solver sit the quantities steering the linearization
study: the localized transport energy E(R), the data term D(R)
comparing each marginal with its own uniform density, a triangle-type
inequality with an explicit constant, cyclical monotonicity sampling,
the Benamou-Brenier action in both direct and duality form, and the
measure-comparison checks used by the lemma suite.

Conventions: couplings are lists of (source index, target index, mass)
with strictly positive masses; W_c(a, b) denotes the optimal cost; all
checks return report objects and never raise on a failed inequality.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, sparse

from .costs import CostSpec, cost_eval, cost_grad, dual_eval
from .measures import Ball, DiscreteMeasure, kappa, lebesgue_quadrature, restrict

__all__ = [
    "TransportPlan",
    "SmallnessReport",
    "SCALE_INVARIANT",
    "PLAIN_VOLUME",
    "solve_exact",
    "brute_force",
    "monotone_1d",
    "transport_cost",
    "check_cyclical_monotonicity",
    "energy_E",
    "data_D",
    "compute_smallness",
    "triangle_check",
    "triangle_constant",
    "add_constant_check",
    "benamou_brenier_action",
    "c2measures_check",
    "localisation_check",
    "data_restriction_check",
    "save_plan",
    "load_plan",
]

SCALE_INVARIANT = "ScaleInvariant"
PLAIN_VOLUME = "PlainVolume"

# dense n*m cost matrices beyond this size are refused
_MAX_MATRIX_ENTRIES = 4_000_000

_MARGINAL_RTOL = 1e-10


@dataclasses.dataclass(frozen=True)
class TransportPlan:
    """A coupling of two discrete measures with certified bookkeeping.

    idx_source/idx_target/masses are parallel arrays of plan entries.
    total_cost is the plan's cost under the spec it was solved with;
    dual_gap records the optimality certificate (max dual infeasibility
    plus complementary slackness defect) when the plan came from the LP,
    and is nan for constructions that are optimal by other arguments.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    idx_source: np.ndarray
    idx_target: np.ndarray
    masses: np.ndarray
    total_cost: float = math.nan
    dual_gap: float = math.nan

    def __post_init__(self):
        i = np.asarray(self.idx_source, dtype=int).ravel()
        j = np.asarray(self.idx_target, dtype=int).ravel()
        m = np.asarray(self.masses, dtype=float).ravel()
        if not (len(i) == len(j) == len(m)):
            raise ValueError("entry arrays must be parallel")
        if np.any(m <= 0.0):
            raise ValueError("entry masses must be strictly positive")
        object.__setattr__(self, "idx_source", i)
        object.__setattr__(self, "idx_target", j)
        object.__setattr__(self, "masses", m)
        row = np.bincount(i, weights=m, minlength=self.source.n_atoms)
        col = np.bincount(j, weights=m, minlength=self.target.n_atoms)
        scale = max(self.source.weights.max(initial=0.0), 1e-300)
        if np.abs(row - self.source.weights).max(initial=0.0) > _MARGINAL_RTOL * scale * self.source.n_atoms:
            raise ValueError("source marginal violated")
        if np.abs(col - self.target.weights).max(initial=0.0) > _MARGINAL_RTOL * scale * self.target.n_atoms:
            raise ValueError("target marginal violated")

    @property
    def n_entries(self) -> int:
        return len(self.masses)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points (x_k, y_k) of the plan entries."""
        return self.source.points[self.idx_source], self.target.points[self.idx_target]

    def displacements(self) -> np.ndarray:
        x, y = self.pairs()
        return y - x

    def cost_under(self, spec: CostSpec) -> float:
        x, y = self.pairs()
        return float(np.sum(self.masses * cost_eval(spec, x - y)))

    def subset(self, keep: np.ndarray) -> "TransportPlan":
        """Sub-plan on a boolean entry mask; marginals are recomputed."""
        i, j, m = self.idx_source[keep], self.idx_target[keep], self.masses[keep]
        src = DiscreteMeasure(self.source.points,
                              np.bincount(i, weights=m, minlength=self.source.n_atoms))
        tgt = DiscreteMeasure(self.target.points,
                              np.bincount(j, weights=m, minlength=self.target.n_atoms))
        return TransportPlan(src, tgt, i, j, m)


@dataclasses.dataclass(frozen=True)
class SmallnessReport:
    E_values: dict
    D_values: dict
    normalization: str

    def __post_init__(self):
        if self.normalization not in (SCALE_INVARIANT, PLAIN_VOLUME):
            raise ValueError("unknown normalization")
        vals = list(self.E_values.values()) + list(self.D_values.values())
        if any(v < 0 for v in vals):
            raise ValueError("smallness quantities are non-negative")

    def total(self, radius: float) -> float:
        return self.E_values[radius] + self.D_values[radius]


def _check_balanced(lam: DiscreteMeasure, mu: DiscreteMeasure) -> DiscreteMeasure:
    """Validate |lam| = |mu| to 1e-9 relative; return mu rescaled exactly."""
    ml, mm = lam.total_mass, mu.total_mass
    if ml <= 0 or mm <= 0:
        raise ValueError("measures must have positive mass")
    if abs(ml - mm) > 1e-9 * max(ml, mm):
        raise ValueError(f"mass mismatch: {ml} vs {mm}")
    return mu.with_mass(ml)


def _cost_matrix(lam: DiscreteMeasure, mu: DiscreteMeasure, spec: CostSpec) -> np.ndarray:
    n, m = lam.n_atoms, mu.n_atoms
    if n * m > _MAX_MATRIX_ENTRIES:
        raise ValueError(f"cost matrix {n}x{m} exceeds the dense cap")
    diff = lam.points[:, None, :] - mu.points[None, :, :]
    return np.asarray(cost_eval(spec, diff))


def _identical(lam: DiscreteMeasure, mu: DiscreteMeasure) -> bool:
    # float-resolution agreement, not bitwise: nested quadratures built at
    # different reference radii coincide only up to an ulp, and the identity
    # coupling's true cost (~ mass * c(1e-16)) is below every tolerance used
    # anywhere in the lab, so it is reported as exactly zero
    if lam.n_atoms != mu.n_atoms or lam.n_atoms == 0:
        return lam.n_atoms == mu.n_atoms
    scale = 1.0 + float(np.abs(lam.points).max())
    return (np.allclose(lam.points, mu.points, rtol=0.0, atol=1e-12 * scale)
            and np.allclose(lam.weights, mu.weights, rtol=1e-12, atol=0.0))


def solve_exact(lam: DiscreteMeasure, mu: DiscreteMeasure, spec: CostSpec) -> TransportPlan:
    """Optimal coupling between lam and mu for the cost spec, via LP.

    The transportation polytope is described by its n + m marginal
    equalities (one dropped for rank) and solved with the HiGHS dual
    simplex at tightened feasibility tolerances, which pivots
    deterministically for a fixed instance.  Optimality is certified
    against the returned dual potentials: u_i + v_j <= C_ij everywhere
    and equality on the support, to 1e-9 of the cost scale; the
    certificate residual is stored on the plan as dual_gap.

    Identical inputs short-circuit to the diagonal plan, which is
    optimal for any non-negative cost vanishing at 0; this keeps
    self-distance tests exact and permits large identical clouds that
    the dense matrix cap would otherwise refuse.
    """
    mu = _check_balanced(lam, mu)
    if _identical(lam, mu):
        idx = np.arange(lam.n_atoms)
        keep = lam.weights > 0
        return TransportPlan(lam, mu, idx[keep], idx[keep], lam.weights[keep],
                             total_cost=0.0, dual_gap=0.0)
    cmat = _cost_matrix(lam, mu, spec)
    n, m = cmat.shape

    rows_i = np.repeat(np.arange(n), m)
    cols_j = np.tile(np.arange(m), n)
    var = np.arange(n * m)
    a_eq = sparse.coo_matrix(
        (np.ones(2 * n * m), (np.concatenate([rows_i, n + cols_j]), np.concatenate([var, var]))),
        shape=(n + m, n * m),
    ).tocsr()[:-1]  # drop one redundant equality
    b_eq = np.concatenate([lam.weights, mu.weights])[:-1]

    res = optimize.linprog(
        cmat.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs",
        options={"primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 1:
        raise ArithmeticError("transport LP hit its iteration cap")
    if res.status != 0:
        raise ArithmeticError(f"transport LP failed: {res.message}")

    gamma = res.x.reshape(n, m)
    duals = np.append(res.eqlin.marginals, 0.0)
    u, v = duals[:n], duals[n:]
    slack = cmat - u[:, None] - v[None, :]
    scale = max(float(np.abs(cmat).max()), 1.0)
    dual_infeas = max(0.0, float(-slack.min()))
    support = gamma > 1e-12 * max(lam.weights.max(), 1e-300)
    comp_defect = float(np.abs(slack[support]).max()) if support.any() else 0.0
    gap = dual_infeas + comp_defect
    if gap > 1e-9 * scale:
        raise ArithmeticError(f"optimality certificate failed: gap {gap:.3e}")

    i, j = np.nonzero(support)
    return TransportPlan(lam, mu, i, j, gamma[support],
                         total_cost=float(res.fun), dual_gap=gap)


def transport_cost(lam: DiscreteMeasure, mu: DiscreteMeasure, spec: CostSpec) -> float:
    """W_c(lam, mu), the optimal transport cost."""
    return solve_exact(lam, mu, spec).total_cost


def brute_force(lam: DiscreteMeasure, mu: DiscreteMeasure, spec: CostSpec) -> TransportPlan:
    """Exact minimum over all permutations; test oracle only.

    Requires equal atom counts with equal weights (plan vertices are
    then permutation matrices) and n <= 8.  Ties break toward the
    lexicographically first permutation.
    """
    n = lam.n_atoms
    if n != mu.n_atoms or n == 0 or n > 8:
        raise ValueError("brute force needs matching atom counts, 1 <= n <= 8")
    if (np.ptp(lam.weights) > 1e-12 * lam.weights.max()
            or np.ptp(mu.weights) > 1e-12 * mu.weights.max()):
        raise ValueError("brute force needs uniform weights")
    mu = _check_balanced(lam, mu)
    cmat = _cost_matrix(lam, mu, spec)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = cmat[np.arange(n), perm].sum()
        if c < best - 0.0:  # strict: first minimum wins
            best, best_perm = c, perm
    w = lam.weights[0]
    return TransportPlan(lam, mu, np.arange(n), np.array(best_perm),
                         np.full(n, w), total_cost=float(best * w))


def monotone_1d(lam: DiscreteMeasure, mu: DiscreteMeasure, spec: CostSpec) -> TransportPlan:
    """Quantile coupling on the line, optimal for convex costs.

    Classic two-pointer sweep over the sorted atoms, splitting masses
    where the cumulative distributions cross.
    """
    if lam.dim != 1 or mu.dim != 1:
        raise ValueError("monotone coupling is one-dimensional")
    mu = _check_balanced(lam, mu)
    order_l = np.argsort(lam.points[:, 0], kind="stable")
    order_m = np.argsort(mu.points[:, 0], kind="stable")
    wl = lam.weights[order_l].copy()
    wm = mu.weights[order_m].copy()
    ii, jj, mm = [], [], []
    a = b = 0
    while a < len(wl) and b < len(wm):
        if wl[a] <= 0.0:
            a += 1
            continue
        if wm[b] <= 0.0:
            b += 1
            continue
        take = min(wl[a], wm[b])
        ii.append(order_l[a])
        jj.append(order_m[b])
        mm.append(take)
        wl[a] -= take
        wm[b] -= take
    plan = TransportPlan(lam, mu, np.array(ii, int), np.array(jj, int), np.array(mm))
    return dataclasses.replace(plan, total_cost=plan.cost_under(spec))


def check_cyclical_monotonicity(plan: TransportPlan, spec: CostSpec, n_tuple: int,
                                trials: int, seed: int) -> list:
    """Sample support tuples and report cyclic reassignments that win.

    For each trial, n_tuple distinct entries (x_i, y_i) are drawn and
    sum c(x_i - y_i) is compared with sum c(x_i - y_{i+1}); tuples
    beating the plan by more than 1e-9 are returned with their defect.
    An optimal plan must return an empty list.
    """
    if not 2 <= n_tuple <= 6:
        raise ValueError("tuple size must be between 2 and 6")
    k = plan.n_entries
    if k < n_tuple:
        return []
    rng = np.random.default_rng(seed)
    x, y = plan.pairs()
    direct_all = np.asarray(cost_eval(spec, x - y))
    violations = []
    for _ in range(trials):
        sel = rng.choice(k, size=n_tuple, replace=False)
        direct = direct_all[sel].sum()
        shifted = cost_eval(spec, x[sel] - y[np.roll(sel, -1)]).sum()
        defect = direct - shifted
        if defect > 1e-9:
            violations.append({"entries": sel.tolist(), "defect": float(defect)})
    return violations


def _ball_volume(radius: float, dim: int) -> float:
    return Ball.at_origin(radius, dim=dim).volume


def energy_E(plan: TransportPlan, radius: float, spec: CostSpec,
             normalization: str = SCALE_INVARIANT) -> float:
    """Localized transport energy of the plan at the given radius.

    Integrates c(x - y) over the entries whose source or target lies in
    the open ball B_R and divides by |B_R| R^p (scale invariant form)
    or plain |B_R|.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    x, y = plan.pairs()
    mask = (np.linalg.norm(x, axis=1) < radius) | (np.linalg.norm(y, axis=1) < radius)
    total = float(np.sum(plan.masses[mask] * cost_eval(spec, (x - y)[mask]))) if mask.any() else 0.0
    vol = _ball_volume(radius, plan.source.dim)
    if normalization == SCALE_INVARIANT:
        return total / (vol * radius ** spec.p)
    if normalization == PLAIN_VOLUME:
        return total / vol
    raise ValueError("unknown normalization")


def _uniform_target(ball: Ball, resolution: int, density: float) -> DiscreteMeasure:
    quad = lebesgue_quadrature(ball, resolution)
    return DiscreteMeasure(quad.points, quad.weights * density)


def _data_half(nu: DiscreteMeasure, radius: float, spec: CostSpec, resolution: int,
               power_cost: bool) -> tuple[float, float, float]:
    """One marginal's contribution to D: (W term, kappa, kappa term).

    The W term is W(nu restricted to B_R, kappa dx on B_R) divided by
    |B_R|; the kappa term is R^p (kappa - 1)^p / kappa^{p-1}, not
    volume-normalized, following the defining display.
    """
    ball = Ball.at_origin(radius, dim=nu.dim)
    local = restrict(nu, ball)
    k = local.total_mass / ball.volume
    if k <= 0.0:
        raise ValueError("zero local mass inside the ball")
    target = _uniform_target(ball, resolution, k)
    if power_cost:
        w = _power_cost_distance(local, target.with_mass(local.total_mass), spec.p)
    else:
        w = transport_cost(local, target.with_mass(local.total_mass), spec)
    w_term = w / ball.volume
    k_term = radius ** spec.p * abs(k - 1.0) ** spec.p / k ** (spec.p - 1.0)
    return w_term, k, k_term


def _power_cost_distance(lam: DiscreteMeasure, mu: DiscreteMeasure, p: float) -> float:
    """W_p^p with the raw |x-y|^p cost, for the flagged variant of D."""
    mu = _check_balanced(lam, mu)
    if _identical(lam, mu):
        return 0.0
    cmat = np.linalg.norm(lam.points[:, None, :] - mu.points[None, :, :], axis=-1) ** p
    n, m = cmat.shape
    if n * m > _MAX_MATRIX_ENTRIES:
        raise ValueError("cost matrix exceeds the dense cap")
    rows_i = np.repeat(np.arange(n), m)
    cols_j = np.tile(np.arange(m), n)
    var = np.arange(n * m)
    a_eq = sparse.coo_matrix(
        (np.ones(2 * n * m), (np.concatenate([rows_i, n + cols_j]), np.concatenate([var, var]))),
        shape=(n + m, n * m)).tocsr()[:-1]
    b_eq = np.concatenate([lam.weights, mu.weights])[:-1]
    res = optimize.linprog(cmat.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                           method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise ArithmeticError(f"transport LP failed: {res.message}")
    return float(res.fun)


def data_D(lam: DiscreteMeasure, mu: DiscreteMeasure, radius: float, spec: CostSpec,
           resolution: int, normalization: str = SCALE_INVARIANT,
           power_cost: bool = False) -> float:
    """Data term D(R): distance of each marginal from its own uniform density.

    Four-term sum: for each of lam and mu, the transport cost to the
    kappa-weighted Lebesgue quadrature of B_R (divided by |B_R|) plus
    R^p (kappa - 1)^p / kappa^{p-1}.  The cost defaults to the spec's c;
    power_cost=True switches the W terms to the raw |x - y|^p cost.
    The scale invariant form divides the whole sum by R^p.
    """
    wl, _, kl = _data_half(lam, radius, spec, resolution, power_cost)
    wm, _, km = _data_half(mu, radius, spec, resolution, power_cost)
    total = wl + kl + wm + km
    if normalization == SCALE_INVARIANT:
        return total / radius ** spec.p
    if normalization == PLAIN_VOLUME:
        return total
    raise ValueError("unknown normalization")


def compute_smallness(plan: TransportPlan, spec: CostSpec, radii: Sequence[float],
                      resolution: int, normalization: str = SCALE_INVARIANT) -> SmallnessReport:
    """E(R) and D(R) of a plan over a family of radii."""
    e_vals = {r: energy_E(plan, r, spec, normalization) for r in radii}
    d_vals = {r: data_D(plan.source, plan.target, r, spec, resolution, normalization)
              for r in radii}
    return SmallnessReport(e_vals, d_vals, normalization)


def triangle_constant(eps: float, p: float) -> float:
    """Constant C(eps) in W_c(m1,m3) <= (1+eps) W_c(m1,m2) + C(eps) W_c(m2,m3).

    For the implemented p-homogeneous convex costs the pointwise split
    c(a+b) = c(t (a/t) + (1-t) (b/(1-t))) <= t^{1-p} c(a) + (1-t)^{1-p} c(b)
    is exact; choosing t with t^{1-p} = 1 + eps gives

        C(eps) = (1 - (1+eps)^{-1/(p-1)})^{1-p}.

    No ellipticity factors enter because the split never leaves the
    exact convexity of the cost itself.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    t = (1.0 + eps) ** (-1.0 / (p - 1.0))
    return (1.0 - t) ** (1.0 - p)


@dataclasses.dataclass(frozen=True)
class TriangleReport:
    lhs: float
    rhs: float
    c_used: float
    w12: float
    w23: float
    w13: float
    passed: bool


def triangle_check(mu1: DiscreteMeasure, mu2: DiscreteMeasure, mu3: DiscreteMeasure,
                   eps: float, spec: CostSpec) -> TriangleReport:
    """Evaluate the triangle-type inequality on an admissible triple."""
    w12 = transport_cost(mu1, mu2, spec)
    w23 = transport_cost(mu2, mu3, spec)
    w13 = transport_cost(mu1, mu3, spec)
    c = triangle_constant(eps, spec.p)
    rhs = (1.0 + eps) * w12 + c * w23
    return TriangleReport(w13, rhs, c, w12, w23, w13, w13 <= rhs + 1e-9)


def add_constant_check(mu1: DiscreteMeasure, mu2: DiscreteMeasure,
                       spec: CostSpec) -> float:
    """Ratio W_c(m1, m2) / W_c(m1 + m2, 2 m2); nan marks the 0/0 case.

    The denominator adds the common measure m2 to both sides, which can
    only help transport; the ratio stays bounded over reasonable
    families and that boundedness is what the suite asserts.
    """
    num = transport_cost(mu1, mu2, spec)
    summed = DiscreteMeasure(np.concatenate([mu1.points, mu2.points]),
                             np.concatenate([mu1.weights, mu2.weights]))
    doubled = DiscreteMeasure(mu2.points, 2.0 * mu2.weights)
    den = transport_cost(summed, doubled, spec)
    if den <= 1e-15 and num <= 1e-15:
        return math.nan
    return num / den if den > 0 else math.inf


@dataclasses.dataclass(frozen=True)
class ActionReport:
    direct: float
    duality_form: float
    n_covectors: int

    @property
    def passed(self) -> bool:
        return self.duality_form <= self.direct + 1e-9 * (1.0 + abs(self.direct))


def benamou_brenier_action(rho_path: Sequence[DiscreteMeasure],
                           j_path: Sequence[np.ndarray], spec: CostSpec,
                           covectors: Optional[np.ndarray] = None) -> ActionReport:
    """Action of a discrete density/momentum path, two ways.

    rho_path holds T snapshots; j_path holds the matching per-atom
    momentum vectors (the flux integrated over each atom's cell).  The
    direct form integrates c(j/rho) rho over atoms and timesteps with
    dt = 1/T.  The duality form evaluates

        sup_b  int b . dj - c*(b) drho

    over a finite covector family (defaults to gradients of the cost at
    the observed velocities plus the origin) and must sit below the
    direct form, which the report records.
    """
    if len(rho_path) != len(j_path) or not rho_path:
        raise ValueError("need matching, non-empty snapshot lists")
    t_steps = len(rho_path)
    dt = 1.0 / t_steps
    direct = 0.0
    velocities = []
    for rho, j in zip(rho_path, j_path):
        j = np.asarray(j, dtype=float)
        if j.shape != rho.points.shape:
            raise ValueError("momentum shape must match the snapshot atoms")
        w = rho.weights
        zero = w <= 0.0
        if np.any(zero & (np.linalg.norm(j, axis=1) > 0.0)):
            raise ValueError("momentum charges an atom with no mass")
        v = np.zeros_like(j)
        v[~zero] = j[~zero] / w[~zero, None]
        velocities.append(v[~zero])
        direct += dt * float(np.sum(w[~zero] * cost_eval(spec, v[~zero])))

    if covectors is None:
        vel = np.concatenate(velocities) if velocities else np.zeros((0, rho_path[0].dim))
        seeds = [np.zeros(rho_path[0].dim)]
        if len(vel):
            seeds.append(vel.mean(axis=0))
            seeds.append(vel[np.argmax(np.linalg.norm(vel, axis=1))])
        covectors = np.asarray(cost_grad(spec, np.array(seeds)))
    covectors = np.atleast_2d(covectors)

    best = -math.inf
    for b in covectors:
        cb = float(dual_eval(spec, b))
        val = 0.0
        for rho, j in zip(rho_path, j_path):
            val += dt * (float(np.sum(np.asarray(j, float) @ b)) - cb * rho.total_mass)
        best = max(best, val)
    return ActionReport(direct, best, len(covectors))


@dataclasses.dataclass(frozen=True)
class C2MeasuresReport:
    lhs: float
    rhs: float
    k_used: float
    w_used: float
    holder_seminorm: float
    passed: bool


def c2measures_check(xi: Callable[[np.ndarray], np.ndarray], alpha: float,
                     mu: DiscreteMeasure, radius: float, spec: CostSpec,
                     resolution: int, seed: int = 0) -> C2MeasuresReport:
    """Check the Taylor-type comparison of a Holder field against measures.

    lhs = |int xi (dmu - kappa dx)| over B_R by quadrature; rhs is the
    product [xi]_{C^alpha} W^{alpha/p} R^{2d(p-alpha)/p} with W the
    transport cost between mu's restriction and its uniform density.
    The pass constant K comes from the growth certificate: the chain
    |lhs| <= [xi] (Lambda W)^{alpha/p} mass^{1-alpha/p} gives

        K = Lambda^{alpha/p} mass^{(p-alpha)/p} / R^{2d(p-alpha)/p}

    padded 25 percent for the grid-sampled seminorm.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    ball = Ball.at_origin(radius, dim=mu.dim)
    local = restrict(mu, ball)
    k = local.total_mass / ball.volume
    if not 0.5 <= k <= 2.0:
        raise ValueError("mu must carry mass comparable to the ball")
    quad = lebesgue_quadrature(ball, resolution)
    xi_mu = np.asarray(xi(local.points), dtype=float)
    xi_quad = np.asarray(xi(quad.points), dtype=float)
    lhs = abs(float(np.sum(xi_mu * local.weights) - k * np.sum(xi_quad * quad.weights)))

    target = DiscreteMeasure(quad.points, quad.weights * k)
    w = transport_cost(local, target.with_mass(local.total_mass), spec)

    # grid estimate of the Holder seminorm: neighbor pairs plus a seeded
    # random batch; an underestimate, absorbed into K's padding
    rng = np.random.default_rng(seed)
    pts = quad.points
    n = len(pts)
    ia = rng.integers(0, n, size=min(4000, n * (n - 1) // 2))
    ib = rng.integers(0, n, size=len(ia))
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    num = np.abs(xi_quad[ia] - xi_quad[ib])
    den = np.linalg.norm(pts[ia] - pts[ib], axis=1) ** alpha
    sem = float((num / den).max()) if len(num) else 0.0
    if n > 1:
        shift = np.roll(np.arange(n), 1)
        sem = max(sem, float(np.max(
            np.abs(xi_quad - xi_quad[shift])
            / np.linalg.norm(pts - pts[shift], axis=1) ** alpha)))

    rhs = sem * w ** (alpha / spec.p) * radius ** (2.0 * mu.dim * (spec.p - alpha) / spec.p)
    mass = local.total_mass
    k_const = (spec.lambda_cap ** (alpha / spec.p) * mass ** ((spec.p - alpha) / spec.p)
               / radius ** (2.0 * mu.dim * (spec.p - alpha) / spec.p)) * 1.25
    passed = lhs <= k_const * rhs + 1e-12
    return C2MeasuresReport(lhs, rhs, k_const, w, sem, passed)


@dataclasses.dataclass(frozen=True)
class LocalisationReport:
    lhs: float
    rhs: float
    w_localized: float
    smallness: float
    passed: bool


def localisation_check(plan: TransportPlan, radius: float, spec: CostSpec,
                       delta: float, tau: float, resolution: int = 12) -> LocalisationReport:
    """Compare the plan's localized cost with the localized problem's value.

    lhs integrates c(x - y) over trajectories meeting the closed ball
    (within the source-or-target-in-B_3 window); rhs solves transport
    between the restricted marginals augmented by the boundary entry and
    exit measures, scaled by 1 + delta, plus tau (E(4) + D(4)) in the
    defining normalization.
    """
    from .trajectories import entry_exit_atoms, omega_mask

    mask = omega_mask(plan, radius)
    x, y = plan.pairs()
    lhs = float(np.sum(plan.masses[mask] * cost_eval(spec, (x - y)[mask])))

    f_r, g_r = entry_exit_atoms(plan, radius)
    ball = Ball.at_origin(radius, dim=plan.source.dim)
    lam_in = restrict(plan.source, ball)
    mu_in = restrict(plan.target, ball)
    lam_aug = DiscreteMeasure(np.concatenate([lam_in.points, f_r.points]),
                              np.concatenate([lam_in.weights, f_r.weights]))
    mu_aug = DiscreteMeasure(np.concatenate([mu_in.points, g_r.points]),
                             np.concatenate([mu_in.weights, g_r.weights]))
    w_loc = transport_cost(lam_aug, mu_aug, spec)

    e4 = energy_E(plan, 4.0, spec, PLAIN_VOLUME)
    d4 = data_D(plan.source, plan.target, 4.0, spec, resolution, PLAIN_VOLUME)
    rhs = (1.0 + delta) * w_loc + tau * (e4 + d4)
    return LocalisationReport(lhs, rhs, w_loc, e4 + d4, lhs <= rhs + 1e-9)


@dataclasses.dataclass(frozen=True)
class DataRestrictionReport:
    integral_estimate: float
    d4_half: float
    ratio: float
    degenerate: bool

    @property
    def passed(self) -> bool:
        return self.degenerate or math.isfinite(self.ratio)


def data_restriction_check(mu: DiscreteMeasure, spec: CostSpec,
                           radii: Optional[Sequence[float]] = None,
                           resolution: int = 12) -> DataRestrictionReport:
    """Trapezoid estimate of the restricted-data integral against D(4).

    Approximates int_2^3 [ W_c(mu on B_R, kappa dx on B_R)
    + (kappa - 1)^p / kappa ] dR on an 11-point grid and returns its
    ratio to the mu half of D(4) (plain normalization).  The integrand
    is piecewise smooth in R away from finitely many radii where atoms
    cross the boundary, which the trapezoid rule tolerates.

    `resolution` counts quadrature rings at radius 4 and is rescaled
    per scan radius, so every integrand value shares one radial cell
    width and the R-profile is not warped by discretization.
    """
    if radii is None:
        radii = np.linspace(2.0, 3.0, 11)
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.min() < 2.0 - 1e-12 or radii.max() > 3.0 + 1e-12:
        raise ValueError("scan radii must stay within [2, 3]")

    vals = []
    for r in radii:
        ball = Ball.at_origin(r, dim=mu.dim)
        local = restrict(mu, ball)
        k = local.total_mass / ball.volume
        if k <= 0.0:
            raise ValueError("zero local mass inside a scan ball")
        res_r = max(3, int(round(resolution * r / 4.0)))
        target = _uniform_target(ball, res_r, k)
        w = transport_cost(local, target.with_mass(local.total_mass), spec)
        vals.append(w + abs(k - 1.0) ** spec.p / k)
    integral = float(np.trapezoid(vals, radii))

    w4, _, k4 = _data_half(mu, 4.0, spec, resolution, power_cost=False)
    d4_half = w4 + k4
    if d4_half <= 1e-12 and integral <= 1e-9:
        return DataRestrictionReport(integral, d4_half, math.nan, True)
    ratio = integral / d4_half if d4_half > 0 else math.inf
    return DataRestrictionReport(integral, d4_half, ratio, False)


def save_plan(plan: TransportPlan, path: str, spec: CostSpec) -> None:
    """Write entries as CSV rows (i, j, mass) under a JSON comment header."""
    header = {
        "cost": spec.to_dict(),
        "total_cost": plan.total_cost,
        "dual_gap": plan.dual_gap,
        "n_source": plan.source.n_atoms,
        "n_target": plan.target.n_atoms,
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("i,j,mass\n")
        for i, j, m in zip(plan.idx_source, plan.idx_target, plan.masses):
            fh.write(f"{int(i)},{int(j)},{float(m)!r}\n")


def load_plan(path: str, source: DiscreteMeasure, target: DiscreteMeasure) -> TransportPlan:
    """Rebuild a plan saved by save_plan; marginals must be supplied."""
    with open(path) as fh:
        header = json.loads(fh.readline().lstrip("# "))
        fh.readline()  # column row
        rows = [line.strip().split(",") for line in fh if line.strip()]
    i = np.array([int(r[0]) for r in rows])
    j = np.array([int(r[1]) for r in rows])
    m = np.array([float(r[2]) for r in rows])
    return TransportPlan(source, target, i, j, m,
                         total_cost=header["total_cost"], dual_gap=header["dual_gap"])

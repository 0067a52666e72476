"""Backward grid solvers for the stiff nonlocal equation and its averaged limit.

Both solvers march the terminal payoff backwards with a monotone explicit
treatment of the local Bellman part (central second differences, first-order
upwind first differences, step size from the scheme's positivity bound).  The
stiff nonlocal part in the factor variable is linear, so it is folded into an
implicit solve: the generator restricted to the factor grid is assembled once
from closed-form cell masses of the jump measure (small jumps below one grid
spacing become an exact-variance diffusion stencil, jumps landing between
nodes are split by linear interpolation, jumps leaving the grid use linear
extrapolation with the boundary gradient, and the dropped far-tail mass is
reported as a diagnostic).

Scope: one slow dimension.  The multi-asset pricing system is diagonal, so
per-asset solves cover it; nothing here attempts coupled multi-dimensional
grids.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .ergodicity import InvariantMeasure
from .errors import CFLViolation, NumericalError, UsageError
from .levy_measures import (
    LevyMeasureModel,
    interval_first_moment,
    interval_mass,
    require_assumptions,
    tail_mass,
    truncated_moment,
)

CFL_SAFETY = 0.9


class BoundaryPolicy(enum.Enum):
    NO_BC_INTERIOR_SCHEME = "no-bc-interior-scheme"


@dataclass(frozen=True)
class QuadraticControlStructure:
    """Multiplicative single-asset structure the fast solver path exploits.

    Drift ``x (beta0 + beta1 u)`` and volatility ``sqrt(2) x sigma(y) u^power``
    with power 0 (no control on the noise) or 1 (proportional exposure).  The
    Bellman objective is then a parabola in u, so grid minimization reduces to
    the endpoints plus the grid neighbours of the vertex.
    """

    beta0: float
    beta1: float
    sigma_of_y: Callable[[np.ndarray], np.ndarray]
    vol_u_power: int  # 0 or 1

    def drift_coefficient(self, u):
        return self.beta0 + self.beta1 * u

    def nonnegative_drift_on(self, controls: np.ndarray) -> bool:
        return bool(np.all(self.beta0 + self.beta1 * np.asarray(controls) >= 0.0))


@dataclass(frozen=True)
class ControlProblemSpec:
    """Coefficients, control grid, and payoff of the stochastic control problem.

    ``drift(x, y, u)`` and ``vol(x, y, u)`` are the SDE coefficients (any
    root-two convention already included), vectorized over x and y arrays.
    Coefficients are assumed Lipschitz, bounded in y, and vanishing at x = 0,
    which makes the x = 0 boundary characteristic: the schemes never impose a
    lateral boundary condition there.  ``growth_K`` records the constant in
    the quadratic payoff bound |g| <= K (1 + x^2).
    """

    drift: Callable
    vol: Callable
    control_grid: np.ndarray
    payoff: Callable
    discount: float
    horizon: float
    growth_K: float
    dim_x: int = 1
    growth_order: int = 2
    multiplicative: bool = False
    structure: Optional[QuadraticControlStructure] = None

    def __post_init__(self):
        if self.dim_x != 1:
            raise UsageError("solvers cover one slow dimension (per-asset solves)")
        if self.discount < 0.0:
            raise UsageError("discount must be nonnegative")
        if self.horizon <= 0.0:
            raise UsageError("horizon must be positive")
        if len(np.asarray(self.control_grid)) == 0:
            raise UsageError("control grid must be nonempty")

    def bellman(self, x, y, p, X):
        """Vectorized Bellman Hamiltonian min_u {-1/2 vol^2 X - drift p} over y."""
        y = np.asarray(y, dtype=float)
        best = None
        for u in np.asarray(self.control_grid):
            vol = np.asarray(self.vol(x, y, float(u)), dtype=float)
            dri = np.asarray(self.drift(x, y, float(u)), dtype=float)
            val = -0.5 * vol * vol * X - dri * p
            best = val if best is None else np.minimum(best, val)
        return best


def hamiltonian_eval(spec: ControlProblemSpec, x, y, p, X) -> tuple[float, float]:
    """Bellman minimization over the finite control grid; first index wins ties."""
    controls = np.asarray(spec.control_grid, dtype=float)
    vals = np.empty(len(controls))
    for k, u in enumerate(controls):
        vol = float(spec.vol(x, y, float(u)))
        dri = float(spec.drift(x, y, float(u)))
        vals[k] = -0.5 * vol * vol * X - dri * p
    k = int(np.argmin(vals))
    return float(vals[k]), float(controls[k])


@dataclass(frozen=True)
class Grids:
    """Grid request for the solvers; ``dt=None`` picks the stability bound."""

    x: np.ndarray
    y: Optional[np.ndarray] = None
    dt: Optional[float] = None
    n_checkpoints: int = 51

    def __post_init__(self):
        x = np.asarray(self.x)
        if len(x) < 3 or np.any(np.diff(x) <= 0):
            raise UsageError("x grid must be increasing with at least 3 nodes")
        if np.max(np.abs(np.diff(x) - (x[1] - x[0]))) > 1e-9 * (x[1] - x[0]):
            raise UsageError("x grid must be uniform")
        if self.y is not None:
            y = np.asarray(self.y)
            dy = np.diff(y)
            if len(y) < 5 or np.any(dy <= 0):
                raise UsageError("y grid must be increasing with at least 5 nodes")
            if np.max(np.abs(dy - dy[0])) > 1e-9 * dy[0]:
                raise UsageError("y grid must be uniform")


@dataclass(frozen=True)
class ValueField:
    """Discrete value function on checkpointed time slices.

    ``values`` has shape (n_t, n_x) or (n_t, n_x, n_y); the slice at the final
    checkpoint (t = horizon) is the exact terminal payoff.
    """

    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    y_grid: Optional[np.ndarray] = None
    boundary_policy: BoundaryPolicy = BoundaryPolicy.NO_BC_INTERIOR_SCHEME
    epsilon: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("value field contains non-finite entries")

    def quadratic_growth_ratio(self) -> float:
        """max |V| / (1 + x^2) over the whole stored field."""
        denom = 1.0 + self.x_grid**2
        if self.values.ndim == 3:
            return float(np.max(np.abs(self.values) / denom[None, :, None]))
        return float(np.max(np.abs(self.values) / denom[None, :]))


def _checkpoint_times(horizon: float, n_t: int, n_checkpoints: int) -> np.ndarray:
    idx = np.unique(np.linspace(0, n_t, min(n_checkpoints, n_t + 1)).round().astype(int))
    return idx


def _upwind_derivatives(v: np.ndarray, dx: float, axis: int = 0):
    """Forward/backward/second differences with one-sided closures.

    The first row uses only forward information and the last only backward;
    curvature vanishes at both ends (payoffs here are asymptotically linear or
    sublinear, and x = 0 is characteristic).
    """
    v = np.moveaxis(v, axis, 0)
    fwd = np.zeros_like(v)
    bwd = np.zeros_like(v)
    d2 = np.zeros_like(v)
    fwd[:-1] = (v[1:] - v[:-1]) / dx
    bwd[1:] = (v[1:] - v[:-1]) / dx
    d2[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dx * dx)
    return (
        np.moveaxis(fwd, 0, axis),
        np.moveaxis(bwd, 0, axis),
        np.moveaxis(d2, 0, axis),
    )


def _cfl_step(a_max_over_dx2: float, b_max_over_dx: float, c: float, dt_req: Optional[float]):
    denom = 2.0 * a_max_over_dx2 + b_max_over_dx + c
    dt_bound = math.inf if denom == 0.0 else 1.0 / denom
    if dt_req is None:
        return CFL_SAFETY * min(dt_bound, 1.0)
    if dt_req > dt_bound:
        raise CFLViolation(
            f"explicit step {dt_req:g} violates the positivity bound {dt_bound:g}",
            suggested_dt=CFL_SAFETY * dt_bound,
        )
    return dt_req


def assemble_factor_generator(
    model: LevyMeasureModel,
    y_grid: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Dense matrix of the generator restricted to a uniform factor grid.

    Row sums vanish exactly (constants are in the kernel): the diagonal only
    absorbs the jump mass actually routed to columns, and jumps beyond the
    outer cut are treated as landing at the start point.  The relative mass
    dropped that way is returned in the diagnostics.
    """
    y = np.asarray(y_grid, dtype=float)
    ny = len(y)
    dy = float(y[1] - y[0])
    if dy >= 1.0:
        raise UsageError("factor grid spacing must be below the compensator cut 1")
    from .nonlocal_generator import default_outer_cut

    m_cut = max(default_outer_cut(model), y[-1] - y[0] + 1.0)
    L = np.zeros((ny, ny))
    dropped = 0.0

    if model.intensity > 0.0:
        # small jumps |z| <= dy: exact-variance central diffusion stencil
        half_m2 = 0.5 * truncated_moment(model, 2, dy)
        for i in range(1, ny - 1):
            L[i, i - 1] += half_m2 / dy**2
            L[i, i] += -2.0 * half_m2 / dy**2
            L[i, i + 1] += half_m2 / dy**2

        # leftover compensator mean of jumps dy < |z| <= 1
        comp = interval_first_moment(model, dy, 1.0)
        if model.two_sided:
            comp += interval_first_moment(model, -1.0, -dy)
    else:
        comp = 0.0

    # drift -(y + comp) d/dy, upwinded; mean reversion points inward so the
    # needed neighbour exists wherever the coefficient is large
    for i in range(ny):
        beta = -(y[i] + (comp if model.intensity > 0.0 else 0.0))
        if beta >= 0.0 and i < ny - 1:
            L[i, i] -= beta / dy
            L[i, i + 1] += beta / dy
        elif beta < 0.0 and i > 0:
            L[i, i] -= -beta / dy
            L[i, i - 1] += -beta / dy

    if model.intensity > 0.0:
        sides = (1.0, -1.0) if model.two_sided else (1.0,)
        for i in range(ny):
            for s in sides:
                # resolved jumps: z in (dy, M], landing point linearly
                # interpolated between grid columns
                lo = dy
                edge = (y[-1] - y[i]) if s > 0 else (y[i] - y[0])
                hi_resolved = min(max(edge, lo), m_cut)
                j_start = i
                while True:
                    j_next = j_start + 1 if s > 0 else j_start - 1
                    if j_next < 0 or j_next >= ny:
                        break
                    a = abs(y[j_start] - y[i])
                    b = abs(y[j_next] - y[i])
                    a_eff, b_eff = max(a, lo), min(b, hi_resolved)
                    if b_eff > a_eff:
                        mass = interval_mass(model, s * b_eff, s * a_eff) if s < 0 else interval_mass(model, a_eff, b_eff)
                        mom = interval_first_moment(model, s * b_eff, s * a_eff) if s < 0 else interval_first_moment(model, a_eff, b_eff)
                        mom = abs(mom)
                        w_far = (mom - a * mass) / (b - a)
                        w_near = mass - w_far
                        L[i, j_start] += w_near
                        L[i, j_next] += w_far
                        L[i, i] -= mass
                    j_start = j_next
                    if b >= hi_resolved:
                        break

                # jumps leaving the grid: linear extrapolation with the
                # boundary gradient up to the outer cut
                start = max(edge, lo)
                if start < m_cut:
                    mass = interval_mass(model, start, m_cut) if s > 0 else interval_mass(model, -m_cut, -start)
                    mom = interval_first_moment(model, start, m_cut) if s > 0 else -interval_first_moment(model, -m_cut, -start)
                    overshoot = mom - edge * mass  # int (|z| - edge) nu(dz) >= 0
                    if s > 0:
                        L[i, ny - 1] += mass + overshoot / dy
                        L[i, ny - 2] += -overshoot / dy
                    else:
                        L[i, 0] += mass + overshoot / dy
                        L[i, 1] += -overshoot / dy
                    L[i, i] -= mass
                dropped += tail_mass(model, m_cut) / len(sides)

    diagnostics = {
        "extrapolated_tail_mass": dropped / ny,
        "outer_cut": m_cut,
        "grid_spacing": dy,
    }
    return L, diagnostics


class _LocalBellman:
    """Explicit monotone evaluation of the local Bellman part on the grid."""

    def __init__(self, spec: ControlProblemSpec, x: np.ndarray, y_vals: np.ndarray,
                 weights: Optional[np.ndarray]):
        self.spec = spec
        self.x = x
        self.dx = float(x[1] - x[0])
        self.y_vals = y_vals          # factor grid (pide) or measure atoms (effective)
        self.weights = weights        # None for pide, atom weights for effective
        st = spec.structure
        controls = np.asarray(spec.control_grid, dtype=float)
        self.fast = (
            st is not None
            and st.vol_u_power in (0, 1)
            and st.nonnegative_drift_on(controls)
        )
        if self.fast:
            self.sig2 = np.asarray(st.sigma_of_y(np.asarray(y_vals)), dtype=float) ** 2
            self.u_lo, self.u_hi = float(controls.min()), float(controls.max())
            self.du = float(controls[1] - controls[0]) if len(controls) > 1 else 0.0
            self.beta0, self.beta1 = st.beta0, st.beta1
            self.power = st.vol_u_power
            a_max = float(np.max(self.sig2)) * float(np.max(np.abs(x))) ** 2
            if self.power == 1:
                a_max *= max(self.u_lo**2, self.u_hi**2)
            b_max = float(np.max(np.abs(x))) * max(
                abs(self.beta0 + self.beta1 * self.u_lo),
                abs(self.beta0 + self.beta1 * self.u_hi),
            )
            self.a_over_dx2 = a_max / self.dx**2
            self.b_over_dx = b_max / self.dx
        else:
            # tensors (n_u, n_x, n_y): built once, coefficients are static
            xm, ym = np.meshgrid(x, y_vals, indexing="ij")
            a_list, b_list = [], []
            for u in controls:
                vol = np.asarray(spec.vol(xm, ym, float(u)), dtype=float)
                a_list.append(0.5 * vol * vol * np.ones_like(xm))
                b_list.append(np.asarray(spec.drift(xm, ym, float(u)), dtype=float) * np.ones_like(xm))
            self.a_t = np.stack(a_list)
            self.b_t = np.stack(b_list)
            self.a_over_dx2 = float(np.max(self.a_t)) / self.dx**2
            self.b_over_dx = float(np.max(np.abs(self.b_t))) / self.dx

    def _candidates(self, p_coef: np.ndarray, q_coef: np.ndarray) -> np.ndarray:
        """Grid-min of P u^2 + Q u over the control grid, 4 candidates."""
        us = [np.full_like(p_coef, self.u_lo), np.full_like(p_coef, self.u_hi)]
        if self.du > 0.0:
            with np.errstate(divide="ignore", invalid="ignore"):
                vertex = np.where(p_coef > 0.0, -q_coef / (2.0 * p_coef), self.u_lo)
            snapped = self.u_lo + np.floor((vertex - self.u_lo) / self.du) * self.du
            us.append(np.clip(snapped, self.u_lo, self.u_hi))
            us.append(np.clip(snapped + self.du, self.u_lo, self.u_hi))
        best = None
        for u in us:
            val = p_coef * u * u + q_coef * u
            best = val if best is None else np.minimum(best, val)
        return best

    def hamiltonian(self, v: np.ndarray) -> np.ndarray:
        """H evaluated with discrete derivatives; collapses the y axis iff weighted."""
        fwd, bwd, d2 = _upwind_derivatives(v, self.dx, axis=0)
        if self.fast:
            x = self.x if v.ndim == 1 else self.x[:, None]
            # drift is nonnegative on the grid, so upwinding is forward
            if v.ndim == 1:
                # effective solve: y axis lives in the atoms, broadcast to it
                p_par = (-(x**2) * d2)[:, None] * self.sig2[None, :]
                drift_lin = (-x * fwd)[:, None]
            else:
                p_par = (-(x**2) * d2) * self.sig2[None, :]
                drift_lin = -x * fwd
            if self.power == 1:
                h = self._candidates(p_par, self.beta1 * drift_lin) + self.beta0 * drift_lin
            else:
                h = p_par + drift_lin * (self.beta0 + self.beta1 * 0.0)
                if self.du > 0.0:
                    # control enters the drift only: linear in u, endpoint wins
                    h = np.minimum(
                        p_par + drift_lin * (self.beta0 + self.beta1 * self.u_lo),
                        p_par + drift_lin * (self.beta0 + self.beta1 * self.u_hi),
                    )
            if self.weights is not None:
                return h @ self.weights
            return h
        # general route: full control scan on static tensors
        if v.ndim == 1:
            fwd, bwd, d2 = fwd[:, None], bwd[:, None], d2[:, None]
        best = None
        for k in range(self.a_t.shape[0]):
            b = self.b_t[k]
            adv = np.where(b >= 0.0, b * fwd, b * bwd)
            val = -self.a_t[k] * d2 - adv
            best = val if best is None else np.minimum(best, val)
        if self.weights is not None:
            return best @ self.weights
        return best


def _collapse_sigma_atoms(mu: InvariantMeasure, max_atoms: int = 64):
    """Coarsen the measure for the solver: equal-weight blocks of sorted nodes."""
    if len(mu.nodes) <= max_atoms:
        return mu.nodes, mu.weights
    cum = np.concatenate([[0.0], np.cumsum(mu.weights)])
    bounds = np.linspace(0.0, 1.0, max_atoms + 1)
    nodes, weights = [], []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sel = (cum[:-1] < hi) & (cum[1:] > lo)
        if not np.any(sel):
            continue
        w = np.minimum(cum[1:][sel], hi) - np.maximum(cum[:-1][sel], lo)
        nodes.append(float(np.sum(w * mu.nodes[sel]) / np.sum(w)))
        weights.append(float(np.sum(w)))
    nodes = np.asarray(nodes)
    weights = np.asarray(weights)
    return nodes, weights / weights.sum()


def effective_solve(
    spec: ControlProblemSpec,
    mu: InvariantMeasure,
    grids: Grids,
) -> ValueField:
    """Backward solve of the measure-averaged limit equation on the slow grid.

    The averaged Hamiltonian is evaluated node-by-node (Bellman minimization
    inside the average) on the measure atoms, coarsened to at most 64 blocks;
    no lateral boundary condition is imposed, the x = 0 column evolves by pure
    discounting because the coefficients vanish there.
    """
    x = np.asarray(grids.x, dtype=float)
    atoms, weights = _collapse_sigma_atoms(mu)
    local = _LocalBellman(spec, x, atoms, weights)
    c = spec.discount
    dt = _cfl_step(local.a_over_dx2, local.b_over_dx, c, grids.dt)
    n_t = max(1, int(math.ceil(spec.horizon / dt)))
    dt = spec.horizon / n_t

    v = np.asarray(spec.payoff(x), dtype=float)
    keep = _checkpoint_times(spec.horizon, n_t, grids.n_checkpoints)
    slices = {n_t: v.copy()}
    for k in range(n_t - 1, -1, -1):
        v = v - dt * (local.hamiltonian(v) + c * v)
        if k in keep:
            slices[k] = v.copy()
    t_grid = np.array(sorted(slices)) * dt
    values = np.stack([slices[k] for k in sorted(slices)])
    return ValueField(
        t_grid=t_grid, x_grid=x, values=values,
        diagnostics={"dt": dt, "n_t": n_t, "atoms": len(atoms)},
    )


def pide_solve(
    spec: ControlProblemSpec,
    model: LevyMeasureModel,
    epsilon: float,
    grids: Grids,
) -> ValueField:
    """Backward IMEX solve of the stiff equation on the (x, y) grid.

    Explicit monotone stepping of the local Bellman part; the factor-direction
    generator (linear, scaled by 1/epsilon) is folded into one LU-factored
    implicit solve per step, so the stiffness never restricts the step.
    """
    if epsilon <= 0.0:
        raise UsageError("epsilon must be positive")
    if grids.y is None:
        raise UsageError("the stiff solve needs a factor grid")
    require_assumptions(model)

    x = np.asarray(grids.x, dtype=float)
    y = np.asarray(grids.y, dtype=float)
    gen, gen_diag = assemble_factor_generator(model, y)

    local = _LocalBellman(spec, x, y, weights=None)
    c = spec.discount
    dt = _cfl_step(local.a_over_dx2, local.b_over_dx, c, grids.dt)
    n_t = max(1, int(math.ceil(spec.horizon / dt)))
    dt = spec.horizon / n_t

    lhs = np.eye(len(y)) - (dt / epsilon) * gen
    lu, piv = linalg.lu_factor(lhs)

    v = np.repeat(np.asarray(spec.payoff(x), dtype=float)[:, None], len(y), axis=1)
    keep = _checkpoint_times(spec.horizon, n_t, grids.n_checkpoints)
    slices = {n_t: v.copy()}
    for k in range(n_t - 1, -1, -1):
        rhs = v - dt * (local.hamiltonian(v) + c * v)
        v = linalg.lu_solve((lu, piv), rhs.T).T
        if k in keep:
            slices[k] = v.copy()
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"implicit factor solve diverged at step {k}")
    t_grid = np.array(sorted(slices)) * dt
    values = np.stack([slices[k] for k in sorted(slices)])
    diagnostics = {"dt": dt, "n_t": n_t, **gen_diag}
    return ValueField(
        t_grid=t_grid, x_grid=x, values=values, y_grid=y,
        epsilon=epsilon, diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class CompactBox:
    """Axis-aligned box the uniform-convergence gap is measured over."""

    t: tuple[float, float]
    x: tuple[float, float]
    y: Optional[tuple[float, float]] = None


def sup_norm_gap(a: ValueField, b: ValueField, box: CompactBox) -> float:
    """Sup of |a - b| over the box, b linearly interpolated onto a's grid.

    ``a`` may carry a factor axis (the sup then also runs over the y-window);
    ``b`` must be a plain (t, x) field.
    """
    if b.y_grid is not None:
        raise UsageError("the reference field must not depend on the factor")
    t_sel = (a.t_grid >= box.t[0] - 1e-12) & (a.t_grid <= box.t[1] + 1e-12)
    x_sel = (a.x_grid >= box.x[0] - 1e-12) & (a.x_grid <= box.x[1] + 1e-12)
    if not (np.any(t_sel) and np.any(x_sel)):
        raise UsageError("box does not intersect the field grids")
    ts, xs = a.t_grid[t_sel], a.x_grid[x_sel]
    if ts[0] < b.t_grid[0] - 1e-9 or ts[-1] > b.t_grid[-1] + 1e-9:
        raise UsageError("box times leave the reference field's domain")
    if xs[0] < b.x_grid[0] - 1e-9 or xs[-1] > b.x_grid[-1] + 1e-9:
        raise UsageError("box states leave the reference field's domain")

    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator((b.t_grid, b.x_grid), b.values, method="linear")
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    ref = interp(np.stack([tt.ravel(), xx.ravel()], axis=1)).reshape(tt.shape)

    sub = a.values[np.ix_(t_sel, x_sel)]
    if a.values.ndim == 3:
        if box.y is not None and a.y_grid is not None:
            y_sel = (a.y_grid >= box.y[0] - 1e-12) & (a.y_grid <= box.y[1] + 1e-12)
            if not np.any(y_sel):
                raise UsageError("y window does not intersect the factor grid")
            sub = sub[:, :, y_sel]
        return float(np.max(np.abs(sub - ref[:, :, None])))
    return float(np.max(np.abs(sub - ref)))

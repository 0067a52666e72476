"""Seeded simulation of stable increments, the fast factor, and the controlled system.

Increment sampling uses the Chambers-Mallows-Stuck transformation of one
uniform and one exponential variate.  With U ~ Uniform(-pi/2, pi/2) and
E ~ Exp(1),

    X = S * sin(a (U + B)) / cos(U)^(1/a) * (cos(U - a (U + B)) / E)^((1-a)/a),
    B = arctan(beta tan(pi a / 2)) / a,   S = (1 + beta^2 tan^2(pi a / 2))^(1/(2a)),

is standard stable with stability ``a``, skewness ``beta``, unit scale and zero
location in the parameterization whose characteristic function is
``exp(-|u|^a (1 - i beta sgn(u) tan(pi a / 2)))``.  The symmetric family uses
``beta = 0``; the one-sided family uses ``beta = 1`` plus the deterministic
drift left over by compensating only jumps with ``|z| <= 1``
(:func:`~levy_multiscale.levy_measures.compensator_drift`), so increments over
internal time ``tau`` satisfy ``E exp(iuZ) = exp(tau * psi(u))`` exactly, with
``psi`` the model's Levy-Khintchine exponent.

Randomness derives from one 64-bit seed through numpy ``SeedSequence`` spawn
keys: key ``(0,)`` feeds the jump stream, ``(1,)`` the Brownian stream, and
further components get successive keys.  Draws are vectorized across paths, so
a batch is reproduced bit-for-bit from (seed, n_paths, dt, horizon).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import UsageError
from .levy_measures import LevyMeasureModel, compensator_drift, stable_scale_exponent

JUMP_STREAM = 0
BROWNIAN_STREAM = 1


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-keyed substream: ``default_rng(SeedSequence(seed, spawn_key=(stream,)))``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def default_step(epsilon: float, horizon: float) -> float:
    """Default step ``min(eps/20, horizon/2000)`` resolving the fast scale."""
    return min(epsilon / 20.0, horizon / 2000.0)


@dataclass(frozen=True)
class FastProcessConfig:
    """Parameters of the mean-reverting factor ``dY = -lam Y dt + dZ(lam t)``."""

    model: LevyMeasureModel
    lam: float
    y0: float
    horizon: float
    dt: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0.0:
            raise UsageError(f"mean-reversion rate must be positive, got {self.lam}")
        if self.horizon <= 0.0:
            raise UsageError("horizon must be positive")
        step = self.step
        if not 0.0 < step < self.horizon:
            raise UsageError(f"need 0 < dt < horizon, got dt={step}")

    @property
    def epsilon(self) -> float:
        return 1.0 / self.lam

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else default_step(self.epsilon, self.horizon)


@dataclass(frozen=True)
class PathSample:
    """One simulated trajectory on a uniform grid starting at time 0."""

    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0.0):
            raise UsageError("times must start at 0 and strictly increase")
        if len(self.times) != len(self.values):
            raise UsageError("times and values must have equal length")


@dataclass(frozen=True)
class SlowSystemConfig:
    """Controlled slow state coupled to a fast factor.

    ``problem`` is a control-problem description (see hjb_solvers); only its
    coefficient handles and control grid are used here.  ``control_policy``
    maps (t, x, y) to a control value; ``None`` means the first grid control.
    """

    problem: object
    fast: FastProcessConfig
    x0: float
    control_policy: Optional[Callable[[float, float, float], float]] = None

    def __post_init__(self):
        if np.any(np.asarray(self.x0) < 0.0):
            raise UsageError("slow initial state must be componentwise nonnegative")


def standard_stable(alpha: float, beta: float, u: np.ndarray, e: np.ndarray) -> np.ndarray:
    """CMS transform of uniforms ``u`` on (-pi/2, pi/2) and unit exponentials ``e``."""
    inv_a = 1.0 / alpha
    if beta == 0.0:
        return (
            np.sin(alpha * u)
            / np.cos(u) ** inv_a
            * (np.cos((1.0 - alpha) * u) / e) ** ((1.0 - alpha) * inv_a)
        )
    skew = math.tan(math.pi * alpha / 2.0)
    b = math.atan(beta * skew) * inv_a
    s = (1.0 + beta * beta * skew * skew) ** (0.5 * inv_a)
    return (
        s
        * np.sin(alpha * (u + b))
        / np.cos(u) ** inv_a
        * (np.cos(u - alpha * (u + b)) / e) ** ((1.0 - alpha) * inv_a)
    )


def sample_stable_increment(
    model: LevyMeasureModel,
    dt_scaled: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
    allow_subordinator: bool = False,
):
    """One increment (or a batch) of the driver over internal time ``dt_scaled``.

    Scaling uses self-similarity: the increment has stable scale
    ``(sigma^alpha * dt_scaled)^(1/alpha)`` plus ``dt_scaled`` times the
    compensator drift.  Returns a scalar when ``size`` is None.
    """
    if dt_scaled <= 0.0:
        raise UsageError(f"dt_scaled must be positive, got {dt_scaled}")
    if model.subordinator and not allow_subordinator:
        raise UsageError(
            "subordinator-mode models are refused by default; "
            "pass allow_subordinator=True for counterexample studies"
        )
    if not isinstance(rng, np.random.Generator):
        raise UsageError("rng must be a numpy Generator")

    n = 1 if size is None else size
    if model.intensity == 0.0:
        out = np.zeros(n)
        return float(out[0]) if size is None else out

    u = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=n)
    e = rng.standard_exponential(size=n)
    beta = 0.0 if model.two_sided else 1.0
    scale = (stable_scale_exponent(model) * dt_scaled) ** (1.0 / model.alpha)
    out = scale * standard_stable(model.alpha, beta, u, e)
    out += dt_scaled * compensator_drift(model)
    return float(out[0]) if size is None else out


def _decay(cfg: FastProcessConfig) -> float:
    return math.exp(-cfg.lam * cfg.step)


def _n_steps(cfg: FastProcessConfig) -> int:
    return int(round(cfg.horizon / cfg.step))


def iter_fast_values(
    cfg: FastProcessConfig,
    n_paths: int,
    rng: Optional[np.random.Generator] = None,
    allow_subordinator: bool = False,
) -> Iterator[np.ndarray]:
    """Stream the factor states at grid times 0, dt, 2*dt, ... across a path batch.

    Yields the state *before* each update, n_steps + 1 arrays in total, so
    consumers see left endpoints.  The recursion is

        Y_{k+1} = exp(-lam * dt) * Y_k + dZ_k,   dZ_k over internal time lam * dt,

    i.e. exact exponential decay with the whole jump increment applied at the
    end of the step.
    """
    if rng is None:
        rng = stream_rng(cfg.seed, JUMP_STREAM)
    a = _decay(cfg)
    tau = cfg.lam * cfg.step
    y = np.full(n_paths, float(cfg.y0))
    for _ in range(_n_steps(cfg)):
        yield y
        dz = sample_stable_increment(
            cfg.model, tau, rng, size=n_paths, allow_subordinator=allow_subordinator
        )
        y = a * y + dz
    yield y


def simulate_fast_paths(cfg: FastProcessConfig, n_paths: int) -> tuple[np.ndarray, np.ndarray]:
    """Full batch of factor paths; returns (times, values[n_paths, n_times])."""
    n = _n_steps(cfg)
    times = np.arange(n + 1) * cfg.step
    values = np.empty((n_paths, n + 1))
    for k, y in enumerate(iter_fast_values(cfg, n_paths)):
        values[:, k] = y
    return times, values


def simulate_fast_path(cfg: FastProcessConfig) -> PathSample:
    """Single factor path, deterministic given the config seed."""
    times, values = simulate_fast_paths(cfg, 1)
    return PathSample(times=times, values=values[0], seed=cfg.seed)


def fast_terminal_values(cfg: FastProcessConfig, n_paths: int) -> np.ndarray:
    """Terminal states of a path batch without storing the trajectories."""
    y = None
    for y in iter_fast_values(cfg, n_paths):
        pass
    return y


def simulate_slow_system(cfg: SlowSystemConfig) -> tuple[PathSample, PathSample]:
    """Euler-Maruyama for the slow state with the factor read at left endpoints.

    Brownian increments come from a substream independent of the jump stream.
    For multiplicative coefficient models (those vanishing at x = 0) the update
    is applied in factor form with a floor at zero, so nonnegativity holds by
    construction; a plain Euler step overshooting zero is absorbed there,
    consistent with the coefficients vanishing on the boundary.
    """
    fast = cfg.fast
    prob = cfg.problem
    n = _n_steps(fast)
    dt = fast.step
    sq_dt = math.sqrt(dt)

    jump_rng = stream_rng(fast.seed, JUMP_STREAM)
    brown_rng = stream_rng(fast.seed, BROWNIAN_STREAM)

    times = np.arange(n + 1) * dt
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    x = float(cfg.x0)
    y = float(fast.y0)
    controls = np.asarray(prob.control_grid, dtype=float)
    policy = cfg.control_policy

    multiplicative = bool(getattr(prob, "multiplicative", False))
    a = _decay(fast)
    tau = fast.lam * dt

    for k in range(n + 1):
        xs[k] = x
        ys[k] = y
        if k == n:
            break
        t = times[k]
        if policy is None:
            u = float(controls[0])
        else:
            try:
                u = float(policy(t, x, y))
            except Exception as exc:
                raise UsageError(f"control policy failed at step {k} (t={t:g})") from exc
        dw = brown_rng.normal(0.0, sq_dt)
        drift = float(prob.drift(x, y, u))
        vol = float(prob.vol(x, y, u))
        if multiplicative and x > 0.0:
            x = x * max(1.0 + (drift * dt + vol * dw) / x, 0.0)
        elif multiplicative:
            x = 0.0
        else:
            x = x + drift * dt + vol * dw
        dz = sample_stable_increment(fast.model, tau, jump_rng)
        y = a * y + dz

    return (
        PathSample(times=times, values=xs, seed=fast.seed),
        PathSample(times=times, values=ys, seed=fast.seed),
    )

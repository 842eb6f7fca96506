"""Runge-Kutta integration of rectified-flow ODEs in both time directions.

Inversion integrates ascending time (image latent at ``t = 0`` to noise at
``t = 1``) and denoising integrates descending time.  Step sizes
``dt_i = t_i - t_{i-1}`` are always positive; the direction lives in the
sign of the update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tableau import ButcherTableau, TableauError, resolve_tableau, validate_tableau

INVERT = "invert"
DENOISE = "denoise"


class SolverError(RuntimeError):
    """Non-finite state or velocity encountered during integration."""


class ConfigurationError(ValueError):
    pass


class SaturationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).reshape(-1)
        if nodes.size < 2:
            raise ConfigurationError("time grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ConfigurationError("time grid nodes must be finite")
        if nodes[0] < 0 or nodes[-1] > 1:
            raise ConfigurationError(f"time grid must lie in [0, 1], got [{nodes[0]}, {nodes[-1]}]")
        if np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("time grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    def dt(self, i: int) -> float:
        return float(self.nodes[i] - self.nodes[i - 1])

    @property
    def span(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])

    def is_uniform(self, rtol=1e-9) -> bool:
        d = np.diff(self.nodes)
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]))


def make_time_grid(n_steps: int, nodes=None) -> TimeGrid:
    """Uniform grid ``t_i = i / n_steps`` on ``[0, 1]`` unless explicit ``nodes`` are given."""
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    if nodes is None:
        return TimeGrid(np.arange(n_steps + 1) / n_steps)
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size != n_steps + 1:
        raise ConfigurationError(f"{n_steps} steps need {n_steps + 1} nodes, got {nodes.size}")
    return TimeGrid(nodes)


@dataclass
class SolveResult:
    final: np.ndarray
    nfe: int
    slopes_last_step: list = field(default_factory=list)
    trajectory: list | None = None


@dataclass
class PerturbationSchedule:
    delta_0: np.ndarray
    per_step: list
    magnitude_bound: float = float("inf")

    def __post_init__(self):
        norms = [np.linalg.norm(self.delta_0)] + [np.linalg.norm(d) for d in self.per_step]
        if max(norms) > self.magnitude_bound * (1 + 1e-12):
            raise ConfigurationError(f"perturbation norm {max(norms)} exceeds bound {self.magnitude_bound}")

    @classmethod
    def zeros(cls, shape, n_steps):
        return cls(np.zeros(shape), [np.zeros(shape) for _ in range(n_steps)], 0.0)


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite values in {what}")
    return x


def _rk_step(field, z, t0, dt, sign, tab, condition, guidance, stage_hook, first_slope, label):
    slopes = []
    nfe = 0
    for s in range(tab.r):
        if s == 0 and first_slope is not None:
            slopes.append(first_slope)
            continue
        if s == 0:
            zs = z
        else:
            disp = sum(tab.a[s, j] * slopes[j] for j in range(s))
            zs = _finite(z + sign * dt * disp, f"stage {s + 1} state of {label}")
        hook = stage_hook(s + 1) if stage_hook is not None else None
        k = field(zs, t0 + sign * tab.c[s] * dt, condition, guidance, hook=hook)
        slopes.append(_finite(k, f"velocity at stage {s + 1} of {label}"))
        nfe += 1
    increment = sum(tab.b[j] * slopes[j] for j in range(tab.r))
    return _finite(z + sign * dt * increment, label), slopes, nfe


def rk_invert_step(field, z_prev, i, grid, tab, condition=None, guidance=1.0, stage_hook=None, first_slope=None):
    """Advance from ``t_{i-1}`` to ``t_i``; returns ``(z_next, slopes, nfe_used)``."""
    if not 1 <= i <= grid.n_steps:
        raise ConfigurationError(f"step index {i} outside [1, {grid.n_steps}]")
    z_prev = np.asarray(z_prev, dtype=float)
    return _rk_step(field, z_prev, float(grid.nodes[i - 1]), grid.dt(i), 1.0, tab, condition, guidance, stage_hook, first_slope, f"inversion step {i}")


def rk_denoise_step(field, z_cur, i, grid, tab, condition=None, guidance=1.0, stage_hook=None, first_slope=None):
    """Go back from ``t_i`` to ``t_{i-1}``; returns ``(z_next, slopes, nfe_used)``."""
    if not 1 <= i <= grid.n_steps:
        raise ConfigurationError(f"step index {i} outside [1, {grid.n_steps}]")
    z_cur = np.asarray(z_cur, dtype=float)
    return _rk_step(field, z_cur, float(grid.nodes[i]), grid.dt(i), -1.0, tab, condition, guidance, stage_hook, first_slope, f"denoising step {i}")


def euler_denoise(field, z_n, grid, condition=None, guidance=1.0):
    """Plain Euler sampler, ``Z_{t_{i-1}} = Z_{t_i} + (t_{i-1} - t_i) v(Z_{t_i}, t_i)``."""
    z = _finite(np.asarray(z_n, dtype=float), "initial state")
    nfe = 0
    k = None
    for i in range(grid.n_steps, 0, -1):
        t_i, t_prev = float(grid.nodes[i]), float(grid.nodes[i - 1])
        k = _finite(field(z, t_i, condition, guidance), f"velocity at denoising step {i}")
        nfe += 1
        z = z + (t_prev - t_i) * k
    return SolveResult(z, nfe, [k])


def supports_reuse(tab: ButcherTableau) -> bool:
    return tab.r == 2 and np.array_equal(tab.b, [0.0, 1.0])


def solve(
    field,
    z_init,
    grid,
    direction=DENOISE,
    tab="classic4",
    condition=None,
    guidance=1.0,
    reuse=False,
    record_trajectory=False,
):
    """Integrate over the whole grid.

    With ``reuse`` the first slope of every step after the first is the
    second (midpoint) slope of the previous step, so a midpoint scheme costs
    ``N + 1`` evaluations instead of ``2 N``.
    """
    tab = resolve_tableau(tab)
    problems = validate_tableau(tab)
    if problems:
        raise TableauError(f"invalid tableau {tab.name!r}: {problems}")
    if reuse and not supports_reuse(tab):
        raise ConfigurationError(f"slope reuse needs a 2-stage midpoint tableau with b = [0, 1]; got {tab.name!r}")
    if direction == INVERT:
        steps, step_fn, t_of = range(1, grid.n_steps + 1), rk_invert_step, lambda i: grid.nodes[i]
        t_start = grid.nodes[0]
    elif direction == DENOISE:
        steps, step_fn, t_of = range(grid.n_steps, 0, -1), rk_denoise_step, lambda i: grid.nodes[i - 1]
        t_start = grid.nodes[-1]
    else:
        raise ConfigurationError(f"direction must be {INVERT!r} or {DENOISE!r}, got {direction!r}")

    z = _finite(np.asarray(z_init, dtype=float), "initial state")
    trajectory = [(float(t_start), z.copy())] if record_trajectory else None
    nfe = 0
    slopes = []
    for i in steps:
        reused = slopes[1] if reuse and slopes else None
        z, slopes, used = step_fn(field, z, i, grid, tab, condition, guidance, first_slope=reused)
        nfe += used
        if record_trajectory:
            trajectory.append((float(t_of(i)), z.copy()))
    return SolveResult(z, nfe, slopes, trajectory)


def expected_nfe(tab, n_steps, reuse=False) -> int:
    tab = resolve_tableau(tab)
    return n_steps + 1 if reuse else tab.r * n_steps


@dataclass
class RoundtripReport:
    l2_error: float
    rel_error: float
    nfe_total: int
    noise: np.ndarray
    reconstruction: np.ndarray

    def as_row(self) -> dict:
        return {"l2_error": self.l2_error, "rel_error": self.rel_error, "nfe_total": self.nfe_total}


def roundtrip(field, z_0, grid, tab="classic4", condition=None, guidance=1.0, reuse=False) -> RoundtripReport:
    """Invert ``z_0`` to noise, denoise it back and report the reconstruction error."""
    z_0 = np.asarray(z_0, dtype=float)
    fwd = solve(field, z_0, grid, INVERT, tab, condition, guidance, reuse)
    back = solve(field, fwd.final, grid, DENOISE, tab, condition, guidance, reuse)
    l2 = float(np.linalg.norm(back.final - z_0))
    rel = l2 / max(float(np.linalg.norm(z_0)), 1e-30)
    return RoundtripReport(l2, rel, fwd.nfe + back.nfe, fwd.final, back.final)


@dataclass
class OrderEstimate:
    empirical_order: float
    h_list: list
    errors: list


def estimate_order(field, tab, h_list=(1 / 10, 1 / 20, 1 / 40, 1 / 80, 1 / 160), z0=1.0) -> OrderEstimate:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Each run denoises the exact state ``z(1)`` back to ``t = 0`` and compares
    with ``z0``.
    """
    if not field.has_exact_solution:
        raise ConfigurationError("order estimation needs a field with a closed-form solution")
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ConfigurationError("need at least three step sizes")
    for h, h_next in zip(h_list, h_list[1:]):
        if not np.isclose(h_next, h / 2, rtol=1e-9):
            raise ConfigurationError(f"step sizes must halve: {h} -> {h_next}")
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    z1 = field.exact_solution(z0, 1.0)
    errors = []
    for h in h_list:
        n = int(round(1.0 / h))
        if not np.isclose(n * h, 1.0, rtol=1e-9):
            raise ConfigurationError(f"step size {h} does not divide [0, 1]")
        res = solve(field, z1, make_time_grid(n), DENOISE, tab)
        errors.append(float(np.linalg.norm(res.final - z0)))
    if errors[0] < 1e2 * np.finfo(float).eps:
        warnings.warn(
            f"error {errors[0]:.3g} at the largest step is at round-off level; order not estimable",
            SaturationWarning,
            stacklevel=2,
        )
        return OrderEstimate(float("nan"), h_list, errors)
    slope = np.polyfit(np.log(h_list), np.log(errors), 1)[0]
    return OrderEstimate(float(slope), h_list, errors)


def perturbed_solve(field, z_init, grid, tab, pert: PerturbationSchedule, condition=None, guidance=1.0) -> SolveResult:
    """Denoise with ``Z~_{t_N} = Z_{t_N} + delta_0`` and ``Z~ <- Z~ + h (Phi(Z~) + delta_i)``."""
    tab = resolve_tableau(tab)
    if not grid.is_uniform():
        raise ConfigurationError("perturbed integration requires a uniform time grid")
    if len(pert.per_step) != grid.n_steps:
        raise ConfigurationError(f"need {grid.n_steps} per-step perturbations, got {len(pert.per_step)}")
    h = grid.dt(1)
    z = np.asarray(z_init, dtype=float) + pert.delta_0
    nfe = 0
    slopes = []
    for i in range(grid.n_steps, 0, -1):
        z, slopes, used = rk_denoise_step(field, z, i, grid, tab, condition, guidance)
        z = z + h * pert.per_step[i - 1]
        nfe += used
    return SolveResult(z, nfe, slopes)


__all__ = [
    "ConfigurationError",
    "DENOISE",
    "INVERT",
    "OrderEstimate",
    "PerturbationSchedule",
    "RoundtripReport",
    "SaturationWarning",
    "SolveResult",
    "SolverError",
    "TimeGrid",
    "euler_denoise",
    "estimate_order",
    "expected_nfe",
    "make_time_grid",
    "perturbed_solve",
    "rk_denoise_step",
    "rk_invert_step",
    "roundtrip",
    "solve",
]

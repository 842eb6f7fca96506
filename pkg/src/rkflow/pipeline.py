"""End-to-end procedures: reconstruction, attention-controlled editing, and the
error-bound and fidelity experiments built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ddta import AttentionCache, ManipulationPlan, cache_hook
from .metrics import MetricReport, latent_metrics
from .solver import (
    DENOISE,
    ConfigurationError,
    PerturbationSchedule,
    make_time_grid,
    perturbed_solve,
    roundtrip,
    solve,
)
from .tableau import resolve_tableau

LAMBDA_FACTOR = 41 / 24


@dataclass
class ReconstructionReport:
    reconstruction: np.ndarray
    noise: np.ndarray
    metrics: MetricReport
    nfe_total: int


def reconstruct(field, z_0, n_steps=30, tab="classic4", condition=None, guidance=1.0, reuse=False) -> ReconstructionReport:
    grid = make_time_grid(n_steps)
    rt = roundtrip(field, z_0, grid, tab, condition, guidance, reuse)
    return ReconstructionReport(rt.reconstruction, rt.noise, latent_metrics(z_0, rt.reconstruction), rt.nfe_total)


@dataclass
class EditConfig:
    source_prompt: list
    target_prompt: list
    tableau: str = "kutta3"
    n_steps: int = 8
    plan: ManipulationPlan = field(default_factory=ManipulationPlan.default)
    guidance_invert: float = 1.0
    guidance_edit: float = 3.0
    seed: int = 0

    @property
    def d_list(self):
        return self.plan.d_list


@dataclass
class EditReport:
    edited: np.ndarray
    reconstruction: np.ndarray
    noise: np.ndarray
    deviation_from_source: float
    nfe_total: int


def _invert_with_cache(field, z_0, grid, tab, prompt, guidance, plan, cache):
    """Inversion stage: the evaluation counter starts at N*r and counts down."""
    c = grid.n_steps * tab.r
    z = np.asarray(z_0, dtype=float)
    nfe = 0
    for i in range(1, grid.n_steps + 1):
        t_prev, dt = float(grid.nodes[i - 1]), grid.dt(i)
        z_next = z.copy()
        slopes = []
        for s in range(tab.r):
            zs = z + dt * sum(tab.a[s, j] * slopes[j] for j in range(s)) if s else z
            hook = cache_hook(cache, c, "save", plan) if c in plan.d_list else None
            k = field(zs, t_prev + tab.c[s] * dt, prompt, guidance, hook=hook)
            slopes.append(k)
            z_next = z_next + tab.b[s] * dt * k
            nfe += 1
            c -= 1
        z = z_next
    return z, nfe


def _denoise_stagewise(field, z_n, grid, tab, prompt, guidance, plan=None, cache=None):
    """Editing stage: the counter starts at 1 and counts up; each stage updates the state as it completes."""
    c = 1
    z = np.asarray(z_n, dtype=float)
    nfe = 0
    for i in range(grid.n_steps, 0, -1):
        t_i, dt = float(grid.nodes[i]), grid.dt(i)
        z_next = z.copy()
        slopes = []
        for s in range(tab.r):
            zs = z - dt * sum(tab.a[s, j] * slopes[j] for j in range(s)) if s else z
            hook = None
            if plan is not None and c in plan.d_list:
                hook = cache_hook(cache, c, "manipulate", plan)
            k = field(zs, t_i - tab.c[s] * dt, prompt, guidance, hook=hook)
            slopes.append(k)
            z_next = z_next - tab.b[s] * dt * k
            nfe += 1
            c += 1
        z = z_next
    return z, nfe


def edit(field, z_0, cfg: EditConfig) -> EditReport:
    tab = resolve_tableau(cfg.tableau)
    grid = make_time_grid(cfg.n_steps)
    cfg.plan.validate_d_list(cfg.n_steps * tab.r)
    src = field.embed_prompt(cfg.source_prompt)
    tgt = field.embed_prompt(cfg.target_prompt)
    cache = AttentionCache()
    z_n, nfe_inv = _invert_with_cache(field, z_0, grid, tab, src, cfg.guidance_invert, cfg.plan, cache)
    edited, nfe_edit = _denoise_stagewise(field, z_n, grid, tab, tgt, cfg.guidance_edit, cfg.plan, cache)
    recon, _ = _denoise_stagewise(field, z_n, grid, tab, src, cfg.guidance_invert)
    dev = float(np.linalg.norm(edited - recon))
    return EditReport(edited, recon, z_n, dev, nfe_inv + nfe_edit)


PLAN_SET = ("none", "mean", "replace")


@dataclass
class FidelitySummary:
    win_rate_replace_vs_none: float
    win_rate_replace_vs_mean: float
    mean_between_rate: float
    ordered_rate: float
    n_effective: int
    cases: list

    def to_dict(self):
        return {
            "win_rate_replace_vs_none": self.win_rate_replace_vs_none,
            "win_rate_replace_vs_mean": self.win_rate_replace_vs_mean,
            "mean_between_rate": self.mean_between_rate,
            "ordered_rate": self.ordered_rate,
            "n_effective": self.n_effective,
            "cases": self.cases,
        }


def make_edit_cases(n_cases, seed, prompt_len=4, latent_shape=(4, 8, 8)):
    """Seeded (source, target, latent) triples whose prompts differ in exactly one token."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        src = rng.integers(0, 256, size=prompt_len).tolist()
        tgt = list(src)
        pos = int(rng.integers(prompt_len))
        tgt[pos] = int((src[pos] + rng.integers(1, 256)) % 256)
        cases.append((src, tgt, rng.standard_normal(latent_shape)))
    return cases


def fidelity_base_config(tableau="kutta3", n_steps=8) -> EditConfig:
    """Kutta-3, 8 steps, every block kind, manipulating the first sampling step's evaluations."""
    r = resolve_tableau(tableau).r
    plan = ManipulationPlan(blocks=("multi", "single"), d_list=tuple(range(1, r + 1)))
    return EditConfig([0], [0], tableau, n_steps, plan)


def fidelity_ordering_experiment(field, n_cases=20, base_cfg: EditConfig | None = None, seed=0, cases=None) -> FidelitySummary:
    """Compare editing deviation under no manipulation, mean-all and replace-all.

    The three plans share the scope (blocks, layers, ``d_list``) of
    ``base_cfg``.  ``cases`` overrides the generated ``(source, target, z_0)``
    triples.  Cases whose prompts are identical are reported but excluded
    from the rates.
    """
    if n_cases < 1:
        raise ConfigurationError("n_cases must be >= 1")
    base = base_cfg or fidelity_base_config()
    if cases is None:
        cases = make_edit_cases(n_cases, seed, latent_shape=field.cfg.latent_shape)
    rows = []
    for idx, (src, tgt, z_0) in enumerate(cases):
        dev = {}
        for name in PLAN_SET:
            plan = ManipulationPlan.uniform(name, blocks=base.plan.blocks, layers=base.plan.layers, d_list=base.plan.d_list)
            cfg = EditConfig(src, tgt, base.tableau, base.n_steps, plan, base.guidance_invert, base.guidance_edit, base.seed)
            dev[name] = edit(field, z_0, cfg).deviation_from_source
        rows.append(
            {
                "case": idx,
                "source": list(src),
                "target": list(tgt),
                "degenerate": list(src) == list(tgt),
                "dev_none": dev["none"],
                "dev_mean": dev["mean"],
                "dev_replace": dev["replace"],
            }
        )
    live = [r for r in rows if not r["degenerate"]]
    n = len(live)

    def rate(pred):
        return sum(1 for r in live if pred(r)) / n if n else math.nan

    return FidelitySummary(
        win_rate_replace_vs_none=rate(lambda r: r["dev_replace"] <= r["dev_none"]),
        win_rate_replace_vs_mean=rate(lambda r: r["dev_replace"] <= r["dev_mean"]),
        mean_between_rate=rate(
            lambda r: min(r["dev_replace"], r["dev_none"]) <= r["dev_mean"] <= max(r["dev_replace"], r["dev_none"])
        ),
        ordered_rate=rate(lambda r: r["dev_replace"] <= r["dev_mean"] <= r["dev_none"]),
        n_effective=n,
        cases=rows,
    )


def error_bound(delta_0_norm, delta_max_norm, lipschitz, span):
    """``e^{Lam T} |delta_0| + (e^{Lam T} - 1) / Lam * max|delta_i|`` with ``Lam = 41/24 L``."""
    lam = LAMBDA_FACTOR * lipschitz
    growth = math.exp(lam * span)
    amp = (growth - 1.0) / lam if lam > 0 else span
    return growth * delta_0_norm + amp * delta_max_norm


@dataclass
class BoundCheckResult:
    violations: int
    max_ratio: float
    violations_linf: int
    trials: list


def _draw(rng, shape, radius):
    u = rng.standard_normal(shape)
    norm = np.linalg.norm(u)
    return u / norm * radius * rng.uniform() if norm > 0 else u


def bound_check_experiment(
    field, n_steps=30, tab="classic4", n_trials=100, delta_max=1e-3, seed=0, lipschitz=None, z_init=None, shape=(8,)
) -> BoundCheckResult:
    """Count violations of the perturbation bound over seeded random perturbations."""
    L = field.lipschitz if lipschitz is None else float(lipschitz)
    if L is None:
        raise ConfigurationError("bound check needs a Lipschitz constant")
    grid = make_time_grid(n_steps)
    h = grid.dt(1)
    if L > 0 and h > 1.0 / L * (1 + 1e-12):
        raise ConfigurationError(f"step h={h:.6g} exceeds h0 = 1/L = {1.0 / L:.6g}; the bound needs h <= 1/L")
    rng = np.random.default_rng(seed)
    if z_init is None:
        z_init = rng.standard_normal(getattr(getattr(field, "cfg", None), "latent_shape", shape))
    z_init = np.asarray(z_init, dtype=float)
    clean = solve(field, z_init, grid, DENOISE, tab).final
    trials = []
    for k in range(n_trials):
        d0 = _draw(rng, z_init.shape, delta_max)
        per_step = [_draw(rng, z_init.shape, delta_max) for _ in range(n_steps)]
        pert = PerturbationSchedule(d0, per_step, delta_max)
        final = perturbed_solve(field, z_init, grid, tab, pert).final
        diff = final - clean
        obs = float(np.linalg.norm(diff))
        obs_inf = float(np.max(np.abs(diff)))
        bound = error_bound(np.linalg.norm(d0), max(np.linalg.norm(d) for d in per_step), L, grid.span)
        bound_inf = error_bound(np.max(np.abs(d0)), max(np.max(np.abs(d)) for d in per_step), L, grid.span)
        trials.append(
            {
                "trial": k,
                "observed": obs,
                "bound": bound,
                "ratio": obs / bound if bound > 0 else (0.0 if obs == 0 else math.inf),
                "observed_linf": obs_inf,
                "bound_linf": bound_inf,
                "ratio_linf": obs_inf / bound_inf if bound_inf > 0 else (0.0 if obs_inf == 0 else math.inf),
            }
        )
    return BoundCheckResult(
        violations=sum(t["ratio"] > 1 for t in trials),
        max_ratio=max((t["ratio"] for t in trials), default=0.0),
        violations_linf=sum(t["ratio_linf"] > 1 for t in trials),
        trials=trials,
    )

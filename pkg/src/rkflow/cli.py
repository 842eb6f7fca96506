"""Command-line entry point: ``rkflow <command> [--config F] [--set k=v ...] [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import _svg
from .config import NFE_ROWS, ConfigError, resolve_config
from .ddta import ManipulationPlan, ResponseRecorder, aggregate_response_maps
from .metrics import latent_metrics
from .pipeline import EditConfig, bound_check_experiment, edit, fidelity_ordering_experiment
from .solver import DENOISE, estimate_order, make_time_grid, roundtrip, solve
from .tableau import ADVERTISED_ORDER, classify_order, registry_get, registry_names, resolve_tableau, validate_tableau
from .velocity import FieldError, ToyMMDiT, ToyMMDiTConfig, make_analytic_field

COMMANDS = (
    "tableau",
    "model",
    "solve",
    "roundtrip",
    "convergence",
    "nfe-bench",
    "edit",
    "fidelity-bench",
    "respmap",
    "bound-check",
    "export-traj",
)


def build_field(cfg):
    kind = cfg["field"]["kind"]
    try:
        if kind == "toy_mmdit":
            return ToyMMDiT(ToyMMDiTConfig(**cfg["model"]))
        return make_analytic_field(kind, **cfg["field"]["params"])
    except (FieldError, TypeError) as exc:
        raise ConfigError([f"config.field: {exc}"]) from exc


def build_latent(cfg, field):
    lat = cfg["latent"]
    if lat["value"] is not None:
        return np.asarray(lat["value"], dtype=float)
    if isinstance(field, ToyMMDiT):
        shape = field.cfg.latent_shape
    else:
        shape = tuple(lat["shape"] or [1])
    return np.random.default_rng(cfg["seed"]).standard_normal(shape)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def write_csv(path, rows, columns=None):
    columns = columns or list(rows[0]) if rows else columns or []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _condition(field, prompt):
    return field.embed_prompt(prompt) if isinstance(field, ToyMMDiT) else None


def cmd_solve(cfg, out):
    field = build_field(cfg)
    z = build_latent(cfg, field)
    s = cfg["solve"]
    grid = make_time_grid(s["steps"])
    res = solve(field, z, grid, s["direction"], s["tableau"], _condition(field, s["prompt"]), s["guidance"], s["reuse"])
    row = {
        "field": cfg["field"]["kind"],
        "tableau": s["tableau"],
        "steps": s["steps"],
        "direction": s["direction"],
        "reuse": s["reuse"],
        "nfe": res.nfe,
        "final_l2": float(np.linalg.norm(res.final)),
    }
    write_csv(out / "results.csv", [row])
    write_json(out / "report.json", {**row, "initial": z, "final": res.final})
    return row


def cmd_roundtrip(cfg, out):
    field = build_field(cfg)
    z = build_latent(cfg, field)
    s = cfg["solve"]
    rt = roundtrip(field, z, make_time_grid(s["steps"]), s["tableau"], _condition(field, s["prompt"]), s["guidance"], s["reuse"])
    row = {"field": cfg["field"]["kind"], "tableau": s["tableau"], "steps": s["steps"], "reuse": s["reuse"], **rt.as_row()}
    if z.ndim >= 2:
        m = latent_metrics(z, rt.reconstruction)
        row.update(psnr=m.psnr, ssim=m.ssim)
    write_csv(out / "results.csv", [row])
    write_json(out / "report.json", {**row, "reconstruction": rt.reconstruction})
    return row


def cmd_convergence(cfg, out):
    c = cfg["convergence"]
    kind = cfg["field"]["kind"]
    if kind == "toy_mmdit":
        raise ConfigError(["convergence: field.kind must be an analytic field with a closed-form solution"])
    field = build_field(cfg)
    rows, series = [], {}
    for name in c["tableaus"]:
        est = estimate_order(field, name, c["h_list"], c["z0"])
        row = {"tableau": name, "empirical_order": est.empirical_order}
        row.update({f"err_h{k}": e for k, e in enumerate(est.errors)})
        rows.append(row)
        series[name] = (est.h_list, est.errors)
    write_csv(out / "results.csv", rows)
    write_json(out / "report.json", {"field": kind, "h_list": c["h_list"], "rows": rows})
    (out / "convergence.svg").write_text(_svg.loglog_plot(series))
    return rows


def cmd_nfe_bench(cfg, out):
    field = build_field(cfg)
    z = build_latent(cfg, field)
    cond = _condition(field, cfg["solve"]["prompt"])
    bench_rows = cfg["nfe_bench"]["rows"] or [list(r) for r in NFE_ROWS]
    rows = []
    for method, tab, steps, reuse in bench_rows:
        rt = roundtrip(field, z, make_time_grid(steps), tab, cond, cfg["solve"]["guidance"], reuse)
        rows.append({"method": method, "tableau": tab, "steps": steps, "nfes": rt.nfe_total, "rel_error": rt.rel_error})
    write_csv(out / "results.csv", rows)
    write_json(out / "report.json", {"rows": rows})
    return rows


def cmd_bound_check(cfg, out):
    field = build_field(cfg)
    b = cfg["bound_check"]
    z = build_latent(cfg, field)
    res = bound_check_experiment(field, b["steps"], b["tableau"], b["trials"], b["delta_max"], cfg["seed"], b["lipschitz"], z_init=z)
    write_csv(out / "trials.csv", res.trials, ["trial", "observed", "bound", "ratio"])
    summary = {"violations": res.violations, "max_ratio": res.max_ratio, "violations_linf": res.violations_linf, "trials": b["trials"]}
    write_json(out / "report.json", summary)
    return summary


def _plan_from(d):
    return ManipulationPlan(ops=d["ops"], blocks=tuple(d["blocks"]), layers=d["layers"], d_list=tuple(d["d_list"]))


def cmd_edit(cfg, out):
    field = build_field(cfg)
    if not isinstance(field, ToyMMDiT):
        raise ConfigError(["edit: field.kind must be toy_mmdit"])
    e = cfg["edit"]
    ecfg = EditConfig(e["source_prompt"], e["target_prompt"], e["tableau"], e["steps"], _plan_from(e["plan"]), e["guidance_invert"], e["guidance_edit"], cfg["seed"])
    z = build_latent(cfg, field)
    rep = edit(field, z, ecfg)
    row = {"tableau": e["tableau"], "steps": e["steps"], "deviation_from_source": rep.deviation_from_source, "nfe_total": rep.nfe_total}
    write_csv(out / "results.csv", [row])
    write_json(out / "report.json", {**row, "edited": rep.edited, "reconstruction": rep.reconstruction})
    return row


def cmd_fidelity(cfg, out):
    field = build_field(cfg)
    if not isinstance(field, ToyMMDiT):
        raise ConfigError(["fidelity-bench: field.kind must be toy_mmdit"])
    f = cfg["fidelity"]
    r = resolve_tableau(f["tableau"]).r
    d_list = f["d_list"] or list(range(1, r + 1))
    plan = ManipulationPlan(blocks=tuple(f["blocks"]), layers=f["layers"], d_list=tuple(d_list))
    base = EditConfig([0], [0], f["tableau"], f["steps"], plan, f["guidance_invert"], f["guidance_edit"], cfg["seed"])
    summary = fidelity_ordering_experiment(field, f["cases"], base, cfg["seed"])
    cols = ["case", "source", "target", "degenerate", "dev_none", "dev_mean", "dev_replace"]
    write_csv(out / "results.csv", summary.cases, cols)
    write_json(out / "report.json", summary.to_dict())
    return summary


def cmd_respmap(cfg, out):
    field = build_field(cfg)
    if not isinstance(field, ToyMMDiT):
        raise ConfigError(["respmap: field.kind must be toy_mmdit"])
    rm = cfg["respmap"]
    maps = response_maps(field, rm["prompt"], rm["words"], rm["steps"], (rm["height"], rm["width"]), cfg["seed"], rm["guidance"])
    report = []
    for m in maps:
        np.savetxt(out / f"respmap_w{m.word_index}.csv", m.resized, delimiter=",", fmt="%.17g")
        (out / f"respmap_w{m.word_index}.svg").write_text(_svg.heatmap(m.resized, cell=max(1, 256 // rm["width"])))
        report.append({"word": m.word_index, "grid_map": m.grid_map, "min": float(m.resized.min()), "max": float(m.resized.max())})
    write_json(out / "report.json", {"maps": report})
    return maps


def response_maps(field, prompt, words, n_steps, out_hw, seed=0, guidance=1.0):
    """Euler-sample from seeded noise, recording cross-attention at every block, then aggregate."""
    cond = field.embed_prompt(prompt)
    grid = make_time_grid(n_steps)
    z = np.random.default_rng(seed).standard_normal(field.cfg.latent_shape)
    rec = ResponseRecorder()
    for i in range(n_steps, 0, -1):
        t_i, t_prev = float(grid.nodes[i]), float(grid.nodes[i - 1])
        z = z + (t_prev - t_i) * field(z, t_i, cond, guidance, hook=rec.next_eval())
    return aggregate_response_maps(rec.records, words, n_steps, field.n_blocks, (field.cfg.grid_h, field.cfg.grid_w), out_hw)


def cmd_export_traj(cfg, out):
    field = build_field(cfg)
    z = build_latent(cfg, field)
    s = cfg["solve"]
    res = solve(field, z, make_time_grid(s["steps"]), s["direction"], s["tableau"], _condition(field, s["prompt"]), s["guidance"], s["reuse"], record_trajectory=True)
    n = z.size
    rows = [{"t": t, **{f"z{k}": float(v) for k, v in enumerate(state.reshape(-1))}} for t, state in res.trajectory]
    write_csv(out / "trajectory.csv", rows, ["t"] + [f"z{k}" for k in range(n)])
    return rows


def cmd_tableau(args):
    if args.action == "list":
        for name in registry_names():
            tab = registry_get(name)
            print(f"{name}\tstages={tab.r}\tadvertised_order={ADVERTISED_ORDER[name]}\torder={classify_order(tab).satisfied_order}")
        return 0
    if not args.target:
        raise ConfigError([f"tableau {args.action}: missing <name|path>"])
    tab = resolve_tableau(args.target)
    if args.action == "validate":
        problems = validate_tableau(tab)
        print(json.dumps({"name": tab.name, "valid": not problems, "violations": problems}, indent=2))
        return 0 if not problems else 1
    rep = classify_order(tab)
    print(json.dumps({"name": rep.name, "satisfied_order": rep.satisfied_order, "residuals": dict(rep.condition_residuals)}, indent=2))
    return 0


RUNNERS = {
    "solve": cmd_solve,
    "roundtrip": cmd_roundtrip,
    "convergence": cmd_convergence,
    "nfe-bench": cmd_nfe_bench,
    "edit": cmd_edit,
    "fidelity-bench": cmd_fidelity,
    "respmap": cmd_respmap,
    "bound-check": cmd_bound_check,
    "export-traj": cmd_export_traj,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rkflow", description="Runge-Kutta rectified-flow inversion and decoupled-attention editing.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("tableau", help="list, validate or classify Butcher tableaus")
    t.add_argument("action", choices=("list", "validate", "order"))
    t.add_argument("target", nargs="?", help="registry name or JSON tableau file")
    m = sub.add_parser("model", help="model utilities")
    m.add_argument("action", choices=("dump-config",))
    m.add_argument("--config")
    m.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    for name in RUNNERS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="JSON run configuration")
        c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override, repeatable")
        c.add_argument("--out", help="output directory (default rkflow-out/<command>)")
        c.add_argument("--seed", type=int)
    return p


def _error(kind, messages):
    print(json.dumps({"error": kind, "messages": list(messages)}, indent=2), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "tableau":
            return cmd_tableau(args)
        if args.command == "model":
            cfg = resolve_config(args.config, args.set)
            print(json.dumps(cfg["model"], indent=2, sort_keys=True))
            return 0
        cfg = resolve_config(args.config, args.set, args.seed)
        out = Path(args.out or Path("rkflow-out") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "resolved_config.json", cfg)
        RUNNERS[args.command](cfg, out)
    except ConfigError as exc:
        _error("config", exc.problems)
        return 2
    except (ValueError, KeyError, RuntimeError) as exc:
        _error(type(exc).__name__, [str(exc)])
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

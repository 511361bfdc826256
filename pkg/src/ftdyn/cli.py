"""Experiment runner: every module as a subcommand with JSON/CSV artifacts.

Usage:
    ftdyn <command> --config cfg.json [--out DIR] [--seed N] [--quiet]

The config file carries the system spec, the command parameter table and a
seed; reports echo the resolved config plus its content hash and are
byte-identical across runs (timestamps go to meta.json).  Exit codes:
0 success, 1 usage/config error, 2 a verification command found violations.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import verify as _verify
from .cocycle import finite_time_fields, holangle_check, lyapunov_qr
from .cover import CoverParams, build_cover, verify_cover
from .entropy import SexBoundProbe, newhouse_estimate, sex_bound_report
from .errors import FtdynError
from .hypersets import HypParams
from .linalg2 import hyperbolic_split
from .manifolds import trace_manifold
from .rectangles import build_chart, check_predicates, check_regularity, saturate
from .serialize import (
    config_hash,
    curve_to_csv,
    grid_to_csv,
    json_dumps,
    rates_to_csv,
    write_meta,
    write_report,
)
from .systems import make_system

COMMANDS = (
    "lyapunov",
    "split",
    "fields",
    "manifold",
    "rect",
    "entropy",
    "cover",
    "verify-lemmas",
    "report",
)


def _load_config(path):
    if path is None:
        raise FtdynError("--config is required")
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise FtdynError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FtdynError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise FtdynError("config must be a JSON object")
    return cfg


def _system_from(cfg):
    spec = cfg.get("system")
    if spec is None:
        raise FtdynError("config is missing the 'system' entry")
    return make_system(spec)


def _params(cfg):
    p = cfg.get("params", {})
    if not isinstance(p, dict):
        raise FtdynError("'params' must be an object")
    return p


def _point(p, key="x", default=(0.1, 0.2)):
    v = p.get(key, list(default))
    return np.asarray(v, dtype=float)


def _run_lyapunov(sys_, cfg, out):
    p = _params(cfg)
    est = lyapunov_qr(sys_, _point(p), int(p.get("n", 100)), p.get("method", "qr"))
    return 0, {"estimate": est.as_dict()}, {}


def _run_split(sys_, cfg, out):
    p = _params(cfg)
    if "matrix" in p:
        mat = np.asarray(p["matrix"], dtype=float)
    else:
        mat = sys_.jacobian(_point(p))
    sp = hyperbolic_split(mat, float(p.get("tau", 1e-6)))
    return 0, {"split": sp.as_dict(), "matrix": mat.tolist()}, {}


def _run_fields(sys_, cfg, out):
    p = _params(cfg)
    fs = finite_time_fields(sys_, _point(p), int(p.get("n", 10)), float(p.get("tau", 1e-6)))
    res = {"fields": fs.as_dict()}
    if p.get("holangle", False):
        res["holangle"] = holangle_check(sys_, _point(p), int(p.get("n", 10))).as_dict()
    return 0, res, {}


def _run_manifold(sys_, cfg, out):
    p = _params(cfg)
    curve = trace_manifold(
        sys_,
        _point(p),
        int(p.get("n", 10)),
        p.get("kind", "stable"),
        float(p.get("halflength", 0.05)),
        float(p.get("tau", 1e-6)),
    )
    csv_path = curve_to_csv(Path(out) / "manifold.csv", curve)
    res = {
        "kind": curve.kind,
        "n": curve.n,
        "vertices": int(curve.vertices.shape[0]),
        "arclength": curve.arclength,
        "truncated": curve.truncated,
        "csv": csv_path.name,
    }
    return 0, res, {}


def _run_rect(sys_, cfg, out):
    p = _params(cfg)
    n = int(p.get("n", 6))
    chart = build_chart(
        sys_,
        _point(p),
        n,
        float(p.get("l_e", 8e-4)),
        float(p.get("l_f", p.get("l_e", 8e-4))),
        int(p.get("grid", 16)),
        float(p.get("tau", 1e-6)),
        float(p.get("k_tol", 0.01)),
    )
    k_list = p.get("k_list", [n])
    pred = check_predicates(chart, [int(k) for k in k_list])
    reg = check_regularity(chart)
    grid_csv = grid_to_csv(Path(out) / "chart_grid.csv", chart)
    res = {
        "l_e": chart.l_e,
        "l_f": chart.l_f,
        "predicates": pred.as_dict(),
        "regularity": reg.as_dict(),
        "grid_csv": grid_csv.name,
    }
    code = 0 if (pred.all_pass and reg.all_pass) else 2
    if p.get("saturate", False):
        sat = saturate(chart, float(p.get("tau", 1e-6)), int(p.get("sat_n_min", 5)))
        res["saturation"] = sat.meta["saturation"].as_dict()
        grid_to_csv(Path(out) / "chart_saturated.csv", sat)
    return code, res, {}


def _run_entropy(sys_, cfg, out):
    p = _params(cfg)
    res = {}
    code = 0
    if "eps" in p:
        rates = newhouse_estimate(
            sys_,
            _point(p),
            float(p["eps"]),
            float(p.get("delta", p["eps"] / 5.0)),
            [int(v) for v in p.get("n_list", [8, 12, 16])],
            int(p.get("grid_res", 1024)),
        )
        rates_to_csv(Path(out) / "newhouse_rates.csv", rates)
        res["newhouse"] = [r.as_dict() for r in rates]
    if "power" in p:
        pw = p["power"]
        rep = _verify.power_inclusion_suite(
            sys_,
            tuple(_point(pw)),
            int(pw.get("n", 4)),
            int(pw.get("k", 3)),
            float(pw.get("eps", 0.01)),
            int(pw.get("samples", 10000)),
            int(cfg.get("seed", 0)),
        )
        res["power_inclusion"] = rep
        if rep["violations"]:
            code = 2
    return code, res, {}


def _run_cover(sys_, cfg, out):
    p = _params(cfg)
    hyp = HypParams(**p["hyp"])
    keys = (
        "eps",
        "k_tol",
        "a_const",
        "d_const",
        "n_threshold",
        "subdivision_cap",
        "grid_res",
        "chart_grid",
        "tau",
        "seed_scale",
    )
    params = CoverParams(hyp=hyp, **{k: p[k] for k in keys if k in p})
    fam = build_cover(sys_, _point(p), int(p.get("n_final", 10)), params)
    audit = verify_cover(sys_, fam, _point(p), samples=int(p.get("verify_samples", 256)))
    events_path = Path(out) / "cover_events.jsonl"
    events_path.parent.mkdir(parents=True, exist_ok=True)
    with events_path.open("w") as f:
        for ev in fam.events:
            f.write(json.dumps(ev, sort_keys=True) + "\n")
    if p.get("export_grids", False):
        for i, chart in enumerate(fam.charts):
            grid_to_csv(Path(out) / f"cover_chart_{i:04d}.csv", chart)
    res = {"family": fam.as_dict(), "audit": audit, "events_file": events_path.name}
    bad = (
        audit["contraction_violations"] > 0
        or not audit["cardinality_ok"]
        or audit["coverage_fraction"] < 1.0
    )
    return (2 if bad else 0), res, {}


def _run_verify_lemmas(sys_, cfg, out):
    p = _params(cfg)
    seed = int(cfg.get("seed", 0))
    res = {
        "norm_defect": _verify.norm_defect_suite(int(p.get("pairs", 10000)), seed),
        "frobenius_3d": _verify.frobenius_counterexample_suite(float(p.get("gl3_x", 1e3))),
        "counting": _verify.counting_suite(int(p.get("count_cap", 24))),
        "entropy_function": _verify.entropy_function_suite(),
        "power_inclusion": _verify.power_inclusion_suite(sys_, seed=seed),
    }
    ok = all(v["ok"] for v in res.values())
    return (0 if ok else 2), res, {}


def _run_report(sys_, cfg, out, figures=True):
    p = _params(cfg)
    probe = SexBoundProbe(
        grid_res=int(p.get("grid_res", 256)),
        n_sep=int(p.get("n_sep", 12)),
        delta=float(p.get("delta", 0.05)),
        r_horizon=int(p.get("r_horizon", 48)),
        r_samples=int(p.get("r_samples", 64)),
        seed=int(cfg.get("seed", 0)),
        newhouse_eps=p.get("newhouse_eps"),
        newhouse_delta=p.get("newhouse_delta"),
        newhouse_n=tuple(p.get("newhouse_n", ())),
        newhouse_res=int(p.get("newhouse_res", 512)),
    )
    rep = sex_bound_report(sys_, probe)
    if rep.newhouse_rates:
        rates_to_csv(Path(out) / "newhouse_rates.csv", rep.newhouse_rates)
    fig_files = []
    if figures:
        fig_files = _render_report_figures(rep, out)
    return 0, {"report": rep.as_dict(), "figures": fig_files}, {}


def _render_report_figures(rep, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)
    files = []
    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = ["h_top", "R", "h_top + 2R"]
    vals = [rep.h_top_estimate, rep.r_estimate, rep.sex_bound]
    ax.bar(labels, vals, color=["#4878d0", "#ee854a", "#6acc64"])
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("nats / iterate")
    ax.set_title("symbolic-extension entropy bound")
    fig.tight_layout()
    path = out / "sex_bound.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    files.append(path.name)
    if rep.newhouse_rates:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ns = [r.n for r in rep.newhouse_rates]
        rates = [r.rate for r in rep.newhouse_rates]
        ax.plot(ns, rates, "o-", label="local rate")
        ax.axhline(rep.h_top_estimate, ls="--", c="gray", label="h_top estimate")
        ax.set_xlabel("n")
        ax.set_ylabel("log(count)/n")
        ax.set_title("sampled local entropy rates")
        ax.legend()
        fig.tight_layout()
        path = out / "newhouse_rates.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        files.append(path.name)
    return files


_HANDLERS = {
    "lyapunov": _run_lyapunov,
    "split": _run_split,
    "fields": _run_fields,
    "manifold": _run_manifold,
    "rect": _run_rect,
    "entropy": _run_entropy,
    "cover": _run_cover,
    "verify-lemmas": _run_verify_lemmas,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="ftdyn",
        description="finite-time hyperbolic splittings, rectangles and entropy estimators",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        s = sub.add_parser(cmd)
        s.add_argument("--config", required=False)
        s.add_argument("--out", default="out")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--quiet", action="store_true")
        if cmd == "report":
            s.add_argument("--figures", dest="figures", action="store_true", default=True)
            s.add_argument("--no-figures", dest="figures", action="store_false")
    args = ap.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        sys_ = _system_from(cfg)
        out = args.out
        if args.command == "report":
            code, results, extra = _run_report(sys_, cfg, out, figures=args.figures)
        else:
            code, results, extra = _HANDLERS[args.command](sys_, cfg, out)
    except FtdynError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc!r}", file=_sys.stderr)
        return 1

    payload = {
        "command": args.command,
        "config": cfg,
        "input_hash": config_hash(cfg),
        "results": results,
    }
    name = args.command.replace("-", "_") + "_report.json"
    path = write_report(out, name, payload)
    write_meta(out, {"command": args.command, "exit_code": code, **extra})
    if not args.quiet:
        print(json_dumps({"report": str(path), "exit_code": code, **_summary(results)}), end="")
    return code


def _summary(results):
    keep = {}
    for k in ("estimate", "audit", "report"):
        if k in results:
            keep[k] = results[k]
    return keep


if __name__ == "__main__":
    raise SystemExit(main())

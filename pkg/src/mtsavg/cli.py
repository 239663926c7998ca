"""Command-line interface.

Subcommands:
  simulate   evolve a problem and write the state trajectory as CSV
  hierarchy  build averaging levels and report magnitudes/diagnostics (JSON)
  sweep      run a scaling sweep from a spec file (raw CSV + report JSON)
  split      print the slow/fast frequency partition of a problem
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .averaging import AveragingConfig, build_hierarchy, integrated_generator
from .experiments import (SweepSpec, load_bundled_spec, bundled_spec_names,
                          resolve_window_token, rows_to_csv, run_experiment)
from .generators import SplitConfig, load_generator, split_frequencies
from .matcore import spectral_norm
from .normalform import UNITARY, NormalFormMap
from .oracle import OracleConfig, evolve as oracle_evolve


def _state_rows(ts, states):
    dim = states[0].shape[0]
    header = ["t"] + [f"re_c{k}" for k in range(dim)] + [f"im_c{k}" for k in range(dim)] + ["norm"]
    lines = [",".join(header)]
    for t, c in zip(ts, states):
        vals = [repr(float(t))]
        vals += [repr(float(x)) for x in c.real]
        vals += [repr(float(x)) for x in c.imag]
        vals.append(repr(float(np.linalg.norm(c))))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def cmd_simulate(args):
    gen = load_generator(args.problem)
    c0 = np.zeros(gen.dim, dtype=complex)
    c0[0] = 1.0
    ts = np.linspace(0.0, args.t, args.grid)
    states = []
    if args.method == "oracle":
        cfg = OracleConfig(tol=args.tol)
        U = np.eye(gen.dim, dtype=complex)
        states.append(U @ c0)
        for k in range(1, len(ts)):
            U = oracle_evolve(gen, args.beta, ts[k - 1], ts[k], cfg) @ U
            states.append(U @ c0)
    else:
        acfg = AveragingConfig(beta=args.beta, horizon=args.t + 1e-9)
        if args.method == "averaged":
            levels = build_hierarchy(gen, acfg, depth=0)
            for t in ts:
                states.append(levels[0].propagator.apply(c0, t))
        else:  # normalform: c(t) ~ U0 U1 Utilde^{-1} c0
            levels = build_hierarchy(gen, acfg, depth=1)
            nf = NormalFormMap(levels[1], mode=UNITARY)
            for t in ts:
                V = (levels[0].propagator.evaluate(t)
                     @ levels[1].propagator.evaluate(t)
                     @ nf.inverse_value(t))
                states.append(V @ c0)
    out = _state_rows(ts, states)
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_hierarchy(args):
    gen = load_generator(args.problem)
    cfg = AveragingConfig(beta=args.beta, horizon=args.horizon_blocks * args.beta ** -0.5)
    levels = build_hierarchy(gen, cfg, depth=args.depth, with_diagnostics=True)
    doc = {"beta": args.beta, "T0": cfg.T0, "n_blocks": cfg.n_blocks, "levels": []}
    t_probe = cfg.horizon * 0.999
    for lv in levels:
        _, in_nrm = integrated_generator(lv, t_probe)
        doc["levels"].append({
            "index": lv.index,
            "avg_magnitude": lv.avg_magnitude,
            "residual_integral_bound": lv.residual_integral_bound,
            "integrated_norm": in_nrm,
            "integrated_at_t": t_probe,
        })
    text = json.dumps(doc, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_sweep(args):
    if args.spec.endswith(".json") or "/" in args.spec:
        spec = SweepSpec.from_file(args.spec)
    else:
        spec = load_bundled_spec(args.spec)
    report, rows = run_experiment(spec, seed=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{spec.name}_raw.csv").write_text(rows_to_csv(rows))
    (outdir / f"{spec.name}_report.json").write_text(report.to_json() + "\n")
    status = "PASS" if report.passed else "FAIL"
    gate = "" if report.gated else " (ungated)"
    print(f"{spec.name}: slope={report.fitted_slope:.4f} "
          f"stderr={report.slope_stderr:.4f} expected={report.expected_slope} "
          f"-> {status}{gate}")
    return 0 if report.passed else 1


def cmd_split(args):
    gen = load_generator(args.problem)
    T0 = args.beta ** -0.5
    cfg = SplitConfig(theta=args.theta, T0=T0)
    slow, fast = split_frequencies(gen, cfg)
    print(f"T0 = {T0:.6g}, theta = {args.theta}")
    for label, part in (("slow", slow), ("fast", fast)):
        if part is None:
            print(f"{label}: (empty)")
            continue
        print(f"{label}: {len(part.terms)} terms")
        for t in part.terms:
            print(f"  j={t.index:2d} omega={t.omega: .6g} "
                  f"omega*T0={t.omega * T0: .6g} |M|={spectral_norm(t.amplitude):.6g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mtsavg",
                                description="multi-time-scale averaging toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="evolve a problem, write trajectory CSV")
    ps.add_argument("--problem", required=True)
    ps.add_argument("--beta", type=float, required=True)
    ps.add_argument("--t", type=float, required=True)
    ps.add_argument("--method", choices=["oracle", "averaged", "normalform"],
                    default="oracle")
    ps.add_argument("--out", default=None)
    ps.add_argument("--grid", type=int, default=201)
    ps.add_argument("--tol", type=float, default=1e-9)
    ps.set_defaults(fn=cmd_simulate)

    ph = sub.add_parser("hierarchy", help="per-level magnitudes and diagnostics")
    ph.add_argument("--problem", required=True)
    ph.add_argument("--beta", type=float, required=True)
    ph.add_argument("--depth", type=int, default=2)
    ph.add_argument("--horizon-blocks", type=int, default=8)
    ph.add_argument("--out", default=None)
    ph.set_defaults(fn=cmd_hierarchy)

    pw = sub.add_parser("sweep", help="run a scaling sweep")
    pw.add_argument("--spec", required=True,
                    help=f"spec file or bundled name ({', '.join(bundled_spec_names())})")
    pw.add_argument("--seed", type=int, default=None)
    pw.add_argument("--out", required=True)
    pw.set_defaults(fn=cmd_sweep)

    pp = sub.add_parser("split", help="print the slow/fast partition")
    pp.add_argument("--problem", required=True)
    pp.add_argument("--beta", type=float, required=True)
    pp.add_argument("--theta", type=float, default=0.1)
    pp.set_defaults(fn=cmd_split)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

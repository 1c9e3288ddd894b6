"""Command-line entry point: ``stochbp <command> [options]``.

Exit status is 0 on success, 2 when BP does not reach its tolerance (or a
timing run misses delta), and 1 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .analysis import block_indicator, lipschitz_bound, potts_contraction_check
from .bp import bp_fixed_point, compute_marginals
from .harness import (
    PRESETS,
    NonConvergenceError,
    RunConfig,
    benchmark_timing,
    build_instance,
    format_cell,
    preset,
    run_sample_paths,
    write_csv,
)
from .imaging import denoise, preset_config, read_pgm, write_pgm
from .model import MRFError, PottsParams, graph_diameter, read_instance, write_instance
from .sbp import parse_schedule

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _size_for(kind: str, n: int, rows: Optional[int], cols: Optional[int]) -> tuple[int, ...]:
    if kind == "grid":
        if rows is None or cols is None:
            side = math.isqrt(n)
            if side * side != n:
                raise UsageError(f"grid needs --rows/--cols or a square --n, got n={n}")
            return (side, side)
        return (rows, cols)
    if kind == "star":
        return (n - 1,)
    return (n,)


def _config(args) -> RunConfig:
    """RunConfig from --preset, then explicit flags on top."""
    if args.preset:
        cfg = preset(args.preset)
    else:
        cfg = RunConfig(num_paths=1)
    over = {}
    if args.topology or args.n or args.rows:
        kind = args.topology or cfg.topology
        n = args.n or 100
        over["topology"] = kind
        over["size"] = _size_for(kind, n, args.rows, args.cols)
    if args.d is not None:
        over["d"] = args.d
    if args.eta is not None or args.lam is not None or args.sig is not None:
        over["potts"] = PottsParams(
            cfg.potts.eta if args.eta is None else args.eta,
            cfg.potts.lam if args.lam is None else args.lam,
            cfg.potts.sigma if args.sig is None else args.sig,
        )
    if args.seed is not None:
        over["seed"] = args.seed
    if args.uniform:
        over["uniform_potentials"] = True
    for key in ("schedule", "steps", "paths", "ref_tol", "ref_max_iter"):
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "schedule":
            over["schedule"] = parse_schedule(val)
        elif key == "steps":
            over["T"] = val
        elif key == "paths":
            over["num_paths"] = val
        elif key == "ref_tol":
            over["reference_tol"] = val
        else:
            over["reference_max_iter"] = val
    return replace(cfg, **over)


def _instance(args):
    if getattr(args, "instance", None):
        return read_instance(args.instance)
    return build_instance(_config(args))


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        try:
            with open(out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    mrf = build_instance(_config(args))
    if not args.out:
        raise UsageError("gen needs --out")
    write_instance(mrf, args.out)
    print(f"wrote n={mrf.topology.num_nodes} d={mrf.d} |E|={mrf.topology.num_edges} to {args.out}")
    return EXIT_OK


def cmd_bp(args) -> int:
    mrf = _instance(args)
    res = bp_fixed_point(mrf, tol=args.tol, max_iter=args.max_iter)
    marg = compute_marginals(mrf, res.messages)
    lines = ["node," + ",".join(f"p_{i}" for i in range(mrf.d))]
    lines += [f"{u}," + ",".join("%.17g" % x for x in row) for u, row in enumerate(marg)]
    _emit("\n".join(lines) + "\n", args.out)
    status = "converged" if res.converged else "not converged"
    print(f"BP {status} after {res.iterations} iterations", file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_sbp(args) -> int:
    cfg = _config(args)
    mrf = read_instance(args.instance) if args.instance else None
    traces = run_sample_paths(cfg, workers=args.workers, mrf=mrf)
    if args.out:
        write_csv(traces if len(traces) > 1 else traces[0], args.out)
    final = [float(tr.error[-1]) for tr in traces]
    print(f"{len(traces)} path(s), T={cfg.T}: final error min={min(final):.3e} max={max(final):.3e}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    rec = benchmark_timing(cfg, args.delta, repeats=args.repeats, max_sbp_iter=args.max_sbp_iter)
    if args.out:
        write_csv(rec, args.out)
    for key, val in rec.rows():
        print(f"{key},{val}")
    return EXIT_OK if rec.converged else EXIT_NONCONVERGED


def cmd_analyze(args) -> int:
    mrf = _instance(args)
    top = mrf.topology
    report = lipschitz_bound(mrf)
    lines = [report.to_text().rstrip("\n")]
    cert = block_indicator(top)
    lines.append(f"is_tree={top.is_tree()}")
    lines.append(f"diameter={graph_diameter(top)}")
    lines.append(f"nilpotency_degree={cert.degree if cert.nilpotent else 'none'}")
    eta = _potts_eta(mrf.edge_potentials)
    if eta is not None:
        pc = potts_contraction_check(mrf.d, eta, mrf.node_potentials, top.degrees)
        lines += [
            f"potts_eta={eta!r}",
            f"potts_lhs={pc.lhs!r}",
            f"potts_rhs={pc.rhs!r}",
            f"potts_contractive={pc.contractive}",
        ]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _potts_eta(tables: np.ndarray) -> Optional[float]:
    """Common eta if every table is a multiple of one Potts matrix, else None."""
    if len(tables) == 0 or tables.shape[1] < 2:
        return None
    scaled = tables / tables[:, :1, :1]
    eta = float(scaled[0, 0, 1])
    d = tables.shape[1]
    expect = np.full((d, d), eta)
    np.fill_diagonal(expect, 1.0)
    if not np.allclose(scaled, expect, rtol=1e-12, atol=0) or not 0.0 < eta <= 1.0:
        return None
    return eta


def cmd_denoise(args) -> int:
    base = preset_config(args.full_scale, noise_sigma=args.sigma)
    over = {"d": args.d, "eta": args.eta, "seed": args.seed}
    if args.schedule:
        over["schedule"] = parse_schedule(args.schedule)
    base = replace(base, **{k: v for k, v in over.items() if v is not None})
    if args.steps is not None:
        base = replace(base, T_bp=args.steps) if args.method == "bp" else replace(base, T_sbp=args.steps)
    noisy = read_pgm(args.input)
    clean = read_pgm(args.clean) if args.clean else None
    out, metrics = denoise(noisy, base, args.method, clean)
    write_pgm(out, args.out)
    msg = f"{metrics.method}: {metrics.iterations} iterations in {metrics.seconds:.3f}s"
    if metrics.mse is not None:
        msg += f", mse={metrics.mse:.6g} (noisy {metrics.noisy_mse:.6g})"
    print(msg)
    if args.metrics:
        write_csv_rows(args.metrics, metrics._asdict())
    return EXIT_OK


def write_csv_rows(path: str, values: dict) -> None:
    try:
        with open(path, "w") as fh:
            fh.write("key,value\n")
            for k, v in values.items():
                fh.write(f"{k},{format_cell(v)}\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# parser


def _instance_flags(p: argparse.ArgumentParser, allow_file: bool = True) -> None:
    g = p.add_argument_group("instance")
    if allow_file:
        g.add_argument("--instance", help="read an instance file instead of generating one")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--topology", choices=["chain", "grid", "star", "tree"])
    g.add_argument("--n", type=int, help="number of nodes")
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--d", type=int, help="states per node")
    g.add_argument("--eta", type=float, help="Potts coupling in (0, 1]")
    g.add_argument("--lam", type=float, help="node potential mean")
    g.add_argument("--sig", type=float, help="node potential spread")
    g.add_argument("--seed", type=int)
    g.add_argument("--uniform", action="store_true", help="all node potentials equal to 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochbp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write an instance file")
    _instance_flags(p, allow_file=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bp", help="BP fixed point and marginals")
    _instance_flags(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bp)

    p = sub.add_parser("sbp", help="SBP sample paths against the BP fixed point")
    _instance_flags(p)
    p.add_argument("--schedule", help="harmonic:c | thm2b:alpha,gamma | thm2c:gamma")
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--ref-tol", type=float)
    p.add_argument("--ref-max-iter", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sbp)

    p = sub.add_parser("compare", help="BP vs SBP time and op counts to reach delta")
    _instance_flags(p, allow_file=False)
    p.add_argument("--schedule")
    p.add_argument("--steps", type=int)
    p.add_argument("--ref-tol", type=float)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--max-sbp-iter", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="contraction certificate and nilpotency")
    _instance_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("denoise", help="denoise a binary PGM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--clean")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--method", choices=["bp", "sbp"], default="sbp")
    p.add_argument("--schedule")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--full-scale", action="store_true", help="256 gray levels instead of 16")
    p.add_argument("--metrics", help="also write metrics as key,value CSV")
    p.set_defaults(func=cmd_denoise)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (UsageError, MRFError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

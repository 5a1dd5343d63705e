"""Command-line interface.

Subcommands::

    mpscan simulate    --phantom vessel --plan grid:10x10 ... --out run1/
    mpscan reconstruct --bundle run1/ --lambda 5 --mu 1e-4 ... --out rec1/
    mpscan sweep       --bundle run1/ --param lambda --range 1:50 ...
    mpscan experiment  exp1 --scale desk --out exp1/

Every command is deterministic for a fixed ``--seed`` and writes a run
manifest next to its outputs.  ``--threads`` caps the numerical libraries'
thread pools (default 1, reproducibility first) and must therefore be
applied before the numerical modules load.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


def _parse_domain(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("domain must be a,b,c,d")
    return tuple(parts)


def _parse_pair(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated values")
    return tuple(parts)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpscan",
                                     description="multi-patch scan simulation and reconstruction")
    parser.add_argument("--threads", type=int, default=1,
                        help="thread cap for numerical libraries (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a scan bundle")
    sim.add_argument("--phantom", default="vessel",
                     help="phantom kind or path to a saved field (without suffix)")
    sim.add_argument("--plan", default="grid:10x10",
                     help="grid:IxJ | random:N | sweep:PERIODS")
    sim.add_argument("--domain", type=_parse_domain, default=(-2.0, 2.0, -2.0, 2.0))
    sim.add_argument("--amp", type=_parse_pair, default=(1.0, 1.0))
    sim.add_argument("--grid", type=int, default=64, help="phantom grid side")
    sim.add_argument("--samples", type=int, default=408, help="samples per period")
    sim.add_argument("--h", type=float, default=0.01)
    sim.add_argument("--noise", type=float, default=0.1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--oversample", type=int, default=1)
    sim.add_argument("--perturb-pos", type=float, default=0.0,
                     help="patch offset perturbation as a fraction of the amplitude")
    sim.add_argument("--perturb-angle", type=float, default=0.0,
                     help="patch angle perturbation bound in radians")
    sim.add_argument("--out", required=True)

    rec = sub.add_parser("reconstruct", help="two-stage reconstruction of a bundle")
    rec.add_argument("--bundle", required=True)
    rec.add_argument("--grid", type=int, default=None,
                     help="reconstruction grid side (default: bundle phantom grid)")
    rec.add_argument("--lambda", dest="lam", type=float, default=5.0)
    rec.add_argument("--cg-iters", type=int, default=1000)
    rec.add_argument("--cg-tol", type=float, default=1e-12)
    rec.add_argument("--mu", type=float, default=1e-4)
    rec.add_argument("--beta", type=float, default=1.0)
    rec.add_argument("--delta", type=float, default=1e-16)
    rec.add_argument("--gamma", type=float, default=1e-3)
    rec.add_argument("--tol", type=float, default=5e-6)
    rec.add_argument("--iters", type=int, default=100_000)
    rec.add_argument("--stage2", choices=("gfb", "landweber"), default="gfb")
    rec.add_argument("--gt", default=None,
                     help="ground-truth field path (without suffix) for metrics")
    rec.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="parameter sweep with a PSNR report")
    sw.add_argument("--bundle", required=True)
    sw.add_argument("--gt", required=True)
    sw.add_argument("--param", choices=("lambda", "mu"), required=True)
    sw.add_argument("--range", default=None,
                    help="lambda: LO:HI[:STEP] integer range; mu: comma-separated values")
    sw.add_argument("--refine", action="store_true",
                    help="mu only: refine around the winning decade")
    sw.add_argument("--grid", type=int, default=None)
    sw.add_argument("--lambda", dest="lam", type=float, default=5.0,
                    help="stage-1 weight used when sweeping mu")
    sw.add_argument("--beta", type=float, default=1.0)
    sw.add_argument("--gamma", type=float, default=1e-3)
    sw.add_argument("--iters", type=int, default=100_000)
    sw.add_argument("--cg-iters", type=int, default=1000)
    sw.add_argument("--out", required=True)

    ex = sub.add_parser("experiment", help="reproduce a bundled experiment")
    ex.add_argument("name", help="exp1 .. exp8")
    ex.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ex.add_argument("--seed", type=int, default=11)
    ex.add_argument("--out", required=True)
    return parser


def _write_manifest(out_dir, args, started):
    from pathlib import Path

    from mpscan import __version__
    from mpscan.fileio import save_json
    from mpscan.rng import GENERATOR_NAME

    payload = {
        "command": " ".join(sys.argv[1:]),
        "flags": {k: v for k, v in vars(args).items() if k != "command"},
        "version": __version__,
        "generator": GENERATOR_NAME,
        "wall_time_s": time.time() - started,
    }
    save_json(Path(out_dir) / "run_manifest.json", payload)


def _load_phantom(args):
    from pathlib import Path

    from mpscan.fileio import load_field
    from mpscan.phantoms import PHANTOM_KINDS, make_phantom

    if args.phantom in PHANTOM_KINDS:
        return make_phantom(args.phantom, args.grid, args.grid, args.domain)
    if Path(str(args.phantom) + ".json").exists():
        return load_field(args.phantom)
    raise SystemExit(f"unknown phantom {args.phantom!r}")


def _make_plan(args):
    from mpscan.geometry import (
        ScanPlan,
        SweepMotion,
        make_grid_plan,
        make_random_plan,
        perturb_plan,
        standard_lissajous,
    )

    kind, _, arg = args.plan.partition(":")
    base = standard_lissajous(args.amp, args.samples)
    if kind == "grid":
        i, _, j = arg.partition("x")
        plan = make_grid_plan(args.domain, args.amp, int(i), int(j), base=base)
    elif kind == "random":
        plan = make_random_plan(args.domain, args.amp, int(arg), args.seed, base=base)
    elif kind == "sweep":
        a, b, c, d = args.domain
        ax = args.amp[0]
        sweep = SweepMotion(offset_start=(a - ax, 0.0), offset_end=(b + ax, 0.0),
                            periods=int(arg))
        plan = ScanPlan(base=base, sweep=sweep)
    else:
        raise SystemExit(f"unknown plan kind {kind!r}")
    if args.perturb_pos > 0 or args.perturb_angle > 0:
        plan = perturb_plan(plan, args.perturb_pos, args.perturb_angle, args.seed + 1)
    return plan


def _cmd_simulate(args):
    from pathlib import Path

    import numpy as np

    from mpscan.fileio import save_bundle, save_field
    from mpscan.physics import NoiseModel, simulate_scan

    rho = _load_phantom(args)
    plan = _make_plan(args)
    data = simulate_scan(rho, plan, args.h, NoiseModel(args.noise, args.seed),
                         domain=args.domain, oversample=args.oversample)
    out = Path(args.out)
    save_bundle(out, data, plan, args.h, args.noise, args.seed,
                extra={"phantom": str(args.phantom), "domain": list(args.domain),
                       "phantom_grid": rho.nx})
    save_field(out / "ground_truth", rho)
    counts = np.bincount(data.patch, minlength=plan.num_patches)
    for idx, n in enumerate(counts):
        print(f"patch {idx}: {n} samples")
    print(f"retained {len(data)} samples in {plan.num_patches} patches -> {out}")
    return 0


def _reconstruction_grid(args, manifest):
    from mpscan.grid import GridSpec

    n = args.grid or manifest.get("phantom_grid", 64)
    domain = tuple(manifest.get("domain", (-2.0, 2.0, -2.0, 2.0)))
    return GridSpec(n, n, domain)


def _cmd_reconstruct(args):
    from pathlib import Path

    from mpscan.fileio import load_bundle, load_field, save_field, save_json, save_pgm
    from mpscan.metrics import psnr, ssim, trace_reference
    from mpscan.stage1 import Stage1Config, solve_stage1
    from mpscan.stage2 import (
        ConvolutionOperator,
        Stage2Config,
        solve_landweber,
        solve_stage2,
    )

    data, manifest = load_bundle(args.bundle)
    grid = _reconstruction_grid(args, manifest)
    h = manifest["h"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    config = Stage1Config(lam=args.lam, cg_max_iters=args.cg_iters,
                          cg_tolerance=args.cg_tol)
    _, u, diag1 = solve_stage1(data, grid, config)
    save_field(out / "trace", u)
    save_pgm(out / "trace.pgm", u)

    kop = ConvolutionOperator(grid, h)
    if args.stage2 == "gfb":
        cfg = Stage2Config(mu=args.mu, beta=args.beta, delta=args.delta,
                           gamma=args.gamma, tolerance=args.tol, max_iters=args.iters)
        rec, diag2 = solve_stage2(u, cfg, kop)
        diag2_payload = diag2.__dict__
    else:
        rec = solve_landweber(u, args.mu, args.delta, args.gamma, kop, args.iters,
                              tolerance=args.tol)
        diag2_payload = {"solver": "landweber", "iterations": args.iters}
    save_field(out / "reconstruction", rec)
    save_pgm(out / "reconstruction.pgm", rec)
    save_json(out / "diagnostics.json",
              {"stage1": diag1.__dict__, "stage2": diag2_payload})

    if args.gt:
        from mpscan.fileio import append_report_row

        gt = load_field(args.gt)
        ref = trace_reference(gt, h)
        append_report_row(out / "report.csv", {
            "experiment": "reconstruct", "stage": "stage1",
            "param": f"lambda={args.lam}", "psnr": psnr(ref, u), "ssim": ssim(ref, u)})
        append_report_row(out / "report.csv", {
            "experiment": "reconstruct", "stage": "stage2",
            "param": f"mu={args.mu}", "psnr": psnr(gt, rec), "ssim": ssim(gt, rec)})
        print(f"stage2 PSNR {psnr(gt, rec):.2f} dB, SSIM {ssim(gt, rec):.4f}")
    print(f"stage1 iters {diag1.iterations}, outputs in {out}")
    return 0


def _cmd_sweep(args):
    from pathlib import Path

    from mpscan.experiments import mu_refinement
    from mpscan.fileio import load_bundle, load_field, write_report
    from mpscan.metrics import psnr, trace_reference
    from mpscan.stage1 import Stage1Config, solve_stage1
    from mpscan.stage2 import ConvolutionOperator, Stage2Config, solve_stage2

    data, manifest = load_bundle(args.bundle)
    grid = _reconstruction_grid(args, manifest)
    h = manifest["h"]
    gt = load_field(args.gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    if args.param == "lambda":
        spec = args.range or "1:50"
        parts = [int(v) for v in spec.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        if hi < lo:
            raise SystemExit("empty sweep range")
        ref = trace_reference(gt, h)
        best = None
        for lam in range(lo, hi + 1, step):
            _, u, _ = solve_stage1(data, grid,
                                   Stage1Config(lam=float(lam), cg_max_iters=args.cg_iters))
            score = psnr(ref, u)
            rows.append({"experiment": "sweep", "stage": "stage1",
                         "param": f"lambda={lam}", "psnr": score, "ssim": ""})
            if best is None or score > best[1]:
                best = (lam, score)
        print(f"best lambda={best[0]} with trace PSNR {best[1]:.2f} dB")
    else:
        values = ([float(v) for v in args.range.split(",")] if args.range
                  else [1e-7, 1e-6, 1e-5, 1e-4, 1e-3])
        if not values:
            raise SystemExit("empty sweep range")
        _, u, _ = solve_stage1(data, grid,
                               Stage1Config(lam=args.lam, cg_max_iters=args.cg_iters))
        kop = ConvolutionOperator(grid, h)

        def run(mu):
            cfg = Stage2Config(mu=mu, beta=args.beta, gamma=args.gamma,
                               max_iters=args.iters)
            rec, _ = solve_stage2(u, cfg, kop)
            return psnr(gt, rec)

        best = None
        for mu in values:
            score = run(mu)
            rows.append({"experiment": "sweep", "stage": "stage2",
                         "param": f"mu={mu}", "psnr": score, "ssim": ""})
            if best is None or score > best[1]:
                best = (mu, score)
        if args.refine:
            for mu in mu_refinement(best[0]):
                if any(abs(mu - v) < 1e-30 for v in values):
                    continue
                score = run(mu)
                rows.append({"experiment": "sweep", "stage": "stage2",
                             "param": f"mu={mu}", "psnr": score, "ssim": ""})
                if score > best[1]:
                    best = (mu, score)
        print(f"best mu={best[0]:g} with PSNR {best[1]:.2f} dB")
    write_report(out / "sweep.csv", rows)
    return 0


def _cmd_experiment(args):
    from mpscan.experiments import run_experiment

    summary = run_experiment(args.name, scale_name=args.scale, seed=args.seed,
                             out_dir=args.out)
    print(json.dumps(summary, indent=2, default=lambda o: getattr(o, "__dict__", str(o))))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    # cap BLAS/OpenMP pools before numpy comes up anywhere in the pipeline
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    started = time.time()
    handlers = {
        "simulate": _cmd_simulate,
        "reconstruct": _cmd_reconstruct,
        "sweep": _cmd_sweep,
        "experiment": _cmd_experiment,
    }
    code = handlers[args.command](args)
    if getattr(args, "out", None):
        _write_manifest(args.out, args, started)
    return code


if __name__ == "__main__":
    sys.exit(main())

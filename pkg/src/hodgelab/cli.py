"""Command-line driver: ``hodgelab mesh | spectrum | verify <claim> | heat``.

Exit status: 0 when the command succeeded (and a verified claim holds),
1 when a computation ran but failed or was insufficient, 2 on usage errors.
Options may also come from a flat ``key = value`` file given by
``--config``; command-line flags win over the file, which wins over defaults.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import (
    CLAIMS,
    ClaimReport,
    TailBoundError,
    UnsupportedDimensionError,
    build_heat_evaluator,
    heat_kernel,
    verify_gradient_lemma,
    verify_heat_decay,
    verify_intertwining,
    verify_semigroup,
    verify_sharpness,
    verify_sobolev,
    verify_supnorm,
    verify_weyl,
)
from .complex import generate_flat_torus, generate_icosphere, load_complex, save_complex, validate
from .dec import DegenerateMeshError, NotWellCenteredError, hodge_laplacian, near_nullspace
from .eigen import (
    ConvergenceError,
    IllPosedError,
    NoSpectralGapError,
    SolverConfig,
    kernel_gap,
    load_decomposition,
    save_decomposition,
    solve_all_dense,
    solve_lowest,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
VERIFY_CLAIMS = ("weyl", "sharpness", "lemma", "supnorm", "heat", "semigroup", "sobolev", "betti", "intertwining")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config file and manifest


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use ``-`` or ``_``."""
    out = {}
    for num, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    for action in parser._actions:
        if action.dest not in config:
            continue
        raw = config[action.dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs not in (None, "?"):
            conv = action.type or str
            value = [conv(v) for v in raw.replace(",", " ").split()]
        else:
            value = (action.type or str)(raw)
        action.default = value


def _manifest(args, inputs: dict, outputs: dict) -> dict:
    params = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "config", "command") and not callable(v)
    }
    return {
        "subcommand": args.command if args.command != "verify" else f"verify {args.claim}",
        "inputs": inputs,
        "outputs": outputs,
        "parameters": params,
        "version": __version__,
    }


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_report(path, payload: dict, manifest: dict, started: float) -> None:
    doc = {
        "manifest": manifest,
        "report": payload,
        # run-specific values live apart from the reproducible content
        "timing": {
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "duration_s": round(time.perf_counter() - started, 3),
        },
    }
    _atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> int:
    started = time.perf_counter()
    try:
        if args.kind == "torus":
            complex = generate_flat_torus(args.dim, args.res, args.period, args.split)
        else:
            complex = generate_icosphere(args.level)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = validate(complex)
    out = Path(args.out)
    save_complex(complex, out)
    vpath = out.with_name(out.stem + ".validation.json")
    manifest = _manifest(args, {}, {"mesh": str(out), "validation": str(vpath)})
    _write_report(vpath, report.to_dict(), manifest, started)
    counts = ", ".join(str(c) for c in report.counts)
    print(f"{complex.metadata.name}: simplices per degree ({counts}), chi = {report.euler_characteristic}")
    print(f"validation: {'passed' if report.passed else 'FAILED'}")
    for v in report.violations[:10]:
        print(f"  {v}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_spectrum(args) -> int:
    started = time.perf_counter()
    complex = load_complex(args.mesh)
    if not 0 <= args.degree <= complex.dim:
        raise UsageError(f"degree must lie in 0..{complex.dim}")
    pair = hodge_laplacian(complex, args.degree, args.scheme)
    if args.dense:
        dec = solve_all_dense(pair)
        if args.count is not None:
            dec = dec.truncated(args.count)
    else:
        if args.count is None:
            raise UsageError("--count is required unless --dense is given")
        config = SolverConfig(args.count, tol=args.tol, max_iter=args.max_iter, seed=args.seed,
                              block_size=args.block_size)
        try:
            dec = solve_lowest(pair, config, near_nullspace(complex, args.degree))
        except ConvergenceError as exc:
            print(f"error: {exc} (worst residual {exc.worst_residual:.3e})", file=sys.stderr)
            return EXIT_FAIL
    out = Path(args.out)
    manifest = _manifest(args, {"mesh": str(args.mesh)}, {"decomposition": str(out)})
    save_decomposition(dec, out, extra={"mesh": str(Path(args.mesh).resolve()), "manifest": manifest})
    print(f"{'k':>5}  {'lambda':>20}  {'residual':>10}")
    for i, (lam, res) in enumerate(zip(dec.eigenvalues, dec.residuals), 1):
        print(f"{i:>5}  {lam:>20.12g}  {res:>10.3e}")
    print(f"scheme {pair.scheme}, method {dec.method}, {time.perf_counter() - started:.2f}s")
    return EXIT_OK


def _load_inputs(args, need_mesh=True):
    dec = header = None
    if getattr(args, "spec", None):
        dec, header = load_decomposition(args.spec)
    mesh_path = getattr(args, "mesh", None) or (header or {}).get("mesh")
    complex = None
    if need_mesh:
        if not mesh_path:
            raise UsageError("a mesh is required (--mesh, or a decomposition that records one)")
        complex = load_complex(mesh_path)
    return dec, complex, mesh_path


def _require_spec(dec):
    if dec is None:
        raise UsageError("--spec (a decomposition file) is required for this claim")
    return dec


def _verify(args) -> ClaimReport:
    claim = args.claim
    need_mesh = claim not in ("weyl", "betti")
    dec, complex, _ = _load_inputs(args, need_mesh)
    if claim == "betti":
        dec = _require_spec(dec)
        dim, ratio = kernel_gap(dec)
        passed = ratio >= args.min_ratio
        print(dim if passed else "no spectral gap")
        metrics = {"degree": dec.degree, "betti": dim, "gap_ratio": min(ratio, 1e300), "min_ratio": args.min_ratio}
        return ClaimReport("betti-number", passed, metrics)
    if claim == "sobolev":
        return verify_sobolev(complex, args.trials, args.seed, args.degree, dec).to_report()
    dec = _require_spec(dec)
    if claim == "weyl":
        n = args.n if args.n is not None else _load_inputs(args, True)[1].dim
        rng = tuple(args.k_range) if args.k_range else None
        return verify_weyl(dec, args.betti, n, rng, args.tolerance or 0.1)
    if claim == "sharpness":
        lo, hi = args.cutoffs
        return verify_sharpness(dec, complex, range(lo, hi + 1), args.tolerance or 0.15)
    if claim == "lemma":
        return verify_gradient_lemma(dec, complex, args.k, args.trials, args.seed, args.tol_disc)
    if claim == "supnorm":
        return verify_supnorm(dec, complex, args.betti, tol=args.tolerance or 0.1)
    if claim == "heat":
        ev = build_heat_evaluator(dec, complex, args.betti)
        lo, hi, num = args.times
        return verify_heat_decay(ev, np.geomspace(lo, hi, int(num)), args.tolerance or 0.15)
    if claim == "semigroup":
        err = verify_semigroup(dec, complex, args.t, args.s)
        metrics = {"t": args.t, "s": args.s, "max_abs_error": err, "bound": args.bound}
        return ClaimReport(CLAIMS["semigroup"], err <= args.bound, metrics)
    if claim == "intertwining":
        return verify_intertwining(dec, complex)
    raise UsageError(f"unknown claim {claim!r}")


def cmd_verify(args) -> int:
    started = time.perf_counter()
    try:
        report = _verify(args)
    except (TailBoundError, UnsupportedDimensionError, NoSpectralGapError, IllPosedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        # insufficient eigenpairs, bad ranges and similar analysis preconditions
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(report.to_text(), end="")
    if args.out:
        out = Path(args.out)
        inputs = {k: str(getattr(args, k)) for k in ("spec", "mesh") if getattr(args, k, None)}
        csv_path = out.with_suffix(".csv")
        manifest = _manifest(args, inputs, {"report": str(out), "csv": str(csv_path)})
        _write_report(out, report.to_dict(), manifest, started)
        _atomic_write(csv_path, report.to_csv())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_heat(args) -> int:
    if args.t is None and args.times is None:
        raise UsageError("give --t and/or --times")
    ts = list(args.t or [])
    if args.times:
        lo, hi, num = args.times
        ts.extend(np.geomspace(lo, hi, int(num)).tolist())
    if any(not t > 0 for t in ts):
        raise UsageError("t must be positive")
    dec, complex, _ = _load_inputs(args, True)
    dec = _require_spec(dec)
    try:
        ev = build_heat_evaluator(dec, complex, args.betti)
    except (ValueError, NoSpectralGapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rows = ["t,max_diagonal_deviation,tail_bound"]
    for t in ts:
        tail = ev.tail_bound(t)
        if args.accuracy is not None and tail > args.accuracy:
            print(f"error: tail bound {tail:.3e} exceeds accuracy {args.accuracy:.3e} at t={t:g}; "
                  "compute more eigenpairs or use larger t", file=sys.stderr)
            return EXIT_FAIL
        rows.append(f"{t!r},{float(ev.diagonal_deviation(t).max())!r},{tail!r}")
    if args.pair:
        rows.append("t,x,y,H")
        for t in ts:
            for x, y in args.pair:
                h = heat_kernel(ev, x, y, t)
                value = h if np.ndim(h) == 0 else float(np.trace(h))
                rows.append(f"{t!r},{x},{y},{value!r}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if args.out:
        _atomic_write(args.out, text)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hodgelab", description="DEC Hodge-Laplacian spectral toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="flat key = value option file")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/LAPACK threads (fallback: HODGELAB_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate and validate a mesh")
    mesh.add_argument("kind", choices=("torus", "sphere"))
    mesh.add_argument("--dim", type=int, default=2)
    mesh.add_argument("--res", type=int, default=32)
    mesh.add_argument("--period", type=float, default=2 * np.pi)
    mesh.add_argument("--split", choices=("zigzag", "diagonal"), default=None)
    mesh.add_argument("--level", type=int, default=3)
    mesh.add_argument("--out", required=True)
    mesh.set_defaults(func=cmd_mesh)

    spec = sub.add_parser("spectrum", help="lowest eigenpairs of the Hodge Laplacian")
    spec.add_argument("--mesh", required=True)
    spec.add_argument("--degree", type=int, default=0)
    spec.add_argument("--count", type=int, default=None)
    spec.add_argument("--tol", type=float, default=1e-8)
    spec.add_argument("--max-iter", type=int, default=1000)
    spec.add_argument("--block-size", type=int, default=None)
    spec.add_argument("--scheme", choices=("auto", "barycentric", "circumcentric"), default="auto")
    spec.add_argument("--dense", action="store_true", help="full dense spectrum (small meshes)")
    spec.add_argument("--seed", type=int, default=0)
    spec.add_argument("--out", required=True)
    spec.set_defaults(func=cmd_spectrum)

    ver = sub.add_parser("verify", help="check one estimate and write a report")
    ver.add_argument("claim", choices=VERIFY_CLAIMS)
    ver.add_argument("--spec", help="decomposition file")
    ver.add_argument("--mesh", help="mesh file (default: the one recorded in --spec)")
    ver.add_argument("--betti", type=int, default=None)
    ver.add_argument("--n", type=int, default=None, help="manifold dimension (weyl; default from mesh)")
    ver.add_argument("--k-range", type=int, nargs=2, default=None)
    ver.add_argument("--cutoffs", type=int, nargs=2, default=[10, 150])
    ver.add_argument("--k", type=int, default=20)
    ver.add_argument("--trials", type=int, default=100)
    ver.add_argument("--tol-disc", type=float, default=0.05)
    ver.add_argument("--tolerance", type=float, default=None, help="slope tolerance override")
    ver.add_argument("--times", type=float, nargs=3, default=[0.05, 0.5, 20], metavar=("LO", "HI", "NUM"))
    ver.add_argument("--t", type=float, default=0.3)
    ver.add_argument("--s", type=float, default=0.3)
    ver.add_argument("--bound", type=float, default=1e-10)
    ver.add_argument("--degree", type=int, default=0)
    ver.add_argument("--min-ratio", type=float, default=1e3)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", default=None, help="JSON report path (CSV written alongside)")
    ver.set_defaults(func=cmd_verify)

    heat = sub.add_parser("heat", help="tabulate the spectral heat kernel")
    heat.add_argument("--spec", required=True)
    heat.add_argument("--mesh", default=None)
    heat.add_argument("--t", type=float, action="append", default=None)
    heat.add_argument("--times", type=float, nargs=3, default=None, metavar=("LO", "HI", "NUM"))
    heat.add_argument("--pair", type=int, nargs=2, action="append", default=None, metavar=("X", "Y"))
    heat.add_argument("--betti", type=int, default=None)
    heat.add_argument("--accuracy", type=float, default=None)
    heat.add_argument("--seed", type=int, default=0)
    heat.add_argument("--out", default=None)
    heat.set_defaults(func=cmd_heat)
    return parser


def _threads(value) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("HODGELAB_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HODGELAB_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg_path = _find_config(argv)
        if cfg_path:
            config = read_config(cfg_path)
            for sp in parser._subparsers._group_actions[0].choices.values():
                _apply_config(sp, config)
        args = parser.parse_args(argv)
        threads = _threads(args.threads)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be positive")
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hodgelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"hodgelab: error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateMeshError, NotWellCenteredError) as exc:
        print(f"hodgelab: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


def _find_config(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point ``acgn``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 runtime failure (instability, non-convergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .capacity import Allocation, CapacityResult, ChannelDesign, solve, waterfill
from .coding import UnstableLoop, synthesize, verify_design
from .config import ChannelConfig, ConfigError, dump_config, load_config, parse_config

__all__ = ["main", "build_parser", "run_record", "load_design"]

log = logging.getLogger("acgn")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _g(x) -> str:
    return f"{x:.6g}"


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _design_dict(design: ChannelDesign) -> dict:
    return {
        "A": design.A, "C": design.C, "P": design.P, "Khat": design.Khat, "U": design.U,
        "Vhat_eigs": design.alloc.Vhat_eigs, "P_alloc": design.alloc.P,
        "signs": design.alloc.signs, "a": design.alloc.a,
        "transmit_power": design.transmit_power, "are_residual": design.are_residual,
    }


def _result_dict(res: CapacityResult) -> dict:
    return {
        "lower_bound_bits": res.lower_bound_bits,
        "method": res.method,
        "budget": res.budget,
        "sign": res.design.alloc.sign,
        "transmit_power": res.design.transmit_power,
        "design": _design_dict(res.design),
    }


def _verification_dict(vr) -> dict:
    out = {
        "passed": vr.passed,
        "checks": [{"name": c.name, "status": c.status, "value": c.value, "tol": c.tol,
                    "detail": c.detail} for c in vr.checks],
        "spectral_radius": vr.spectral_radius,
        "rate_bits": vr.rate_bits,
        "spectral_rate_bits": vr.spectral_rate_bits,
        "mc_tol": vr.mc_tol,
    }
    sim = vr.simulation
    if sim is not None:
        out["simulation"] = {
            "steps": sim.steps, "burn_in": sim.burn_in, "seed": sim.seed,
            "controller": sim.controller,
            "empirical_power": sim.empirical_power, "predicted_power": sim.predicted_power,
            "empirical_error_cov": sim.empirical_error_cov,
            "predicted_error_cov": sim.predicted_error_cov,
            "power_rel_err": sim.power_rel_err, "cov_rel_err": sim.cov_rel_err,
            "window_powers": list(sim.window_powers),
        }
    return out


def run_record(command: str, cfg: ChannelConfig | None, result=None, verification=None,
               wall_time: float = 0.0, extra: dict | None = None) -> dict:
    rec = {"tool": "acgn", "version": __version__, "command": command,
           "config": cfg.to_dict() if cfg is not None else None}
    if result is not None:
        rec["result"] = _result_dict(result)
    if verification is not None:
        rec["verification"] = _verification_dict(verification)
    if extra:
        rec.update(extra)
    rec["wall_time_s"] = wall_time
    return _clean(rec)


def load_design(path, cfg: ChannelConfig | None = None):
    """Read a design file written by ``acgn design --out``.

    Returns ``(config, CapacityResult)``; the noise model comes from ``cfg``
    when given, otherwise from the config stored in the file.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if cfg is None:
            cfg = parse_config(json.dumps(doc["config"]))
        r = doc["result"]
        d = r["design"]
        alloc = Allocation(P=d["P_alloc"], Vhat_eigs=d["Vhat_eigs"], signs=d["signs"])
        arr = lambda k: np.array(d[k], dtype=float)
        design = ChannelDesign(A=arr("A"), C=arr("C"), P=arr("P"), Khat=arr("Khat"), U=arr("U"),
                               alloc=alloc, transmit_power=float(d["transmit_power"]),
                               are_residual=float(d["are_residual"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed design file: {exc}") from exc
    if design.A.shape != (cfg.n, cfg.n):
        raise ConfigError("design file does not match the channel dimension")
    res = CapacityResult(lower_bound_bits=float(r["lower_bound_bits"]), design=design,
                         budget=float(r["budget"]), method=str(r["method"]))
    return cfg, res


def _config(args) -> ChannelConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    sign = getattr(args, "sign", None)
    return cfg.with_overrides(budget=getattr(args, "budget", None), seed=getattr(args, "seed", None),
                              steps=getattr(args, "steps", None), nodes=getattr(args, "nodes", None),
                              sign=None if sign in (None,) else sign)


def _solve(cfg: ChannelConfig) -> CapacityResult:
    return solve(cfg.noise, cfg.budget, sign_policy=cfg.sign, restarts=cfg.restarts, seed=cfg.seed)


def _sign_str(s) -> str:
    return {1: "+", -1: "-", 0: "mixed"}[int(s)]


def _print_result(res: CapacityResult, out):
    a = res.design.alloc
    print(f"method          {res.method}", file=out)
    print(f"lower bound     {_g(res.lower_bound_bits)} bits/use", file=out)
    print(f"sign            {_sign_str(a.sign)}", file=out)
    print(f"budget          {_g(res.budget)}", file=out)
    print(f"transmit power  {_g(res.design.transmit_power)}", file=out)
    print(f"{'channel':>7} {'Vhat':>12} {'P':>12} {'a':>12} {'sign':>5}", file=out)
    for l in range(len(a.P)):
        print(f"{l + 1:>7} {_g(a.Vhat_eigs[l]):>12} {_g(a.P[l]):>12} {_g(a.a[l]):>12} "
              f"{_sign_str(a.signs[l]):>5}", file=out)


def _print_matrix(name, m, out):
    print(f"{name} =", file=out)
    for row in np.atleast_2d(m):
        print("  " + " ".join(f"{_g(x):>12}" for x in row), file=out)


def _print_verification(vr, out):
    for c in vr.checks:
        tol = "" if c.tol is None else f" (tol {_g(c.tol)})"
        val = "n/a" if not math.isfinite(c.value) else _g(c.value)
        print(f"[{c.status.upper():>12}] {c.name:<11} {val}{tol} {c.detail}".rstrip(), file=out)
    print(f"{vr.n_pass}/{len(vr.checks)} checks pass", file=out)


def _emit(args, record, human):
    if args.json:
        json.dump(record, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        human(sys.stdout)


def cmd_capacity(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    res = _solve(cfg)
    rec = run_record("capacity", cfg, result=res, wall_time=time.perf_counter() - t0,
                     extra={"diagnostics": _clean({k: v for k, v in res.diagnostics.items()
                                                   if k != "starts"})})
    _emit(args, rec, lambda out: _print_result(res, out))
    return EXIT_OK


def cmd_waterfill(args) -> int:
    t0 = time.perf_counter()
    if args.budget is None or not args.budget > 0:
        raise ConfigError("budget must be positive")
    eigs = np.array(args.eigs, dtype=float)
    if np.any(eigs <= 0):
        raise ConfigError("noise eigenvalues must be positive")
    alloc = waterfill(eigs, args.budget)
    rec = run_record("waterfill", None, wall_time=time.perf_counter() - t0,
                     extra={"Vhat_eigs": eigs, "budget": args.budget,
                            "water_level": alloc.water_level, "P": alloc.P,
                            "rate_bits": alloc.rate_bits})

    def human(out):
        print(f"water level  {_g(alloc.water_level)}", file=out)
        print(f"rate         {_g(alloc.rate_bits)} bits/use", file=out)
        print(f"{'channel':>7} {'Vhat':>12} {'P':>12}", file=out)
        for l, (v, p) in enumerate(zip(eigs, alloc.P)):
            print(f"{l + 1:>7} {_g(v):>12} {_g(p):>12}", file=out)
    _emit(args, rec, human)
    return EXIT_OK


def cmd_design(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    res = _solve(cfg)
    rec = run_record("design", cfg, result=res, wall_time=time.perf_counter() - t0)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rec, fh, indent=2)
            fh.write("\n")

    def human(out):
        _print_result(res, out)
        for name in ("A", "C", "Khat", "P"):
            _print_matrix(name, getattr(res.design, name), out)
    _emit(args, rec, human)
    return EXIT_OK


def _write_csv(path, sim):
    y, e = sim.y, sim.e
    n = y.shape[1]
    k = np.arange(y.shape[0], dtype=float)[:, None]
    power = np.sum(y * y, axis=1)[:, None]
    data = np.hstack([k, y, e, power])
    header = ",".join(["k"] + [f"y{i + 1}" for i in range(n)] + [f"e{i + 1}" for i in range(n)]
                      + ["power"])
    fmt = ["%d"] + ["%.17g"] * (2 * n + 1)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        np.savetxt(fh, data, fmt=fmt, delimiter=",", header=header, comments="", newline="\n")


def _verify_and_report(command, args, cfg, res, t0, record=False) -> int:
    synthesize(res, cfg.noise, controller=cfg.controller)
    vr = verify_design(res, cfg.noise, T=cfg.steps, seed=cfg.seed, nodes=cfg.nodes,
                       controller=cfg.controller, record=record)
    if record and vr.simulation is not None:
        _write_csv(args.dump, vr.simulation)
    rec = run_record(command, cfg, result=res, verification=vr, wall_time=time.perf_counter() - t0)

    def human(out):
        print(f"lower bound     {_g(res.lower_bound_bits)} bits/use", file=out)
        sim = vr.simulation
        if sim is not None:
            print(f"steps           {sim.steps} (burn-in {sim.burn_in}, seed {sim.seed})", file=out)
            print(f"power           {_g(sim.empirical_power)} (predicted {_g(sim.predicted_power)}, "
                  f"rel err {_g(sim.power_rel_err)})", file=out)
            print(f"error cov       rel err {_g(sim.cov_rel_err)}", file=out)
        _print_verification(vr, out)
    _emit(args, rec, human)
    if vr.inconclusive:
        print(f"warning: inconclusive checks: {', '.join(vr.inconclusive)}", file=sys.stderr)
    if not vr.passed:
        print(f"failed checks: {', '.join(vr.failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    res = _solve(cfg)
    return _verify_and_report("simulate", args, cfg, res, t0, record=bool(args.dump))


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    if args.design:
        cfg = _config(args) if args.config else None
        cfg, res = load_design(args.design, cfg)
        if not args.config:
            cfg = cfg.with_overrides(seed=args.seed, steps=args.steps, nodes=args.nodes)
    else:
        cfg = _config(args)
        res = _solve(cfg)
    return _verify_and_report("verify", args, cfg, res, t0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acgn", description="Feedback-capacity lower bounds and "
                                     "recursive coding for parallel ACGN channels.")
    parser.add_argument("--version", action="version", version=f"acgn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget=True, sim=False):
        p.add_argument("--config", help="YAML channel configuration")
        if budget:
            p.add_argument("--budget", type=float, help="override the power budget")
        p.add_argument("--sign", choices=["auto", "+", "-"], help="sign branch policy")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--json", action="store_true", help="machine-readable JSON output")
        if sim:
            p.add_argument("--steps", type=int, help="simulation length")
            p.add_argument("--nodes", type=int, help="initial quadrature node count")

    p = sub.add_parser("capacity", help="compute the lower bound and allocation")
    common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("waterfill", help="water-filling on given noise eigenvalues")
    p.add_argument("eigs", type=float, nargs="+")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_waterfill)

    p = sub.add_parser("design", help="print A, C, Khat and P")
    common(p)
    p.add_argument("--out", help="write the design as JSON")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="synthesize, simulate and verify")
    common(p, sim=True)
    p.add_argument("--dump", help="write the trajectory as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the six design checks")
    common(p, sim=True)
    p.add_argument("--design", help="design JSON written by 'acgn design --out'")
    p.set_defaults(func=cmd_verify)
    return parser


def _setup_logging():
    level = os.environ.get("ACGN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnstableLoop, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""``oclab`` command line: build, minimize, lowerbound, game, run, verify, fit.

Exit codes: 0 success, 1 invalid input, 2 violated builder conditions,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

from .adversary import BUILTIN_ALGORITHMS, builtin_algorithm, gap_lower_bound, run_resisting_game
from .bench import ExperimentConfig, build_cell, fit_exponent, run_experiment
from .core import InvalidInput, OclabError
from .hard_instances import ChainSpec, Family, HardInstance
from .minimizers import property_report, solve
from .optimizers import OPTIMIZERS
from .verify import verify_spec


def _add_instance_flags(p):
    p.add_argument("--family", choices=[f.value for f in Family], default="convex")
    p.add_argument("--mu1", type=float, default=1.0)
    p.add_argument("--mu2", type=float, default=1.0, help="Hessian (or k-th derivative) Lipschitz constant")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--D", type=float, default=1.0)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="read a ChainSpec JSON file instead of building one")


def _spec(args, game: bool = False) -> ChainSpec:
    """The builder's spec for horizon T; ``game=True`` gives the chain the game is played on."""
    if getattr(args, "spec", None):
        with open(args.spec) as fh:
            return ChainSpec.from_json(fh.read())
    cell = {"mu1": args.mu1, "mu2": args.mu2, "lam": args.lam, "D": args.D, "k": args.k, "T": args.T}
    played, base = build_cell(args.family, cell, args.seed)
    return played if game else base


def _gap_params(args) -> dict:
    if args.family == Family.KORDER.value:
        return {"k": args.k, "muk": args.mu2, "D": args.D}
    return {"mu1": args.mu1, "mu2": args.mu2, "lam": args.lam, "D": args.D}


def _emit(args, payload: dict, text: str = None):
    body = json.dumps(payload, indent=2, default=float)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(body + "\n")
    if args.json or text is None:
        print(body)
    else:
        print(text)


def cmd_build(args):
    spec = _spec(args)
    _emit(args, spec.to_dict(),
          f"{spec.family.value}: chain {spec.n_chain}, dim {spec.dim}, gamma {spec.gamma:.6g}, scale {spec.scale:.6g}")


def cmd_minimize(args):
    spec = _spec(args)
    sol = solve(spec)
    rep = property_report(spec, sol)
    payload = {"solution": sol.to_dict(), "properties": rep.to_dict()}
    _emit(args, payload, f"f* = {sol.f_star:.17g}  kkt = {sol.kkt_residual:.3g}\n{rep.table()}")


def cmd_lowerbound(args):
    params = _gap_params(args)
    if args.family == Family.STRONGLY_CONVEX.value:
        params["spec"] = _spec(args)
    b = gap_lower_bound(args.family, params, args.T)
    payload = {"family": b.family, "T": b.T, "gap": b.computed, "floor": b.floor,
               "certified": b.computed >= b.floor, "details": b.details}
    _emit(args, payload, f"T={b.T}: gap {b.computed:.6g} >= floor {b.floor:.6g}: {b.computed >= b.floor}")


def cmd_game(args):
    spec = _spec(args, game=True)
    name = args.optimizer or "zero"
    if name not in BUILTIN_ALGORITHMS:
        raise InvalidInput(f"games support {BUILTIN_ALGORITHMS}")
    g = run_resisting_game(builtin_algorithm(name, spec), spec=spec, T=args.T, seed=args.seed, algorithm_id=name)
    params = _gap_params(args)
    if args.family == Family.STRONGLY_CONVEX.value:
        params = {"spec": spec}
    bound = gap_lower_bound(args.family, params, args.T).computed
    payload = g.to_dict()
    payload["gap_lower_bound"] = bound
    payload["sound"] = min(g.gaps) >= bound * (1 - 1e-9)
    _emit(args, payload, f"{name}: final gap {g.gaps[-1]:.6g}, certified {bound:.6g}, sound {payload['sound']}")


def cmd_run(args):
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        summary = run_experiment(cfg)
        print(json.dumps(summary["fits"], indent=2) if args.json else f"wrote {cfg.out_dir}")
        return
    name = args.optimizer or "cubic-newton"
    problem = HardInstance(_spec(args, game=True))
    tr = OPTIMIZERS[name](problem, eps=args.eps, budget=args.budget)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(tr.to_csv())
    if args.json:
        print(json.dumps(tr.to_dict(), default=float))
    elif not args.out:
        sys.stdout.write(tr.to_csv())
    else:
        print(f"{name}: {tr.calls} calls, gap {tr.final_gap:.6g}")


def cmd_verify(args):
    rep = verify_spec(_spec(args), n_points=args.points, n_segments=args.segments, seed=args.seed)
    payload = json.loads(rep.to_json())
    _emit(args, payload, "\n".join(f"{k}: {v}" for k, v in payload.items()))


def cmd_fit(args):
    with open(args.pairs) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    pairs = []
    for r in rows:
        try:
            pairs.append((float(r[0]), float(r[1])))
        except (ValueError, IndexError):
            continue  # header line
    f = fit_exponent(pairs)
    _emit(args, f.to_dict(), f"slope {f.slope:.6g}  intercept {f.intercept:.6g}  r2 {f.r_squared:.6g}  n {f.n_points}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oclab", description="Hard instances and oracle-complexity experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in [("build", cmd_build), ("minimize", cmd_minimize), ("lowerbound", cmd_lowerbound),
                     ("game", cmd_game), ("run", cmd_run), ("verify", cmd_verify), ("fit", cmd_fit)]:
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--json", action="store_true")
        p.add_argument("--out")
        if name != "fit":
            _add_instance_flags(p)
        if name in ("game", "run"):
            p.add_argument("--optimizer", choices=sorted(set(OPTIMIZERS) | set(BUILTIN_ALGORITHMS)))
        if name == "run":
            p.add_argument("--eps", type=float, default=1e-8)
            p.add_argument("--budget", type=int, default=10_000)
            p.add_argument("--config", help="ExperimentConfig JSON; runs the full sweep")
        if name == "verify":
            p.add_argument("--points", type=int, default=100)
            p.add_argument("--segments", type=int, default=1000)
        if name == "fit":
            p.add_argument("pairs", help="CSV file with x,y columns")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except OclabError as e:
        print(f"oclab: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

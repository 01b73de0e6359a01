"""Experiment configuration, sweeps, exponent fits and artifact emission.

An experiment is a grid over builder parameters. Each grid cell builds its
instance, runs the requested optimizers (or games, or only the closed-form
gap), and writes one CSV per run. ``summary.json`` collects per-cell results
and the fits; ``manifest.json`` records the seed, the config hash and a
digest of every file written.

Experiment kinds:

``lowerbound``  certified gap per cell, fitted against T
``optimize``    one instance per cell, calls to each eps, fitted against 1/eps
``rate``        per-T instance with eps_T its certified gap, calls vs 1/eps_T
``condition``   hybrid phase-1 calls fitted against mu1/lam
``game``        resisting games for built-in algorithms, checked against the gap
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .adversary import BUILTIN_ALGORITHMS, builtin_algorithm, gap_lower_bound, run_resisting_game
from .core import InvalidInput, OclabError
from .hard_instances import (
    Family,
    HardInstance,
    build_convex,
    build_korder,
    build_strongly_convex,
)
from .optimizers import OPTIMIZERS
from .adversary import chain_gap

KINDS = ("lowerbound", "optimize", "rate", "condition", "game")
GRID_KEYS = ("mu1", "mu2", "lam", "D", "k", "T")


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_exponent(pairs) -> FitResult:
    """Least squares line through (log x, log y)."""
    pts = [(float(x), float(y)) for x, y in pairs]
    if len(pts) < 3:
        raise InvalidInput("need at least 3 pairs")
    if any(not (x > 0 and y > 0) or not math.isfinite(x) or not math.isfinite(y) for x, y in pts):
        raise InvalidInput("pairs must be finite and positive")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    if np.ptp(lx) <= 1e-12 * max(1.0, float(np.max(np.abs(lx)))):
        raise InvalidInput("degenerate x range")
    res = stats.linregress(lx, ly)
    r2 = float(res.rvalue) ** 2 if np.ptp(ly) > 0 else 1.0
    return FitResult(float(res.slope), float(res.intercept), min(max(r2, 0.0), 1.0), len(pts))


@dataclass
class ExperimentConfig:
    """One sweep. Grid lists are crossed; unused keys for a family are ignored."""

    family: str
    kind: str = "optimize"
    optimizers: List[str] = field(default_factory=list)
    mu1: List[float] = field(default_factory=lambda: [1.0])
    mu2: List[float] = field(default_factory=lambda: [1.0])
    lam: List[float] = field(default_factory=lambda: [1.0])
    D: List[float] = field(default_factory=lambda: [1.0])
    k: List[int] = field(default_factory=lambda: [2])
    T: List[int] = field(default_factory=lambda: [8])
    eps: List[float] = field(default_factory=lambda: [1e-6])
    seed: int = 0
    budget: int = 10_000
    out_dir: str = "oclab_out"
    timings: bool = False  # elapsed_ms is zeroed unless set, so replays are byte-identical

    def __post_init__(self):
        self.family = Family(self.family).value
        if self.kind not in KINDS:
            raise InvalidInput(f"kind must be one of {KINDS}")
        for key in GRID_KEYS + ("eps",):
            vals = getattr(self, key)
            if isinstance(vals, (int, float)):
                vals = [vals]
                setattr(self, key, vals)
            if not len(vals):
                raise InvalidInput(f"grid {key!r} is empty")
            if any(not v > 0 for v in vals):
                raise InvalidInput(f"grid {key!r} must be positive")
        self.T = [int(t) for t in self.T]
        self.k = [int(k) for k in self.k]
        unknown = [o for o in self.optimizers if o not in OPTIMIZERS and o not in BUILTIN_ALGORITHMS]
        if unknown:
            raise InvalidInput(f"unknown optimizers {unknown}")
        if self.kind in ("optimize", "rate", "condition", "game") and not self.optimizers:
            raise InvalidInput(f"kind {self.kind!r} needs at least one optimizer")
        if self.budget < 1:
            raise InvalidInput("budget must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidInput(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def relevant_keys(self) -> tuple:
        fam = Family(self.family)
        if fam is Family.STRONGLY_CONVEX:
            return ("mu1", "mu2", "lam", "D", "T")
        if fam is Family.CONVEX:
            return ("mu1", "mu2", "D", "T")
        return ("k", "mu2", "D", "T")

    def cells(self) -> List[dict]:
        keys = self.relevant_keys()
        return [dict(zip(keys, vals)) for vals in itertools.product(*(getattr(self, k) for k in keys))]


def build_cell(family: str, cell: dict, seed: int = 0):
    """(spec the optimizers run on, spec with horizon T used for the certified gap)."""
    fam = Family(family)
    T = cell["T"]
    if fam is Family.STRONGLY_CONVEX:
        spec = build_strongly_convex(cell["mu1"], cell["mu2"], cell["lam"], cell["D"], T, seed)
        return spec, spec
    if fam is Family.CONVEX:
        base = build_convex(cell["mu1"], cell["mu2"], cell["D"], T, seed)
    else:
        base = build_korder(cell["k"], cell["mu2"], cell["D"], T, seed)
    return base.with_chain_length(2 * T), base


def _gap_params(family: str, cell: dict) -> dict:
    if Family(family) is Family.KORDER:
        return {"k": cell["k"], "muk": cell["mu2"], "D": cell["D"]}
    return dict(cell)


def cell_id(cell: dict) -> str:
    return "_".join(f"{k}={cell[k]:g}" for k in sorted(cell))


def _run_optimizer(name: str, problem, eps: float, budget: int):
    fn = OPTIMIZERS[name]
    return fn(problem, eps=eps, budget=budget)


class _Writer:
    def __init__(self, root: str):
        self.root = root
        self.files: Dict[str, str] = {}
        os.makedirs(os.path.join(root, "traces"), exist_ok=True)

    def write(self, rel: str, text: str) -> str:
        path = os.path.join(self.root, rel)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        self.files[rel] = hashlib.sha256(text.encode()).hexdigest()
        return rel


def _group(cells: Sequence[dict], drop: str) -> Dict[str, List[dict]]:
    groups: Dict[str, List[dict]] = {}
    for c in cells:
        key = cell_id({k: v for k, v in c["params"].items() if k != drop}) or "all"
        groups.setdefault(key, []).append(c)
    return groups


def _fit_or_error(pairs) -> dict:
    try:
        return fit_exponent(pairs).to_dict()
    except InvalidInput as e:
        return {"error": str(e), "n_points": len(pairs)}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every grid cell, write the artifacts and return the summary."""
    cells = config.cells()
    if not cells:
        raise InvalidInput("empty grid")
    out = _Writer(config.out_dir)
    results = []
    for cell in cells:
        cid = cell_id(cell)
        entry = {"cell": cid, "params": cell}
        try:
            entry.update(_run_cell(config, cell, cid, out))
        except (OclabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            entry["error"] = {"type": type(e).__name__, "message": str(e)}
        results.append(entry)
    fits = _fits(config, results)
    summary = {
        "config_hash": config.config_hash(),
        "family": config.family,
        "kind": config.kind,
        "cells": results,
        "fits": fits,
    }
    out.write("summary.json", json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    manifest = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "files": dict(sorted(out.files.items())),
    }
    with open(os.path.join(config.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return summary


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _run_cell(config: ExperimentConfig, cell: dict, cid: str, out: _Writer) -> dict:
    fam = config.family
    if config.kind == "lowerbound":
        b = gap_lower_bound(fam, _gap_params(fam, cell), cell["T"])
        return {"gap": b.computed, "floor": b.floor, "certified": bool(b.computed >= b.floor),
                "details": b.details}

    spec, spec_T = build_cell(fam, cell, config.seed)
    res: dict = {}
    if config.kind == "game":
        bound = gap_lower_bound(fam, _gap_params(fam, cell) if Family(fam) is not Family.STRONGLY_CONVEX
                                else {"spec": spec}, cell["T"])
        res["gap_lower_bound"] = bound.computed
        for name in config.optimizers:
            g = run_resisting_game(builtin_algorithm(name, spec), spec=spec, T=cell["T"], seed=config.seed,
                                   algorithm_id=name, params=cell)
            rel = out.write(f"traces/{cid}__game-{name}.csv", g.trace.to_csv(timings=False))
            res[name] = {"final_gap": g.gaps[-1], "sound": bool(min(g.gaps) >= bound.computed * (1 - 1e-9)),
                         "trace": rel, "queries_sha256": g.to_dict()["queries_sha256"]}
        return res

    problem = HardInstance(spec)
    res["f_star"] = problem.f_star
    if config.kind == "rate":
        eps_T = chain_gap(spec_T) if Family(fam) is not Family.STRONGLY_CONVEX else None
        if eps_T is None:
            eps_T = gap_lower_bound(fam, {"spec": spec}, cell["T"]).computed
        res["eps"] = eps_T
        targets = [eps_T]
    else:
        targets = sorted(config.eps, reverse=True)
    for name in config.optimizers:
        if name not in OPTIMIZERS:
            raise InvalidInput(f"{name!r} is a game algorithm, not an optimizer")
        tr = _run_optimizer(name, problem, min(targets), config.budget)
        rel = out.write(f"traces/{cid}__{name}.csv", tr.to_csv(timings=config.timings))
        row = {"trace": rel, "calls": tr.calls, "final_gap": tr.final_gap,
               "calls_to": {f"{e:g}": tr.calls_to(e) for e in targets}}
        if "switch" in tr.marks:
            row["phase1_calls"] = tr.marks["switch"][0]
        if "epochs" in tr.params:
            row["epochs"] = tr.params["epochs"]
        res[name] = row
    return res


def _fits(config: ExperimentConfig, results: List[dict]) -> dict:
    ok = [r for r in results if "error" not in r]
    fits: dict = {}
    if config.kind == "lowerbound":
        for key, grp in _group(ok, "T").items():
            fits[key] = _fit_or_error([(r["params"]["T"], r["gap"]) for r in grp if r["gap"] > 0])
    elif config.kind == "optimize":
        for r in ok:
            for name in config.optimizers:
                pairs = [(1 / float(e), c) for e, c in r[name]["calls_to"].items() if c]
                fits[f"{r['cell']}__{name}"] = _fit_or_error(pairs)
    elif config.kind == "rate":
        for key, grp in _group(ok, "T").items():
            for name in config.optimizers:
                pairs = [(1 / r["eps"], r[name]["calls_to"][f"{r['eps']:g}"]) for r in grp]
                fits[f"{key}__{name}"] = _fit_or_error([p for p in pairs if p[1]])
    elif config.kind == "condition":
        for key, grp in _group(ok, "mu1").items():
            for name in config.optimizers:
                pairs = []
                for r in grp:
                    calls = r[name].get("phase1_calls")
                    if calls is None:
                        calls = r[name]["calls_to"][f"{min(config.eps):g}"]
                    if calls:
                        pairs.append((r["params"]["mu1"] / r["params"].get("lam", 1.0), calls))
                fits[f"{key}__{name}"] = _fit_or_error(pairs)
    return fits

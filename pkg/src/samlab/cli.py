"""Command-line experiment runner.

Every command reads a JSON config, writes CSVs (each row carrying the
config hash) and a ``level,value`` series into ``--out``, and records a
``run_manifest.json`` from which ``samlab rerun`` reproduces the run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bundle
from .affine import (DiagonalIFS, UndecidableError, ValidationError, irrationality_condition, lyapunov,
                     validate)
from .dynamics import Suspension, equidistribution_trace, ergodicity_diagnostic, write_diagnostic_csv
from .estimators import (PRINCIPAL, VerifyConfig, default_resolution, entropy_dimension, exact_dimension,
                         local_entropy_averages, product_structure_test, uniform_projection_entropy,
                         verify_main_theorem, write_verdict_csv)
from .measures import CylinderMeasure, SampleMeasure, max_sample_level, project_axis, project_theta, sample
from .slices import dimension_conservation_check, slice as slice_measure
from .symbolic import BernoulliSeq, DomainError, as_fraction

EXIT_OK, EXIT_VALIDATION, EXIT_EXPERIMENT = 0, 2, 3
MANIFEST = "run_manifest.json"


class ConfigError(ValueError):
    """Malformed config; reported with exit code 2."""


# ---------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def config_hash(command: str, cfg: dict, seed: int) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": seed}, sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_ifs(cfg: dict, base_dir: Path | None = None) -> DiagonalIFS:
    spec = cfg.get("ifs")
    if spec is None:
        raise ConfigError("config needs an 'ifs' entry")
    if isinstance(spec, str):
        try:
            return bundle.get(spec)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    if not isinstance(spec, dict):
        raise ConfigError("'ifs' must be a bundle name or an object")
    if "file" in spec:
        p = Path(spec["file"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return DiagonalIFS.from_dict(load_config(p), name=p.stem)
    try:
        return DiagonalIFS.from_dict(spec)
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad ifs entry: {exc}") from None


def parse_theta(v):
    """'x'/'y' are the principal targets; anything else must be a finite rational."""
    if isinstance(v, str) and v in PRINCIPAL:
        return v
    try:
        th = as_fraction(v)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ConfigError(f"bad theta {v!r}: use a number, 'p/q', 'x' or 'y'") from None
    return int(th) if th.denominator == 1 else float(th)


def _block(cfg: dict, name: str) -> dict:
    b = cfg.get(name, {})
    if not isinstance(b, dict):
        raise ConfigError(f"'{name}' block must be an object")
    return b


# ---------------------------------------------------------------------------
# output helpers


class Run:
    def __init__(self, out: Path, chash: str):
        self.out = out
        self.chash = chash
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(list(header) + ["config_hash"])
            for r in rows:
                wr.writerow([_fmt(v) for v in r] + [self.chash])

    def series(self, name: str, pairs) -> None:
        with open(self.path(name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["level", "value"])
            for lv, v in pairs:
                wr.writerow([_fmt(lv), _fmt(v)])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_validate(ifs, cfg, seed, run, threads):
    rep = validate(ifs)
    bbox = rep.bbox or (None,) * 4
    run.csv("validate.csv", ("valid", "bad_index", "x0", "x1", "y0", "y1", "inside_unit_square", "errors"),
            [(rep.valid, "" if rep.bad_index is None else rep.bad_index, *bbox,
              rep.inside_unit_square, "; ".join(rep.errors))])
    print(f"valid={rep.valid}" + (f" errors: {'; '.join(rep.errors)}" if rep.errors else f" bbox={bbox}"))
    return EXIT_OK if rep.valid else EXIT_VALIDATION


def cmd_lyapunov(ifs, cfg, seed, run, threads):
    ly = lyapunov(ifs)
    run.csv("lyapunov.csv", ("lambda1_mu", "lambda2_mu", "regime"),
            [(ly.lambda1_mu, ly.lambda2_mu, ly.regime.value)])
    print(f"lambda1={ly.lambda1_mu:.6f} lambda2={ly.lambda2_mu:.6f} regime={ly.regime.value}")
    return EXIT_OK


def cmd_irrationality(ifs, cfg, seed, run, threads):
    res = irrationality_condition(ifs)
    w = "" if res.witness is None else " ".join(str(v) for v in res.witness)
    run.csv("irrationality.csv", ("status", "witness_s_t_i_j"), [(res.status, w)])
    print(res.status + (f" witness (s,t,i,j)=({w})" if w else ""))
    return EXIT_OK


def cmd_dim(ifs, cfg, seed, run, threads):
    b = _block(cfg, "dim")
    target = str(b.get("target", "mu"))
    samples = int(b.get("samples", 1 << 20))
    method = b.get("method", "exact")
    n_min = int(b.get("n_min", 4))
    if target == "mu" and method == "exact":
        res = int(b.get("resolution", default_resolution(ifs)))
        est = exact_dimension(ifs, res, int(b.get("window", res - n_min)))
    elif target in PRINCIPAL and method == "exact":
        res = int(b.get("resolution", default_resolution(ifs)))
        fn = (1.0, 0.0) if target == "x" else (0.0, 1.0)
        est = entropy_dimension(CylinderMeasure(ifs, res, functional=fn), max(0, res - int(b.get("window", 6))), res)
    else:
        n_max = int(b.get("n_max", max_sample_level(samples)))
        if target == "slice":
            base = BernoulliSeq(ifs.probs, (seed, 1))
            sl = slice_measure(ifs, base, int(b.get("L", 12)), samples=samples, seed=(seed, 2),
                               axis=b.get("axis", "x"))
            m = SampleMeasure(sl.raw)
        else:
            pool = sample(ifs, samples, seed)
            if target == "mu":
                m = pool
            elif target in PRINCIPAL:
                m = project_axis(pool, target)
            elif target.startswith("proj:"):
                th = parse_theta(target[5:])
                if th in PRINCIPAL:
                    raise ConfigError("principal projections are the targets 'x' and 'y', not proj:θ")
                m = project_theta(pool, th)
            else:
                raise ConfigError(f"unknown dim target {target!r}")
        est = entropy_dimension(m, n_min, n_max)
    run.csv("dim.csv", ("target", "slope", "stderr", "n_min", "n_max", "method"),
            [(target, est.slope, est.stderr, est.levels[0], est.levels[-1], method)])
    run.series("dim_series.csv", est.series())
    print(f"dim[{target}] = {est.slope:.4f} ± {est.stderr:.4f} over levels {est.levels[0]}..{est.levels[-1]}")
    return EXIT_OK


def cmd_verify(ifs, cfg, seed, run, threads):
    b = _block(cfg, "verify")
    thetas = [parse_theta(t) for t in b.get("thetas", [-2, -1, 0, 1, 2])]
    vc = VerifyConfig(samples=int(b.get("samples", 1 << 20)), n_min=int(b.get("n_min", 4)),
                      resolution=b.get("resolution") and int(b["resolution"]), window=int(b.get("window", 6)),
                      tolerance=float(b.get("tolerance", 0.1)), lea=bool(b.get("lea", False)),
                      lea_N=int(b.get("lea_N", 8)), lea_n=int(b.get("lea_n", 12)),
                      lea_trials=int(b.get("lea_trials", 4)), seed=seed, workers=threads)
    rows = verify_main_theorem(ifs, thetas, vc)
    write_verdict_csv(run.path("verdicts.csv"), rows, run.chash)
    run.series("verify_series.csv", [(i, r.dim_proj) for i, r in enumerate(rows)])
    for r in rows:
        print(f"theta={r.theta}: dim_proj={r.dim_proj:.4f} min1={r.min1:.4f} defect={r.defect:.4f} {r.verdict}")
    return EXIT_OK


def cmd_lea(ifs, cfg, seed, run, threads):
    b = _block(cfg, "lea")
    thetas = [parse_theta(t) for t in b.get("thetas", [0])]
    reps = local_entropy_averages(ifs, thetas, int(b.get("N", 8)), int(b.get("n", 12)),
                                  int(b.get("trials", 4)), seed, b.get("samples"),
                                  bool(b.get("translate", True)), workers=threads)
    rows = []
    for th in thetas:
        r = reps[th]
        for t, comp in enumerate(r.components):
            for k, v in enumerate(comp, start=1):
                rows.append((th, t, k, r.regimes[t][k - 1], v))
    run.csv("lea_components.csv", ("theta", "trial", "k", "regime", "component"), rows)
    run.csv("lea.csv", ("theta", "N", "n", "average", "irrationality"),
            [(th, reps[th].N, reps[th].n, reps[th].average, reps[th].irrationality) for th in thetas])
    first = reps[thetas[0]]
    run.series("lea_series.csv", [(k, v) for k, v in enumerate(first.components.mean(axis=0), start=1)])
    for th in thetas:
        print(f"theta={th}: LEA average {reps[th].average:.4f}")
    return EXIT_OK


def cmd_product(ifs, cfg, seed, run, threads):
    b = _block(cfg, "product")
    rep = product_structure_test(ifs, int(b.get("N", 4)), tuple(int(v) for v in b.get("n_list", (4, 10))),
                                 int(b.get("trials", 8)), seed, int(b.get("samples", 4096)),
                                 int(b.get("L", 14)), float(b.get("eccentricity_cut", 5.0)),
                                 bool(b.get("translate", True)), bool(b.get("noise", True)))
    run.csv("product.csv", ("trial", "n", "level", "regime", "clipped", "case_c", "w1", "noise"),
            [(r.trial, r.n, r.level, r.regime, r.clipped, r.case_c, r.w1, r.noise) for r in rep.rows])
    run.series("product_series.csv", sorted(rep.medians.items()))
    for n, v in sorted(rep.medians.items()):
        print(f"n={n}: median W1 {v:.4f} (noise {rep.noise_medians[n]:.4f})")
    print(f"case-c frequency {rep.case_c_frequency:.3f}")
    return EXIT_OK


def cmd_equidist(ifs, cfg, seed, run, threads):
    b = _block(cfg, "equidist")
    N, depth, m = int(b.get("N", 1)), int(b.get("depth", 3)), int(b.get("m", 100000))
    tr = equidistribution_trace(BernoulliSeq(ifs.probs, seed), N, depth, m, ifs)
    run.csv("equidist.csv", ("N", "depth", "visits", "tv_gap", "tv_to_bernoulli", "missing"),
            [(N, depth, tr.visits, tr.tv_gap, tr.tv_to_bernoulli, len(tr.missing))])
    run.series("equidist_series.csv", list(enumerate(tr.freq)))
    print(f"TV gap {tr.tv_gap:.4f}, TV to Bernoulli {tr.tv_to_bernoulli:.4f}, missing {len(tr.missing)}")
    return EXIT_OK


def cmd_uniformproj(ifs, cfg, seed, run, threads):
    b = _block(cfg, "uniformproj")
    N = int(b.get("N", 10))
    rep = uniform_projection_entropy(ifs, b.get("theta_grid"), N, int(b.get("bases", 4)), seed,
                                     b.get("samples"), int(b.get("L", 14)), float(b.get("M", 2.0)))
    run.csv("uniformproj.csv", ("minimum", "argmin_theta", "max_jump", "orientation"),
            [(rep.minimum, rep.argmin_theta, rep.max_jump, rep.orientation)])
    run.series("uniformproj_series.csv", zip(rep.thetas, rep.values.min(axis=0)))
    print(f"min (1/N)H_N = {rep.minimum:.4f} at theta={rep.argmin_theta}, max jump {rep.max_jump:.3f}")
    return EXIT_OK


def cmd_conservation(ifs, cfg, seed, run, threads):
    b = _block(cfg, "conservation")
    rep = dimension_conservation_check(ifs, int(b.get("trials", 8)), int(b.get("L", 12)), int(b.get("n", 10)),
                                       int(b.get("samples", 1 << 16)), seed, b.get("axis", "x"))
    rep.write_csv(run.path("conservation.csv"), run.chash)
    run.series("conservation_series.csv", [(r[0], r[3]) for r in rep.rows])
    print(f"dim={rep.dim2d:.4f} dim_x={rep.dimx:.4f} slice={rep.dimslice:.4f} defect={rep.defect:.4f}")
    return EXIT_OK


def cmd_ergodicity(ifs, cfg, seed, run, threads):
    b = _block(cfg, "ergodicity")
    susp = Suspension(ifs, b.get("roof", "NEG_LOG_LAMBDA2"))
    betas = b.get("betas", [b.get("beta", 1)])
    reps = [ergodicity_diagnostic(susp, beta, int(b.get("trials", 16)), int(b.get("horizon", 100000)),
                                  (seed, i), int(b.get("depth", 3))) for i, beta in enumerate(betas)]
    write_diagnostic_csv(run.path("ergodicity.csv"), reps, run.chash)
    run.series("ergodicity_series.csv", [(r.beta, r.spread) for r in reps])
    for r in reps:
        print(f"beta={r.beta}: spread {r.spread:.4f} rational_lock={r.rational_lock}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "lyapunov": cmd_lyapunov,
    "irrationality": cmd_irrationality,
    "dim": cmd_dim,
    "verify": cmd_verify,
    "lea": cmd_lea,
    "product": cmd_product,
    "equidist": cmd_equidist,
    "uniformproj": cmd_uniformproj,
    "conservation": cmd_conservation,
    "ergodicity": cmd_ergodicity,
}


def cmd_bundle_list() -> list[str]:
    for name in bundle.names():
        print(f"{name:10s} {bundle.DESCRIPTIONS[name]}")
    return bundle.names()


# ---------------------------------------------------------------------------
# driver


def execute(command: str, cfg: dict, seed: int, out: Path, threads: int = 1,
            base_dir: Path | None = None) -> tuple[int, dict]:
    """Run one command and write its manifest; returns (exit code, manifest)."""
    start = time.perf_counter()
    chash = config_hash(command, cfg, seed)
    ifs = resolve_ifs(cfg, base_dir)
    if command != "validate":
        ifs.require_valid()
    run = Run(out, chash)
    code = COMMANDS[command](ifs, cfg, seed, run, threads)
    manifest = {
        "tool": "samlab",
        "version": __version__,
        "command": command,
        "config": cfg,
        "config_hash": chash,
        "seed": seed,
        "threads": threads,
        "outputs": {name: _sha256(out / name) for name in run.files},
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code, manifest


def rerun(manifest_path, out: Path, threads: int | None = None) -> bool:
    """Re-execute a manifest into ``out``; True when every CSV is byte-identical."""
    old = json.loads(Path(manifest_path).read_text())
    _, new = execute(old["command"], old["config"], old["seed"], out,
                     old.get("threads", 1) if threads is None else threads,
                     Path(manifest_path).resolve().parent)
    same = True
    for name, digest in old["outputs"].items():
        ok = new["outputs"].get(name) == digest
        same &= ok
        print(f"{name}: {'identical' if ok else 'DIFFERS'}")
    return same


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samlab", description="Projection experiments for diagonal self-affine measures.")
    ap.add_argument("--version", action="version", version=f"samlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", required=True, type=int, help="master seed (mandatory)")
        p.add_argument("--threads", type=int, default=1)
    sub.add_parser("bundle-list", help="list the bundled oracle systems")
    p = sub.add_parser("rerun", help="re-execute a run manifest and compare outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bundle-list":
            cmd_bundle_list()
            return EXIT_OK
        if args.command == "rerun":
            return EXIT_OK if rerun(args.manifest, Path(args.out), args.threads) else EXIT_EXPERIMENT
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        code, _ = execute(args.command, cfg, args.seed, Path(args.out), args.threads,
                          Path(args.config).resolve().parent)
        return code
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DomainError, UndecidableError, ArithmeticError, MemoryError) as exc:
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())

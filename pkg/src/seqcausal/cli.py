"""Command-line front end.

Every subcommand writes a JSON report carrying a run manifest (command,
input digests, seed, package version, timing).  Exit codes are 0 on
success, 2 for invalid input, 3 when estimation fails and 4 when an
identity check fails.  Set ``SEQCAUSAL_LOG`` to a logging level name
(``DEBUG``, ``INFO`` ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, errors
from .gformula import Regime, evaluate_gformula, q_coefficients, sce_from_net_effects
from .netfx import PatternSpec, estimate_pattern, fitted_residual_test
from .panel import PanelSchema, load_panel
from .pointparam import StandardMeans
from .simgen import SimConfig, confidence_interval, run_replicates
from .validation import ValidateConfig, run_identity_suite

log = logging.getLogger("seqcausal")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3
EXIT_IDENTITY = 4


class IdentityFailure(Exception):
    """Raised after the report is written when an identity check fails."""


# --------------------------------------------------------------------------
# IO helpers


def _clean(obj):
    """Convert numpy values and non-finite floats into JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    """Deterministic JSON; floats use the shortest exact round-trip form."""
    return json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise errors.ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"{path}: invalid JSON ({exc})") from None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, argv: Sequence[str]):
        self.command = command
        self.argv = list(argv)
        self.inputs: dict = {}
        self.digests: dict = {}
        self.seed = None
        self._start = time.time()
        self._clock = time.perf_counter()

    def add_input(self, role: str, path: Optional[str]):
        if path is None:
            return
        if not os.path.exists(path):
            raise errors.ConfigError(f"file not found: {path}")
        self.inputs[role] = {"path": str(path), "sha256": _sha256(path)}

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "config_digests": self.digests,
            "seed": self.seed,
            "version": __version__,
            "timing": {
                "started_unix": self._start,
                "elapsed_seconds": time.perf_counter() - self._clock,
            },
        }


def _emit(report: dict, out: Optional[str]) -> None:
    text = dumps(report)
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text, encoding="utf-8")
    log.info("wrote %s", out)


def _companion(out: Optional[str], suffix: str) -> Optional[Path]:
    if out is None:
        return None
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p.with_name(p.stem + suffix)


def _load_panel(args, manifest):
    manifest.add_input("panel", args.panel)
    schema = None
    if getattr(args, "schema", None):
        manifest.add_input("schema", args.schema)
        schema = PanelSchema.from_dict(_read_json(args.schema))
    return load_panel(args.panel, schema)


def _load_pattern(args, manifest) -> PatternSpec:
    manifest.add_input("pattern", args.pattern)
    return PatternSpec.from_dict(_read_json(args.pattern))


def _load_regime(path: str, role: str, manifest) -> Regime:
    manifest.add_input(role, path)
    return Regime.from_dict(_read_json(path))


def _fit(args, panel, pattern):
    mode = args.mode or pattern.mode
    sigma2 = args.sigma2
    if sigma2 is not None and not (sigma2 > 0 and math.isfinite(sigma2)):
        raise errors.ValidationError("--sigma2 must be positive")
    return estimate_pattern(panel, pattern, mode, sigma2), mode


# --------------------------------------------------------------------------
# subcommands


def cmd_estimate(args, manifest) -> int:
    panel = _load_panel(args, manifest)
    pattern = _load_pattern(args, manifest)
    fit, mode = _fit(args, panel, pattern)
    est = fit.estimate
    try:
        gof = fitted_residual_test(est)
        gof_d = {"rss": gof.rss, "dof": gof.dof, "p_value": gof.p_value}
    except errors.ZeroDof:
        gof_d = {"rss": est.rss, "dof": est.dof, "p_value": None, "note": "saturated pattern"}
    rows = []
    for th, row in zip(fit.theta, fit.rows):
        rows.append({
            "stratum": str(th.stratum),
            "class": fit.assignment.class_of(th.stratum),
            "theta": th.value,
            "variance": th.variance,
            "n_active": th.n_active,
            "n_control": th.n_control,
            "c": row.c,
        })
    report = {
        "manifest": manifest.to_dict(),
        "mode": mode,
        "sigma2": fit.sigma2,
        "sigma2_source": "declared" if args.sigma2 is not None else "pooled within-cell",
        "n_units": panel.n_units,
        "K": est.K,
        "theta": rows,
        "phi": est.phi,
        "covariance": est.covariance,
        "std_errors": est.std_errors,
        "fit": gof_d,
        "residuals": est.residual_report(),
        "excluded_strata": [str(k) for k in fit.excluded],
        "dropped_rows": [str(k) for k in est.dropped],
    }
    csv_path = _companion(args.out, ".theta.csv")
    if csv_path is not None:
        lines = ["stratum,class,theta,variance,n_active,n_control," + ",".join(f"c{k + 1}" for k in range(est.K))]
        for r in rows:
            lines.append(",".join(
                [f'"{r["stratum"]}"', str(r["class"]), repr(float(r["theta"])), repr(float(r["variance"])),
                 str(r["n_active"]), str(r["n_control"])] + [repr(float(v)) for v in r["c"]]
            ))
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit(report, args.out)
    return EXIT_OK


def cmd_sce(args, manifest) -> int:
    panel = _load_panel(args, manifest)
    pattern = _load_pattern(args, manifest)
    a = _load_regime(args.regime_a, "regime_a", manifest)
    b = _load_regime(args.regime_b, "regime_b", manifest)
    fit, mode = _fit(args, panel, pattern)
    q_a = q_coefficients(panel, fit.assignment, a)
    q_b = q_coefficients(panel, fit.assignment, b)
    sce = sce_from_net_effects(fit.estimate, q_a, q_b)
    lo, hi = confidence_interval(sce.value, sce.variance, args.ci_level)
    means = StandardMeans.from_panel(panel)
    try:
        direct = evaluate_gformula(means, panel, a) - evaluate_gformula(means, panel, b)
        cross = {"value": direct, "difference": direct - sce.value}
    except errors.SeqCausalError as exc:
        cross = {"value": None, "reason": f"{type(exc).__name__}: {exc}"}
    report = {
        "manifest": manifest.to_dict(),
        "mode": mode,
        "regime_a": a.to_dict(),
        "regime_b": b.to_dict(),
        "q_a": q_a,
        "q_b": q_b,
        "phi": fit.estimate.phi,
        "sce": sce.value,
        "variance": sce.variance,
        "std_error": sce.std_error,
        "ci_level": args.ci_level,
        "ci": [lo, hi],
        "gformula_saturated": cross,
    }
    _emit(report, args.out)
    return EXIT_OK


def _sim_config(args, manifest, parser=SimConfig.from_dict):
    manifest.add_input("config", args.config)
    raw = _read_json(args.config)
    if args.seed_override is not None:
        raw = dict(raw, base_seed=args.seed_override)
    cfg = parser(raw)
    sim = cfg if isinstance(cfg, SimConfig) else cfg.sim
    manifest.seed = sim.base_seed
    manifest.digests["sim_config"] = sim.digest()
    return cfg


def cmd_simulate(args, manifest) -> int:
    cfg = _sim_config(args, manifest)
    if args.jobs < 1:
        raise errors.ConfigError("--jobs must be >= 1")
    report = run_replicates(cfg, jobs=args.jobs, keep_records=args.records)
    out = {"manifest": manifest.to_dict(), "config": cfg.to_dict(), "report": report.to_dict()}
    csv_path = _companion(args.out, ".csv")
    if csv_path is not None:
        csv_path.write_text(report.to_csv(), encoding="utf-8")
        if args.records:
            _companion(args.out, ".records.csv").write_text(report.records_csv(), encoding="utf-8")
    _emit(out, args.out)
    return EXIT_OK


def cmd_validate(args, manifest) -> int:
    cfg = _sim_config(args, manifest, ValidateConfig.from_dict)
    results = run_identity_suite(cfg.sim, cfg.perturb)
    passed = all(r.passed for r in results)
    report = {
        "manifest": manifest.to_dict(),
        "passed": passed,
        "perturbations": [{"stratum": p.stratum, "delta": p.delta} for p in cfg.perturb],
        "scenarios": [r.to_dict() for r in results],
    }
    _emit(report, args.out)
    if not passed:
        worst = max(
            (c for r in results for c in r.reports if not c.passed), key=lambda c: c.max_violation
        )
        raise IdentityFailure(
            f"identity check {worst.name} failed: max violation {worst.max_violation:.3g} "
            f"at {worst.worst} (tol {worst.tol:g})"
        )
    return EXIT_OK


def cmd_gformula(args, manifest) -> int:
    panel = _load_panel(args, manifest)
    regime = _load_regime(args.regime_a, "regime_a", manifest)
    if args.means:
        manifest.add_input("means", args.means)
        means = StandardMeans.from_dict(_read_json(args.means))
        source = "table"
    else:
        means = StandardMeans.from_panel(panel)
        source = "panel cell means"
    value = evaluate_gformula(means, panel, regime)
    report = {
        "manifest": manifest.to_dict(),
        "regime": regime.to_dict(),
        "means_source": source,
        "value": value,
    }
    if args.regime_b:
        b = _load_regime(args.regime_b, "regime_b", manifest)
        vb = evaluate_gformula(means, panel, b)
        report.update({"regime_b": b.to_dict(), "value_b": vb, "sce": value - vb})
    _emit(report, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqcausal", description="Sequential causal effects via point parameters.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common_fit(sp):
        sp.add_argument("--panel", required=True, help="panel CSV")
        sp.add_argument("--schema", help="optional panel schema JSON")
        sp.add_argument("--pattern", required=True, help="pattern JSON")
        sp.add_argument("--mode", choices=["full", "markov"], help="point-effect strata (default: pattern mode)")
        sp.add_argument("--sigma2", type=float, help="declared outcome variance (default: pooled estimate)")
        sp.add_argument("--out", help="report path (default: stdout)")

    sp = sub.add_parser("estimate", help="estimate net effects from a panel")
    common_fit(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sce", help="sequential causal effect of two regimes")
    common_fit(sp)
    sp.add_argument("--regime-a", required=True)
    sp.add_argument("--regime-b", required=True)
    sp.add_argument("--ci-level", type=float, default=0.95)
    sp.set_defaults(func=cmd_sce)

    sp = sub.add_parser("simulate", help="Monte-Carlo coverage study")
    sp.add_argument("--config", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed-override", type=int)
    sp.add_argument("--records", action="store_true", help="also write per-replicate records")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="run the brute-force identity suite")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed-override", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("gformula", help="evaluate a regime against a means table")
    sp.add_argument("--panel", required=True, help="panel CSV supplying the proportions")
    sp.add_argument("--schema")
    sp.add_argument("--means", help="means JSON (default: panel cell means)")
    sp.add_argument("--regime-a", required=True)
    sp.add_argument("--regime-b")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gformula)
    return p


def _configure_logging():
    level = os.environ.get("SEQCAUSAL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = Manifest(args.command, argv)
    try:
        return args.func(args, manifest)
    except IdentityFailure as exc:
        print(f"seqcausal: {exc}", file=sys.stderr)
        return EXIT_IDENTITY
    except errors.ValidationError as exc:
        print(f"seqcausal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except errors.EstimationError as exc:
        print(f"seqcausal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())

"""Identity suite: synthesize a patterned design and cross-check every module.

Each check compares an optimized code path against :mod:`seqcausal.oracle`
or against an algebraic identity, and yields an
:class:`~seqcausal.oracle.IdentityReport`.  The suite backs ``seqcausal
validate``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import errors, oracle
from .gformula import Regime, evaluate_gformula, q_coefficients, sce_from_gformula
from .keys import parse_key
from .netfx import (
    assign_classes,
    coefficient_rows,
    constraint_coefficients,
    estimate_pattern,
    markov_constraint_coefficients,
)
from .panel import treatment_strata
from .pointparam import (
    PointParams,
    extract_point_params,
    markov_point_effect,
    reconstruct_standard_means,
)
from .simgen import SimConfig, generate_outcomes, synthesize_design, synthesize_point_params

__all__ = ["Perturbation", "ValidateConfig", "SuiteResult", "default_dynamic_regimes", "run_identity_suite"]

IDENTITY_TOL = 1e-10
RESUM_TOL = 1e-12


@dataclass(frozen=True)
class Perturbation:
    """Shift of one treatment point effect before the means are built."""

    stratum: str
    delta: float


@dataclass(frozen=True)
class ValidateConfig:
    sim: SimConfig
    perturb: tuple = ()

    @classmethod
    def from_dict(cls, d: Mapping) -> "ValidateConfig":
        d = dict(d)
        raw = d.pop("perturb", [])
        perturb = []
        for p in raw:
            if set(p) != {"stratum", "delta"}:
                raise errors.ConfigError(f"perturbation needs 'stratum' and 'delta': {p!r}")
            try:
                parse_key(p["stratum"])
            except ValueError as exc:
                raise errors.ConfigError(str(exc)) from None
            perturb.append(Perturbation(p["stratum"], float(p["delta"])))
        return cls(SimConfig.from_dict(d), tuple(perturb))


@dataclass
class SuiteResult:
    scenario: list
    reports: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict:
        return {
            "phi": self.scenario,
            "passed": self.passed,
            "checks": [r.to_dict() for r in self.reports],
            "skipped": self.skipped,
        }


def default_dynamic_regimes(T: int) -> list[Regime]:
    """Three covariate-driven regimes used by the decomposition check."""
    def build(first, cases):
        decs = [{"t": 1, "z": first}]
        for t in range(2, T + 1):
            decs.append({"t": t, "cases": cases(t)})
        return Regime.from_dict({"kind": "dynamic", "decisions": decs})

    return [
        build(1, lambda t: [{"when": {f"x{t-1}_1": 0}, "z": 1}, {"z": 0}]),
        build(0, lambda t: [{"when": {f"x{t-1}_1": 0}, "z": 0}, {"z": 1}]),
        build(1, lambda t: [{"when": {f"z{t-1}": 1, f"x{t-1}_1": 1}, "z": 1}, {"z": 0}]),
    ]


def _apply_perturbations(params: PointParams, perturb: Sequence[Perturbation]) -> PointParams:
    if not perturb:
        return params
    theta = dict(params.theta)
    for p in perturb:
        key = parse_key(p.stratum)
        if key not in theta:
            raise errors.ConfigError(f"perturbed stratum {p.stratum} is not an active stratum")
        theta[key] += p.delta
    return PointParams(theta, dict(params.gamma), params.grand_mean)


def _pattern_net(assign, phi, strata) -> dict:
    return {k: float(phi[assign.class_of(k) - 1]) for k in strata}


def run_identity_suite(
    config: SimConfig,
    perturb: Sequence[Perturbation] = (),
    dynamic: Optional[Sequence[Regime]] = None,
) -> list[SuiteResult]:
    """Run every identity check on each scenario of ``config``."""
    skeleton, props = synthesize_design(config.design, seed=config.base_seed)
    T = props.T
    full_assign = assign_classes(config.pattern, props, "full")
    full_strata = treatment_strata(props, "full")
    full_rows = coefficient_rows(props, full_assign, full_strata)
    dynamic = list(dynamic) if dynamic is not None else default_dynamic_regimes(T)
    zlev = [sorted({c[2 * t] for c in props.cells}) for t in range(T)]
    statics = [Regime.static(z) for z in itertools.product(*zlev)]
    results = []

    for phi in config.phi:
        phi = np.asarray(phi, dtype=float)
        res = SuiteResult([float(v) for v in phi])
        params0 = synthesize_point_params(props, config.pattern, phi, config.gamma, config.grand_mean)
        params = _apply_perturbations(params0, perturb)
        means = reconstruct_standard_means(params, props)
        extracted = extract_point_params(means, props)

        # parametrization round trip
        diff = extracted.max_abs_diff(params)
        res.reports.append(oracle._report("round_trip", [("point parameters", diff)], IDENTITY_TOL))

        # brute-force counterfactuals vs the G-formula evaluator
        table = oracle.enumerate_counterfactual_means(means, props)
        diffs = []
        for reg in statics:
            if reg.z in table.static:
                diffs.append((str(reg), table.static[reg.z] - evaluate_gformula(means, props, reg)))
        res.reports.append(oracle._report("gformula_vs_oracle", diffs, RESUM_TOL))

        net = oracle.all_net_effects(table)
        res.reports.append(oracle.verify_net_effect_pattern(net, full_assign, phi, IDENTITY_TOL))
        res.reports.append(oracle.verify_constraint(extracted, phi, full_rows, IDENTITY_TOL))
        res.reports.append(oracle.verify_stratum_constraint(extracted, net, props, IDENTITY_TOL))
        pattern_net = _pattern_net(full_assign, phi, full_strata)
        res.reports.append(
            oracle.verify_mean_decomposition(means, pattern_net, props, IDENTITY_TOL, table=table)
        )
        res.reports.append(oracle.verify_regime_expansion(table, pattern_net, props, IDENTITY_TOL))

        # sce via net effects vs direct G-formula
        diffs = []
        regimes = statics + dynamic
        qs = {}
        for reg in regimes:
            try:
                qs[reg] = q_coefficients(props, full_assign, reg)
            except errors.SeqCausalError as exc:
                res.skipped.append(f"regime {reg}: {type(exc).__name__}")
        for a, b in itertools.product([r for r in regimes if r in qs], repeat=2):
            direct = sce_from_gformula(means, props, a, b)
            diffs.append((f"{a} vs {b}", direct - float(phi @ (qs[a] - qs[b]))))
        res.reports.append(oracle._report("sce_decomposition", diffs, IDENTITY_TOL))

        # terminal coincidences
        diffs = []
        for row in full_rows:
            if row.stratum.t == T:
                basis = np.zeros(full_assign.K)
                basis[full_assign.class_of(row.stratum) - 1] = 1.0
                diffs.append((row.stratum, float(np.max(np.abs(row.c - basis)))))
                diffs.append((row.stratum, net[row.stratum] - extracted.theta_at(row.stratum)))
        res.reports.append(oracle._report("terminal", diffs, 0.0))

        # estimation closure on a noiseless panel
        panel = generate_outcomes(skeleton, means, 0.0, 0)
        try:
            fit = estimate_pattern(panel, config.pattern, config.estimation_mode, sigma2=1.0)
            diffs = [(f"phi_{k + 1}", v - phi[k]) for k, v in enumerate(fit.estimate.phi)]
        except errors.SeqCausalError as exc:
            diffs = [(f"{type(exc).__name__}: {exc}", np.inf)]
        res.reports.append(oracle._report("closure", diffs, IDENTITY_TOL))

        # Markov collapse
        if config.design.is_markov():
            try:
                m_assign = assign_classes(config.pattern, props, "markov")
            except errors.PatternNotMarkov as exc:
                res.skipped.append(f"markov_collapse: {exc}")
            else:
                full_c = {r.stratum: r.c for r in full_rows}
                diffs = []
                for key in treatment_strata(props, "markov"):
                    if props.count(key.control) <= 0:
                        continue
                    last = None if key.t == 1 else (key.zp, key.xp)
                    th = markov_point_effect(panel, key.t, last, key.zt, 1.0).value
                    diffs.append((key, th - oracle.markov_weighted(extracted.theta, props, key)))
                    row = markov_constraint_coefficients(props, m_assign, key)
                    avg = oracle.markov_weighted(full_c, props, key)
                    diffs.append((key, float(np.max(np.abs(row.c - avg)))))
                res.reports.append(oracle._report("markov_collapse", diffs, RESUM_TOL))
        else:
            res.skipped.append("markov_collapse: design assigns treatments on full histories")
        results.append(res)
    return results

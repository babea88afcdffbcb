"""Acceptance criteria, each reported as one PASS/FAIL line.

Run on their own with ``pytest tests/test_acceptance.py -s``; the lines are
also repeated in the terminal summary of any pytest run.
"""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import acceptance
from seqcausal.cli import main
from seqcausal.netfx import CoeffRow, PatternSpec, estimate_net_effects
from seqcausal.pointparam import PointParams, ThetaEstimate, extract_point_params, reconstruct_standard_means
from seqcausal.simgen import GammaRule, random_design, reference_config, run_replicates, synthesize_design
from seqcausal.validation import run_identity_suite

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

EARLY_LATE = PatternSpec.from_dict({"K": 2, "rules": [{"match": {"t": 1}, "class": 1}, {"match": {}, "class": 2}]})
GAMMA = (GammaRule.make({"t": 1}, 0.75), GammaRule.make({"z": 1}, -1.25))


def identity_configs():
    """Reference design plus random Markov designs at T = 2 and T = 4."""
    out = [("reference T=3", reference_config(replicates=1))]
    for T, seed in ((2, 21), (4, 4)):
        design = random_design(T, np.random.default_rng(seed))
        cfg = dataclasses.replace(
            reference_config(replicates=1),
            design=design,
            pattern=PatternSpec.per_time(T, "markov"),
            phi=(tuple(np.linspace(-2.0, 3.0, T)),),
            gamma=GAMMA,
        )
        out.append((f"random T={T}", cfg))
    return out


@pytest.fixture(scope="module")
def suites():
    return [(name, cfg, run_identity_suite(cfg)) for name, cfg in identity_configs()]


def worst(suites, check):
    vals = []
    for _, _, results in suites:
        for res in results:
            vals += [r.max_violation for r in res.reports if r.name == check]
    return max(vals), len(vals)


def test_criterion_01_coverage(reference_report):
    cov = [s.coverage[0] for s in reference_report.scenarios]
    ok = all(0.934 <= c <= 0.964 for c in cov)
    phis = [s.phi[0] for s in reference_report.scenarios]
    detail = ", ".join(f"phi={p:g}: {c:.4f}" for p, c in zip(phis, cov))
    acceptance(1, ok, f"coverage in [0.934, 0.964] over 2000 replicates ({detail})")


def test_criterion_02_unbiased(reference_report):
    parts, ok = [], True
    for s in reference_report.scenarios:
        bias = abs(s.mean_phi_hat[0] - s.phi[0])
        bound = 3 * np.sqrt(s.empirical_variance[0] / s.replicates)
        ok &= bias <= bound
        parts.append(f"phi={s.phi[0]:g}: |bias|={bias:.2e} <= {bound:.2e}")
    acceptance(2, ok, "; ".join(parts))


def test_criterion_03_closure():
    errs = []
    for T in (2, 3, 4):
        design = random_design(T, np.random.default_rng(30 + T))
        for pattern, phi in ((PatternSpec.single_class(), (1.75,)), (EARLY_LATE, (2.5, -0.5))):
            for mode in ("full", "markov"):
                cfg = dataclasses.replace(
                    reference_config(replicates=1, sigma=0.0),
                    design=design, pattern=pattern, phi=(phi,), gamma=GAMMA, estimation_mode=mode,
                )
                s = run_replicates(cfg).scenarios[0]
                assert s.failures == 0
                errs.append(float(np.max(np.abs(np.asarray(s.mean_phi_hat) - phi))))
    err = max(errs)
    acceptance(3, err < 1e-10, f"noiseless phi_hat error {err:.1e} < 1e-10 over {len(errs)} fits (K=1, 2; T=2, 3, 4)")


def test_criterion_04_round_trip():
    rng = np.random.default_rng(404)
    designs = {}
    err = 0.0
    for trial in range(100):
        T = int(rng.integers(1, 5))
        key = (T, trial % 3)
        if key not in designs:
            designs[key] = synthesize_design(random_design(T, np.random.default_rng(1000 + trial), markov=bool(trial % 2)))[1]
        props = designs[key]
        blank = PointParams.zeros(props)
        params = PointParams(
            {k: float(rng.normal(0, 5)) for k in blank.theta},
            {k: float(rng.normal(0, 5)) for k in blank.gamma},
            float(rng.normal(0, 10)),
        )
        back = extract_point_params(reconstruct_standard_means(params, props), props)
        err = max(err, back.max_abs_diff(params))
    acceptance(4, err < 1e-10, f"extract(reconstruct(psi)) error {err:.1e} < 1e-10 over 100 random trials, T <= 4")


def test_criterion_05_decomposition(suites):
    sce_err, n_sce = worst(suites, "sce_decomposition")
    g_err, _ = worst(suites, "gformula_vs_oracle")
    ok = sce_err < 1e-10 and g_err < 1e-12
    acceptance(5, ok, f"sce decomposition error {sce_err:.1e} < 1e-10, oracle vs G-formula {g_err:.1e} < 1e-12 ({n_sce} scenarios)")


def test_criterion_06_markov_collapse(suites):
    err, n = worst(suites, "markov_collapse")
    acceptance(6, n == 5 and err <= 1e-12, f"Markov theta and c-rows vs weighted full-history values: {err:.1e} <= 1e-12 ({n} scenarios)")


def test_criterion_07_terminal(suites):
    err, n = worst(suites, "terminal")
    acceptance(7, err == 0.0, f"terminal basis rows and brute-force net effects: max error {err!r} ({n} scenarios)")


def test_criterion_08_gls_inverse_variance():
    rng = np.random.default_rng(808)
    err = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 12))
        theta = rng.normal(0, 3, n)
        var = rng.uniform(0.05, 4.0, n)
        c = rng.uniform(0.2, 2.5, n)
        rows = [
            (ThetaEstimate(float(theta[i]), float(var[i]), f"s{i}", 1, 1, 1.0), CoeffRow(f"s{i}", np.array([c[i]]), 1, 1))
            for i in range(n)
        ]
        est = estimate_net_effects(rows, theta_cov=np.diag(var))
        phi = np.sum(c * theta / var) / np.sum(c * c / var)
        v = 1.0 / np.sum(c * c / var)
        err = max(err, abs(est.phi[0] - phi), abs(est.covariance[0, 0] - v))
    acceptance(8, err < 1e-12, f"GLS vs inverse-variance average: {err:.1e} < 1e-12 on 50 fixtures")


def test_criterion_09_consistency():
    variances = []
    for n in (1232, 4928, 19712):
        report = run_replicates(reference_config(phi=(10.0,), replicates=500, n_units=n))
        variances.append(report.scenarios[0].empirical_variance[0])
    ratios = [variances[1] / variances[0], variances[2] / variances[1]]
    ok = all(abs(r - 0.25) <= 0.2 * 0.25 for r in ratios)
    detail = ", ".join(f"{r:.4f}" for r in ratios)
    acceptance(9, ok, f"var(phi_hat) ratio per quadrupling of N: {detail} (target 0.25 +/- 20%)")


def test_criterion_10_determinism(tmp_path, capsys):
    cfg = tmp_path / "reference.json"
    cfg.write_text((CONFIGS / "reference_simulation.json").read_text())
    reports = []
    for jobs in (1, 4):
        out = tmp_path / f"jobs{jobs}.json"
        assert main(["simulate", "--config", str(cfg), "--jobs", str(jobs), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        for k in ("timing", "argv"):
            rep["manifest"].pop(k)
        reports.append((rep, out.with_suffix(".csv").read_text()))
    capsys.readouterr()
    ok = reports[0] == reports[1]
    acceptance(10, ok, "simulate with --jobs 1 and --jobs 4 gives identical reports and CSV tables")

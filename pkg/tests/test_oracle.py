import dataclasses
import itertools

import numpy as np
import pytest

from seqcausal import errors, oracle
from seqcausal.gformula import Regime, evaluate_gformula
from seqcausal.keys import FullHistoryWithTreatment
from seqcausal.netfx import PatternSpec, assign_classes, coefficient_rows
from seqcausal.panel import Proportions, treatment_strata
from seqcausal.pointparam import StandardMeans, extract_point_params
from seqcausal.simgen import (
    GammaRule,
    random_design,
    reference_config,
    synthesize_standard_means,
)
from seqcausal.validation import Perturbation, run_identity_suite


def random_means(props, seed):
    rng = np.random.default_rng(seed)
    return StandardMeans({c: float(rng.normal(0, 3)) for c in props.cells})


def test_t1_net_effect_is_mean_difference():
    props = Proportions({(0,): 2, (1,): 3, (2,): 1})
    means = StandardMeans({(0,): 1.0, (1,): 4.5, (2,): -0.5})
    net = oracle.all_net_effects(oracle.enumerate_counterfactual_means(means, props))
    assert net == {FullHistoryWithTreatment(1, (), (), 1): 3.5, FullHistoryWithTreatment(1, (), (), 2): -1.5}


def test_constant_means_have_no_effects(reference):
    _, props = reference
    means = StandardMeans({c: 2.75 for c in props.cells})
    table = oracle.enumerate_counterfactual_means(means, props)
    assert all(v == pytest.approx(2.75, abs=1e-14) for v in table.static.values())
    assert all(abs(v) < 1e-14 for v in oracle.all_net_effects(table).values())


def test_static_regimes_match_gformula(reference):
    _, props = reference
    means = random_means(props, 1)
    table = oracle.enumerate_counterfactual_means(means, props)
    assert len(table.static) == 8 and table.unreachable == []
    for z in itertools.product([0, 1], repeat=3):
        assert table.static[z] == pytest.approx(evaluate_gformula(means, props, Regime.static(z)), abs=1e-12)


def test_unreachable_regime_is_listed():
    props = Proportions({(0, (0,), 0): 2, (0, (0,), 1): 1, (1, (0,), 0): 3})
    means = StandardMeans({c: 1.0 for c in props.cells})
    table = oracle.enumerate_counterfactual_means(means, props)
    assert table.unreachable == [(1, 1)]
    net = oracle.all_net_effects(table)
    assert FullHistoryWithTreatment(2, (1,), ((0,),), 1) not in net


def test_terminal_theta_equals_brute_force(reference):
    _, props = reference
    means = random_means(props, 2)
    params = extract_point_params(means, props)
    net = oracle.all_net_effects(oracle.enumerate_counterfactual_means(means, props))
    terminal = [k for k in net if k.t == 3]
    assert len(terminal) == 16
    for key in terminal:
        assert net[key] == params.theta_at(key)


def test_stratum_identities_hold_for_arbitrary_means(small_design):
    # the stratum-level decomposition is an algebraic identity: it does not
    # depend on any pattern holding
    _, props = small_design
    means = random_means(props, 3)
    table = oracle.enumerate_counterfactual_means(means, props)
    net = oracle.all_net_effects(table)
    params = extract_point_params(means, props)
    assert oracle.verify_stratum_constraint(params, net, props).passed
    assert oracle.verify_mean_decomposition(means, net, props, table=table).passed
    assert oracle.verify_regime_expansion(table, net, props).passed


def test_pattern_checks_fail_on_pattern_free_means(small_design):
    _, props = small_design
    means = random_means(props, 4)
    table = oracle.enumerate_counterfactual_means(means, props)
    net = oracle.all_net_effects(table)
    params = extract_point_params(means, props)
    assign = assign_classes(PatternSpec.single_class(), props)
    phi = oracle.class_net_effects(net, assign)
    implied = {k: float(phi[0]) for k in net}
    rows = coefficient_rows(props, assign, treatment_strata(props, "full"))
    for rep in (
        oracle.verify_net_effect_pattern(net, assign, phi),
        oracle.verify_constraint(params, phi, rows),
        oracle.verify_mean_decomposition(means, implied, props, table=table),
        oracle.verify_regime_expansion(table, implied, props),
    ):
        assert not rep.passed and rep.max_violation > 1e-3


def test_pattern_checks_pass_on_synthesized_means(small_design):
    _, props = small_design
    pattern = PatternSpec.per_time(2)
    phi = np.array([1.25, -0.5])
    means = synthesize_standard_means(props, pattern, phi, (GammaRule.make({}, 0.7),), 3.0)
    table = oracle.enumerate_counterfactual_means(means, props)
    net = oracle.all_net_effects(table)
    assign = assign_classes(pattern, props)
    np.testing.assert_allclose(oracle.class_net_effects(net, assign), phi, atol=1e-12)
    rows = coefficient_rows(props, assign, treatment_strata(props, "full"))
    assert oracle.verify_constraint(extract_point_params(means, props), phi, rows).passed
    assert oracle.verify_regime_expansion(table, net, props).passed


def test_missing_net_effect_raises(reference):
    _, props = reference
    table = oracle.enumerate_counterfactual_means(random_means(props, 5), props)
    with pytest.raises(errors.MissingConditionalMean):
        oracle.brute_force_net_effects(table, FullHistoryWithTreatment(2, (9,), ((0,),), 1))


def test_markov_weighted_of_constant_is_constant(reference):
    _, props = reference
    values = {k: 4.0 for k in treatment_strata(props, "full")}
    for key in treatment_strata(props, "markov"):
        assert oracle.markov_weighted(values, props, key) == pytest.approx(4.0, abs=1e-14)


def test_identity_suite_passes_on_reference():
    results = run_identity_suite(reference_config(replicates=1))
    assert len(results) == 3
    for res in results:
        assert res.passed, [r.to_dict() for r in res.reports if not r.passed]
        names = {r.name for r in res.reports}
        assert {"closure", "markov_collapse", "sce_decomposition", "constraint"} <= names


def test_identity_suite_passes_on_random_full_history_design():
    design = random_design(3, np.random.default_rng(8), markov=False)
    cfg = dataclasses.replace(
        reference_config(replicates=1),
        phi=((0.8, -1.1, 2.0),),
        design=design,
        pattern=PatternSpec.per_time(3),
        estimation_mode="full",
    )
    (res,) = run_identity_suite(cfg)
    assert res.passed
    assert any(s.startswith("markov_collapse") for s in res.skipped)


def test_perturbation_is_detected_and_located():
    stratum = "t=2|z=1|x=1|zt=1"
    (res, *_) = run_identity_suite(reference_config(replicates=1), [Perturbation(stratum, 0.1)])
    by_name = {r.name: r for r in res.reports}
    assert not res.passed
    assert not by_name["constraint"].passed
    assert by_name["constraint"].max_violation == pytest.approx(0.1, abs=1e-10)
    assert by_name["net_effect_pattern"].worst.startswith("t=2|z=1|x=1")
    # the algebraic identities still hold after the perturbation
    assert by_name["stratum_constraint"].passed and by_name["round_trip"].passed

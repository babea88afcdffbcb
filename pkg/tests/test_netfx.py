import numpy as np
import pytest

from seqcausal import errors
from seqcausal.keys import FullHistoryWithTreatment, MarkovWithTreatment
from seqcausal.netfx import (
    CoeffRow,
    PatternSpec,
    assign_classes,
    constraint_coefficients,
    estimate_net_effects,
    estimate_pattern,
    fitted_residual_test,
    markov_constraint_coefficients,
)
from seqcausal.panel import Proportions, treatment_strata
from seqcausal.pointparam import ThetaEstimate
from seqcausal.simgen import (
    generate_outcomes,
    random_design,
    reference_design,
    synthesize_design,
    synthesize_standard_means,
)


def theta(value, variance, label="s"):
    return ThetaEstimate(value, variance, label, 1, 1, variance / 2)


def row(*c):
    return CoeffRow("s", np.array(c, dtype=float), 1, 1)


# --------------------------------------------------------------------------
# patterns and classes


def test_single_class_covers_reference(reference):
    _, props = reference
    assign = assign_classes(PatternSpec.single_class("markov"), props)
    assert assign.K == 1
    assert assign.members[0] == tuple(treatment_strata(props, "markov"))


def test_per_time_two_periods(small_design):
    _, props = small_design
    assign = assign_classes(PatternSpec.per_time(2), props)
    assert assign.K == 2
    assert {k.t for k in assign.members[0]} == {1}
    assert {k.t for k in assign.members[1]} == {2}


def test_uncovered_stratum(small_design):
    _, props = small_design
    spec = PatternSpec.from_dict({"K": 1, "rules": [{"match": {"t": 1}, "class": 1}]})
    with pytest.raises(errors.UncoveredStratum):
        assign_classes(spec, props)


def test_empty_class(small_design):
    _, props = small_design
    spec = PatternSpec.from_dict({"K": 2, "rules": [{"match": {}, "class": 1}, {"match": {"t": 2}, "class": 2}]})
    with pytest.raises(errors.EmptyClass):
        assign_classes(spec, props)


def test_first_matching_rule_wins(small_design):
    _, props = small_design
    spec = PatternSpec.from_dict({
        "K": 2,
        "rules": [{"match": {"t": 2, "z1": 1}, "class": 2}, {"match": {}, "class": 1}],
    })
    assign = assign_classes(spec, props)
    for key, k in assign.classes.items():
        assert k == (2 if key.t == 2 and key.z[0] == 1 else 1)


def test_pattern_needing_full_history_is_not_markov(reference):
    _, props = reference
    spec = PatternSpec.from_dict({
        "K": 2, "mode": "markov",
        "rules": [{"match": {"t": 3, "z1": 1}, "class": 2}, {"match": {}, "class": 1}],
    })
    with pytest.raises(errors.PatternNotMarkov):
        assign_classes(spec, props)
    full = assign_classes(spec, props, "full")
    with pytest.raises(errors.PatternNotMarkov):
        markov_constraint_coefficients(props, full, MarkovWithTreatment(3, 1, (0,), 1))


@pytest.mark.parametrize(
    "bad",
    [
        {"K": 1, "rules": [{"match": {"colour": 1}, "class": 1}]},
        {"K": 1, "rules": [{"match": {}, "class": 2}]},
        {"K": 1, "rules": [{"match": {"t": "one"}, "class": 1}]},
        {"K": 0, "rules": []},
        {"K": 1, "rules": [], "mode": "sideways"},
        {"shortcut": "per_time"},
        {"shortcut": "diagonal"},
        {"K": 1, "rules": [], "extra": True},
    ],
)
def test_pattern_validation(bad):
    with pytest.raises(errors.ValidationError):
        PatternSpec.from_dict(bad)


def test_pattern_json_round_trip():
    spec = PatternSpec.from_dict({
        "K": 2, "mode": "markov",
        "rules": [{"match": {"t": [2, 3], "zprev": 1}, "class": 2}, {"match": {}, "class": 1}],
    })
    again = PatternSpec.from_dict(spec.to_dict())
    assert again.rules == spec.rules and again.mode == "markov"


# --------------------------------------------------------------------------
# constraint coefficients


def test_terminal_rows_are_basis_vectors(reference):
    _, props = reference
    assign = assign_classes(PatternSpec.per_time(3), props)
    for key in treatment_strata(props, "full"):
        if key.t == 3:
            c = constraint_coefficients(props, assign, key).c
            assert c.tolist() == [0.0, 0.0, 1.0]
    massign = assign_classes(PatternSpec.per_time(3, "markov"), props)
    for key in treatment_strata(props, "markov"):
        if key.t == 3:
            assert markov_constraint_coefficients(props, massign, key).c.tolist() == [0.0, 0.0, 1.0]


def uptake_design(p1, p0):
    # T=2, a single covariate level, pr(z2=1 | z1=1) = p1 / 10, pr(z2=1 | z1=0) = p0 / 10
    return Proportions({
        (1, (0,), 1): p1, (1, (0,), 0): 10 - p1,
        (0, (0,), 1): p0, (0, (0,), 0): 10 - p0,
    })


def test_equal_future_uptake_gives_unit_coefficient():
    props = uptake_design(4, 4)
    assign = assign_classes(PatternSpec.single_class("markov"), props)
    c = markov_constraint_coefficients(props, assign, MarkovWithTreatment(1, None, None, 1)).c
    assert c.tolist() == [1.0]


def test_higher_future_uptake_adds_to_coefficient():
    props = uptake_design(7, 5)
    assign = assign_classes(PatternSpec.single_class("markov"), props)
    c = markov_constraint_coefficients(props, assign, MarkovWithTreatment(1, None, None, 1)).c
    assert c[0] == pytest.approx(1.2, abs=1e-15)
    full = assign_classes(PatternSpec.single_class(), props)
    cf = constraint_coefficients(props, full, FullHistoryWithTreatment(1, (), (), 1)).c
    assert cf[0] == pytest.approx(1.2, abs=1e-15)


def test_per_time_coefficients_split_future_uptake():
    props = uptake_design(7, 5)
    assign = assign_classes(PatternSpec.per_time(2), props)
    c = constraint_coefficients(props, assign, FullHistoryWithTreatment(1, (), (), 1)).c
    np.testing.assert_allclose(c, [1.0, 0.2], atol=1e-15)


def test_empty_control_row():
    props = Proportions({(1, (0,), 1): 1, (1, (0,), 0): 1})
    assign = assign_classes(PatternSpec.single_class(), props)
    with pytest.raises(errors.EmptyControlStratum):
        constraint_coefficients(props, assign, FullHistoryWithTreatment(1, (), (), 1))


# --------------------------------------------------------------------------
# GLS


def test_equal_rows_average():
    est = estimate_net_effects([(theta(2.0, 1.0), row(1)), (theta(2.0, 1.0), row(1))])
    assert est.phi[0] == pytest.approx(2.0, abs=1e-14)
    assert est.covariance[0, 0] == pytest.approx(0.5, rel=1e-14)


def test_consistent_rows_recover_phi():
    est = estimate_net_effects([(theta(2.4, 1.0), row(1.2)), (theta(2.0, 1.0), row(1.0))])
    assert est.phi[0] == pytest.approx(2.0, abs=1e-14)
    assert est.rss == pytest.approx(0.0, abs=1e-25)


def test_inconsistent_rows_hand_gls():
    # (1.2 * 2.4 + 1.0 * 1.0) / (1.2^2 + 1)
    est = estimate_net_effects([(theta(2.4, 1.0), row(1.2)), (theta(1.0, 1.0), row(1.0))])
    assert est.phi[0] == pytest.approx(3.88 / 2.44, abs=1e-14)
    assert est.covariance[0, 0] == pytest.approx(1 / 2.44, abs=1e-14)


def test_gls_two_classes_exact():
    rows = [
        (theta(1.0, 0.5), row(1, 0)),
        (theta(-2.0, 0.25), row(0, 1)),
        (theta(1.0 + 0.3 * -2.0, 1.0), row(1, 0.3)),
    ]
    est = estimate_net_effects(rows)
    np.testing.assert_allclose(est.phi, [1.0, -2.0], atol=1e-14)
    assert est.dof == 1


def test_rank_deficient():
    rows = [(theta(1.0, 1.0), row(1, 2)), (theta(2.0, 1.0), row(2, 4)), (theta(0.5, 1.0), row(0.5, 1))]
    with pytest.raises(errors.RankDeficientDesign):
        estimate_net_effects(rows)


def test_too_few_rows():
    with pytest.raises(errors.TooFewRows):
        estimate_net_effects([(theta(1.0, 1.0), row(1, 0))])
    with pytest.raises(errors.TooFewRows):
        estimate_net_effects([])


def test_singular_weight_matrix():
    rows = [(theta(1.0, 1.0), row(1)), (theta(1.0, 1.0), row(1))]
    with pytest.raises(errors.SingularWeightMatrix):
        estimate_net_effects(rows, theta_cov=np.ones((2, 2)))


def test_zero_rows_are_dropped_with_warning():
    rows = [(theta(1.0, 1.0, "a"), row(1)), (theta(5.0, 1.0, "b"), row(0)), (theta(3.0, 1.0, "c"), row(1))]
    with pytest.warns(UserWarning):
        est = estimate_net_effects(rows)
    assert est.dropped == ["b"]
    assert est.phi[0] == pytest.approx(2.0, abs=1e-14)


def test_goodness_of_fit_and_zero_dof():
    est = estimate_net_effects([(theta(2.4, 1.0), row(1.2)), (theta(2.0, 1.0), row(1.0))])
    gof = fitted_residual_test(est)
    assert gof.dof == 1 and gof.rss < 1e-25 and gof.p_value == pytest.approx(1.0)
    sat = estimate_net_effects([(theta(2.0, 1.0), row(1.0))])
    with pytest.raises(errors.ZeroDof):
        fitted_residual_test(sat)


def test_misspecified_pattern_rss_grows_with_n():
    base = random_design(2, np.random.default_rng(5))
    rss = []
    for copies in (1, 4, 16):
        design = base.with_units(base.n_units * copies)
        skel, props = synthesize_design(design)
        means = synthesize_standard_means(props, PatternSpec.per_time(2), [2.0, -1.0])
        vals = []
        for r in range(20):
            panel = generate_outcomes(skel, means, 1.0, (99, r))
            vals.append(estimate_pattern(panel, PatternSpec.single_class(), sigma2=1.0).estimate.rss)
        rss.append(np.mean(vals))
    assert rss[0] < rss[1] < rss[2]
    assert rss[2] / rss[0] > 8


def test_estimate_pattern_noiseless_reference():
    skel, props = synthesize_design(reference_design())
    means = synthesize_standard_means(props, PatternSpec.per_time(3), [1.0, -3.0, 0.5])
    panel = generate_outcomes(skel, means, 0.0, 0)
    for mode in ("full", "markov"):
        fit = estimate_pattern(panel, PatternSpec.per_time(3), mode, sigma2=1.0)
        np.testing.assert_allclose(fit.estimate.phi, [1.0, -3.0, 0.5], atol=1e-10)
        assert fit.excluded == []

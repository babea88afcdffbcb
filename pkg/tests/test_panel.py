import numpy as np
import pytest

from seqcausal import errors
from seqcausal.keys import FullHistory, FullHistoryWithTreatment, Markov, MarkovWithTreatment
from seqcausal.panel import (
    PanelData,
    PanelSchema,
    Proportions,
    load_panel,
    proportion,
    stratum_count,
    stratum_mean_outcome,
    treatment_strata,
    write_panel,
)

CSV = """unit_id,z1,x1_1,z2,y
a,1,0,1,2.0
b,1,0,0,1.0
c,0,1,1,3.5
d,0,0,0,0.5
e,1,1,1,4.0
"""


def test_load_panel_from_text():
    p = load_panel(CSV)
    assert p.n_units == 5 and p.T == 2 and p.covariate_dims == (1,)
    assert p.unit_ids == ("a", "b", "c", "d", "e")
    np.testing.assert_array_equal(p.treatments[:, 0], [1, 1, 0, 0, 1])
    assert p.unit_cell(2) == (0, (1,), 1)


def test_load_panel_column_order_is_free(tmp_path):
    text = "y,z2,x1_1,z1\n1.5,1,0,1\n2.5,0,1,0\n"
    path = tmp_path / "p.csv"
    path.write_text(text)
    p = load_panel(str(path))
    assert p.unit_cell(0) == (1, (0,), 1)
    assert p.unit_ids is None


def test_write_then_load_round_trip(tmp_path):
    p = load_panel(CSV)
    path = tmp_path / "out.csv"
    write_panel(p, path)
    q = load_panel(path)
    np.testing.assert_array_equal(q.outcome, p.outcome)
    assert q.cells == p.cells


@pytest.mark.parametrize(
    "text, exc",
    [
        ("z1,y\n", errors.EmptyPanel),
        ("", errors.EmptyPanel),
        ("x1_1,y\n0,1\n", errors.MissingColumn),
        ("z1,x1_1,z2\n1,0,1\n", errors.MissingColumn),
        ("z1,y\n1.5,2\n", errors.NonIntegerTreatment),
        ("z1,y\nyes,2\n", errors.NonIntegerTreatment),
        ("z1,y\n-1,2\n", errors.OutOfRangeValue),
        ("z1,y\n1,nan\n", errors.NonFiniteOutcome),
        ("z1,y\n1,inf\n", errors.NonFiniteOutcome),
        ("z1,y\n1,\n", errors.NonFiniteOutcome),
    ],
)
def test_load_panel_errors(text, exc):
    with pytest.raises(exc):
        load_panel(text if "\n" in text else text + "\n")


def test_panel_without_covariates_has_empty_vectors():
    p = load_panel("z1,z2,y\n1,0,1\n0,1,2\n")
    assert p.covariate_dims == (0,)
    assert p.unit_cell(0) == (1, (), 0)


def test_schema_declared_arity_is_enforced():
    with pytest.raises(errors.OutOfRangeValue):
        load_panel(CSV, PanelSchema(treatment_arity=(0, 1)))
    p = load_panel(CSV, PanelSchema(treatment_arity=(2, 1)))
    assert p.treatment_arity == (2, 1)


def test_schema_rejects_unknown_keys():
    with pytest.raises(errors.ValidationError):
        PanelSchema.from_dict({"T": 2, "colour": "red"})


def test_panel_is_read_only():
    p = load_panel(CSV)
    with pytest.raises(ValueError):
        p.outcome[0] = 9.0
    with pytest.raises(ValueError):
        p.treatments[0, 0] = 3


def test_proportion_single_binary_treatment():
    p = PanelData.from_arrays(np.array([[1], [0], [1], [1]]), (), [1.0, 2.0, 3.0, 4.0])
    assert proportion(p, FullHistoryWithTreatment(1, (), (), 1), FullHistory(1, (), ())) == 0.75


def test_proportion_empty_conditioning_stratum():
    p = load_panel(CSV)
    with pytest.raises(errors.EmptyConditioningStratum):
        proportion(p, FullHistoryWithTreatment(2, (2,), ((0,),), 1), FullHistory(2, (2,), ((0,),)))


def test_stratum_counts_and_means():
    p = load_panel(CSV)
    k = FullHistoryWithTreatment(2, (1,), ((0,),), 1)
    assert stratum_count(p, k) == 1
    assert stratum_count(p, FullHistory(2, (1,), ((0,),))) == 2
    assert stratum_mean_outcome(p, FullHistory(2, (1,), ((0,),))) == (1.5, 2)
    assert stratum_count(p, MarkovWithTreatment(2, 1, (0,), 1)) == 1
    assert stratum_count(p, Markov(1)) == 5
    with pytest.raises(errors.EmptyStratum):
        stratum_mean_outcome(p, FullHistoryWithTreatment(2, (0,), ((1,),), 0))


def test_pooled_variance_is_within_cell():
    z = np.array([[1], [1], [0], [0], [0]])
    y = [1.0, 3.0, 0.0, 2.0, 4.0]
    p = PanelData.from_arrays(z, (), y)
    # residuals (-1, 1) and (-2, 0, 2): 10 over 3 dof
    assert p.pooled_variance() == pytest.approx(10 / 3, rel=1e-15)


def test_proportions_prefix_sums():
    props = Proportions({(1, (0,), 1): 2, (1, (0,), 0): 1, (0, (1,), 1): 1})
    assert props.total == 4 and props.T == 2
    assert props.weight((1,)) == 3
    assert props.conditional((1, (0,), 1), (1, (0,))) == pytest.approx(2 / 3)
    assert props.next_distribution((1, (0,))) == [(0, 1 / 3), (1, 2 / 3)]
    with pytest.raises(errors.MissingProportion):
        props.conditional((2, (0,)), (2,))


def test_treatment_strata_modes(reference):
    _, props = reference
    full = treatment_strata(props, "full")
    markov = treatment_strata(props, "markov")
    # 1 + 4 + 16 active full strata, 1 + 4 + 4 Markov strata
    assert len(full) == 21 and len(markov) == 9
    assert all(k.zt == 1 for k in full)
    assert len(treatment_strata(props, "full", active=False)) == 42

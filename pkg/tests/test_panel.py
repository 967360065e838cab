import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import P, grid_panel, make_panel
from paneldid.panel import (
    IngestError,
    Observation,
    PanelDataset,
    balance_report,
    ingest_panel,
    log_outcome,
    serialize_panel,
)

MINIMAL = """\
unit,year,quarter,outcome,weight
a,2014,1,10.0,1.0
a,2014,2,11.0,1.0
b,2014,1,20.0,2.0
b,2014,2,21.0,2.0
"""


def test_ingest_minimal():
    data = ingest_panel(io.StringIO(MINIMAL))
    assert data.n_obs == 4
    assert data.units == ("a", "b")
    assert data.periods == (P(2014, 1), P(2014, 2))
    assert data.covariate_names == ()


def test_ingest_is_row_order_invariant():
    lines = MINIMAL.splitlines()
    shuffled = "\n".join([lines[0], lines[3], lines[1], lines[4], lines[2]]) + "\n"
    assert ingest_panel(io.StringIO(shuffled)) == ingest_panel(io.StringIO(MINIMAL))


def test_ingest_duplicate_pair_names_the_pair():
    text = MINIMAL + "a,2014,1,12.0,1.0\n"
    with pytest.raises(IngestError, match=r"a.*2014Q1"):
        ingest_panel(io.StringIO(text))


def test_ingest_rejects_zero_outcome():
    text = "unit,year,quarter,outcome,weight\na,2014,1,0.0,1.0\n"
    with pytest.raises(IngestError, match="row 2"):
        ingest_panel(io.StringIO(text))


def test_ingest_allows_negative_outcome_when_not_logging():
    text = "unit,year,quarter,outcome,weight\na,2014,1,-0.5,1.0\nb,2014,1,0.5,1.0\n"
    data = ingest_panel(io.StringIO(text), require_positive_outcome=False)
    assert data.arrays.outcome.min() == -0.5


def test_ingest_rejects_nonpositive_weight():
    text = "unit,year,quarter,outcome,weight\na,2014,1,1.0,0.0\n"
    with pytest.raises(IngestError, match="weight"):
        ingest_panel(io.StringIO(text))


def test_ingest_unparseable_numeric_names_column():
    text = "unit,year,quarter,outcome,weight\na,2014,x,1.0,1.0\n"
    with pytest.raises(IngestError, match="quarter"):
        ingest_panel(io.StringIO(text))


def test_ingest_schema_remap_and_covariates():
    text = "r,yr,q,emp,size,east\nR1,2014,1,5.0,1.0,1.0\nR2,2014,1,6.0,1.5,0.0\n"
    schema = {
        "unit": "r", "year": "yr", "quarter": "q",
        "outcome": "emp", "weight": "size", "east": "east",
    }
    data = ingest_panel(io.StringIO(text), schema)
    assert data.covariate_names == ("east",)
    np.testing.assert_array_equal(data.covariate_column("east"), [1.0, 0.0])


def test_ingest_default_schema_extra_columns_become_covariates():
    text = "unit,year,quarter,outcome,weight,east,urban\na,2014,1,1.0,1.0,0.5,1.0\n"
    data = ingest_panel(io.StringIO(text))
    assert data.covariate_names == ("east", "urban")


def test_ingest_missing_covariate_cell_rejected():
    text = "unit,year,quarter,outcome,weight,east\na,2014,1,1.0,1.0,\n"
    with pytest.raises(IngestError, match="east"):
        ingest_panel(io.StringIO(text))


def test_ingest_conflicting_cluster_rejected():
    text = (
        "unit,year,quarter,outcome,weight,cluster\n"
        "a,2014,1,1.0,1.0,c1\n"
        "a,2014,2,1.0,1.0,c2\n"
    )
    with pytest.raises(IngestError, match="cluster"):
        ingest_panel(io.StringIO(text), {"unit": "unit", "year": "year",
                                         "quarter": "quarter", "outcome": "outcome",
                                         "weight": "weight", "cluster": "cluster"})


def test_cluster_defaults_to_unit():
    data = ingest_panel(io.StringIO(MINIMAL))
    assert data.cluster == {"a": "a", "b": "b"}


def test_serialize_round_trip_is_identity():
    data = ingest_panel(io.StringIO(MINIMAL))
    sink = io.StringIO()
    serialize_panel(data, sink)
    again = ingest_panel(io.StringIO(sink.getvalue()))
    assert again == data


def test_log_outcome_values():
    data = make_panel({("a", P(2014, 1)): 1.0, ("a", P(2014, 2)): math.e,
                       ("b", P(2014, 1)): 100.0, ("b", P(2014, 2)): 200.0})
    logged = log_outcome(data)
    got = {(o.unit, o.period): o.outcome for o in logged.observations}
    assert got[("a", P(2014, 1))] == 0.0
    assert got[("a", P(2014, 2))] == pytest.approx(1.0, abs=1e-15)
    assert got[("b", P(2014, 1))] == pytest.approx(4.605170185988092, abs=1e-12)
    assert got[("b", P(2014, 2))] == pytest.approx(5.298317366548036, abs=1e-12)


def test_log_outcome_rejects_nonpositive():
    data = make_panel({("a", P(2014, 1)): -1.0, ("b", P(2014, 1)): 1.0})
    with pytest.raises(ValueError, match="positive"):
        log_outcome(data)


def test_balance_report_balanced():
    data = grid_panel(2, 2, lambda i, j: 1.0 + i + j)
    report = balance_report(data)
    assert report.is_balanced
    assert (report.n_units, report.n_periods, report.n_observations) == (2, 2, 4)


def test_balance_report_names_gap():
    data = make_panel({
        ("a", P(2014, 1)): 1.0, ("a", P(2014, 2)): 1.0, ("a", P(2014, 3)): 1.0,
        ("b", P(2014, 1)): 1.0, ("b", P(2014, 3)): 1.0,
    })
    report = balance_report(data)
    assert report.missing == (("b", P(2014, 2)),)
    assert not report.is_balanced


def test_observation_validation():
    with pytest.raises(ValueError):
        Observation("a", P(2014, 1), math.nan, 1.0)
    with pytest.raises(ValueError):
        Observation("a", P(2014, 1), 1.0, 0.0)
    with pytest.raises(ValueError):
        Observation("", P(2014, 1), 1.0, 1.0)


def test_dataset_rejects_covariate_arity_mismatch():
    obs = (
        Observation("a", P(2014, 1), 1.0, 1.0, (1.0,)),
        Observation("b", P(2014, 1), 1.0, 1.0),
    )
    with pytest.raises(ValueError, match="covariate"):
        PanelDataset(obs, covariate_names=("z",))


def test_region_constant_validated():
    data = make_panel(
        {("a", P(2014, 1)): 1.0, ("a", P(2014, 2)): 1.0},
        covariates={("a", P(2014, 1)): (1.0,), ("a", P(2014, 2)): (2.0,)},
    )
    with pytest.raises(ValueError, match="constant"):
        data.region_constant("z0")


def test_with_outcome_replaces_values_only():
    data = ingest_panel(io.StringIO(MINIMAL))
    new = data.with_outcome([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(new.arrays.outcome, [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(new.arrays.weight, data.arrays.weight)


outcome_values = st.floats(
    min_value=1e-3, max_value=1e6, allow_nan=False, allow_infinity=False
)


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_serialize_ingest_round_trip_random(data_strategy):
    n_units = data_strategy.draw(st.integers(min_value=1, max_value=5))
    n_periods = data_strategy.draw(st.integers(min_value=1, max_value=5))
    values = {}
    weights = {}
    for i in range(n_units):
        for j in range(n_periods):
            key = (f"u{i}", P(2013, 1).shift(j))
            values[key] = data_strategy.draw(outcome_values)
            weights[key] = data_strategy.draw(outcome_values)
    data = make_panel(values, weights)
    sink = io.StringIO()
    serialize_panel(data, sink)
    assert ingest_panel(io.StringIO(sink.getvalue())) == data


@given(st.lists(outcome_values, min_size=1, max_size=8))
def test_log_then_exp_round_trip(values):
    keys = [("a", P(2013, 1).shift(i)) for i in range(len(values))]
    data = make_panel(dict(zip(keys, values)))
    logged = log_outcome(data)
    back = logged.with_outcome([math.exp(o.outcome) for o in logged.observations])
    for before, after in zip(data.observations, back.observations):
        assert after.outcome == pytest.approx(before.outcome, rel=1e-12)

import json

import pytest

from fluid_fcfs.core.exceptions import SpecParseError, SpecValidationError
from fluid_fcfs.models.schemas import RateMode
from fluid_fcfs.models.system import SubsetView, aggregates, customers_of, servers_of, unique_customers_of
from fluid_fcfs.services.spec_loader import dump_spec, load_spec

from .conftest import make_spec


def _document(**overrides):
    document = {
        "servers": ["s1", "s2"],
        "customers": [{"name": "c1", "alpha": 0.5}, {"name": "c2", "alpha": 0.5}],
        "edges": [["s1", "c1"], ["s2", "c2"], ["s2", "c1"]],
        "rates": {"mode": "SD", "per_server": {"s1": 1.0, "s2": 2.0}},
    }
    document.update(overrides)
    return document


def test_load_from_dict_and_text_agree():
    document = _document()
    assert load_spec(document) == load_spec(json.dumps(document))


def test_load_from_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(_document(**{"lambda": 2.5})))
    spec = load_spec(path)
    assert spec.arrival_rate == 2.5
    assert spec.mode is RateMode.SD


def test_edges_sorted_customer_major():
    spec = load_spec(_document())
    assert spec.edge_names(spec.edges) == [("s1", "c1"), ("s2", "c1"), ("s2", "c2")]


def test_alpha_must_sum_to_one():
    document = _document(customers=[{"name": "c1", "alpha": 0.6}, {"name": "c2", "alpha": 0.5}])
    with pytest.raises(SpecValidationError, match="alpha sums to 1.1"):
        load_spec(document)


def test_alpha_must_be_positive():
    document = _document(customers=[{"name": "c1", "alpha": 1.0}, {"name": "c2", "alpha": 0.0}])
    with pytest.raises(SpecValidationError, match="alpha of c2"):
        load_spec(document)


def test_isolated_server_rejected():
    document = _document(
        servers=["s1", "s2", "s3"],
        rates={"mode": "SD", "per_server": {"s1": 1.0, "s2": 1.0, "s3": 1.0}},
    )
    with pytest.raises(SpecValidationError, match="isolated"):
        load_spec(document)


def test_duplicate_edge_rejected():
    document = _document(edges=[["s1", "c1"], ["s1", "c1"], ["s2", "c2"]])
    with pytest.raises(SpecValidationError, match="duplicate edge"):
        load_spec(document)


def test_undeclared_identifier_rejected():
    document = _document(edges=[["s1", "c1"], ["s2", "c9"]])
    with pytest.raises(SpecValidationError, match="undeclared customer type"):
        load_spec(document)


def test_missing_sd_rate_rejected():
    document = _document(rates={"mode": "SD", "per_server": {"s1": 1.0}})
    with pytest.raises(SpecValidationError, match="missing"):
        load_spec(document)


def test_nonpositive_rate_rejected():
    document = _document(rates={"mode": "SD", "per_server": {"s1": 1.0, "s2": -1.0}})
    with pytest.raises(SpecValidationError, match="rate of s2"):
        load_spec(document)


def test_general_rate_on_non_edge_rejected():
    document = _document(
        rates={"mode": "GENERAL", "per_edge": [["s1", "c1", 1.0], ["s2", "c1", 1.0], ["s2", "c2", 1.0], ["s1", "c2", 1.0]]}
    )
    with pytest.raises(SpecValidationError, match="not an edge"):
        load_spec(document)


def test_malformed_json():
    with pytest.raises(SpecParseError, match="malformed JSON"):
        load_spec('{"servers": [')


def test_unknown_field_is_a_parse_error():
    with pytest.raises(SpecParseError):
        load_spec(_document(extra_field=1))


def test_dump_then_load_is_identity(system1):
    assert load_spec(dump_spec(system1)) == system1


def test_dump_uses_lambda_key():
    spec = load_spec(_document(**{"lambda": 3.0}))
    assert dump_spec(spec)["lambda"] == 3.0


def test_rates_by_mode():
    cd = make_spec(servers=["s1", "s2"], alpha={"c1": 0.5, "c2": 0.5},
                   edges=[("s1", "c1"), ("s2", "c2")], cd={"c1": 2.0, "c2": 4.0})
    assert cd.rate(0, 0) == 2.0
    assert cd.rate(1, 1) == 4.0
    with pytest.raises(KeyError):
        cd.rate(0, 1)


def test_subset_algebra_on_system1(system1):
    pair = SubsetView.of_servers(system1, ["s1", "s2"])
    assert customers_of(system1, pair).names(system1) == {"c1", "c2", "c3"}
    assert unique_customers_of(system1, pair).names(system1) == {"c3"}
    c2 = SubsetView.of_customers(system1, ["c2"])
    assert servers_of(system1, c2).names(system1) == {"s1", "s3"}


def test_aggregates_sd(system1):
    pair = SubsetView.of_servers(system1, ["s1", "s2"])
    agg = aggregates(system1, pair, unique_customers_of(system1, pair))
    assert agg.alpha == pytest.approx(0.2)
    assert agg.beta == pytest.approx(0.6)
    assert agg.mu == pytest.approx(0.6)


def test_aggregates_rejects_mixed_kinds(system1):
    servers = SubsetView.of_servers(system1, ["s1"])
    with pytest.raises(ValueError):
        aggregates(system1, servers, servers)

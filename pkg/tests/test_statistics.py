import math

import numpy as np
import pytest
from scipy import special, stats

from fluid_fcfs.core.exceptions import SingularCovarianceError, UsageError
from fluid_fcfs.models.schemas import LawFamily, ReplicationVectorsDocument
from fluid_fcfs.services.simulation import SimulationProtocol, run_study
from fluid_fcfs.services.statistics import (
    REPORT_CSV_HEADER,
    compare_laws,
    f_upper_tail,
    hotelling_t2,
    matrix_to_vector,
    regularized_incomplete_beta,
    report_table,
    theoretical_vector,
)
from fluid_fcfs.storage.fixtures import fixture_store


def test_f_tail_closed_forms():
    assert f_upper_tail(3.0, 1, 2) == pytest.approx(1 - math.sqrt(3 / 5), abs=1e-12)
    assert f_upper_tail(1.0, 2, 2) == pytest.approx(0.5, abs=1e-12)
    assert f_upper_tail(0.0, 4, 7) == 1.0
    assert f_upper_tail(math.inf, 4, 7) == 0.0


@pytest.mark.parametrize("d1, d2", [(1, 1), (2, 5), (5, 95), (17, 83), (35, 65)])
def test_f_tail_matches_scipy(d1, d2):
    for f in (0.01, 0.5, 1.0, 2.5, 10.0, 80.0):
        assert f_upper_tail(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), rel=1e-9, abs=1e-300)


def test_incomplete_beta_matches_scipy():
    for a, b, x in [(0.5, 0.5, 0.3), (2.0, 3.0, 0.9), (40.0, 2.5, 0.95), (1.0, 30.0, 0.01)]:
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-10)
    assert regularized_incomplete_beta(2.0, 2.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 2.0, 1.0) == 1.0


def test_f_tail_argument_checks():
    with pytest.raises(UsageError):
        f_upper_tail(-1.0, 1, 1)
    with pytest.raises(UsageError):
        f_upper_tail(1.0, 0, 1)


def test_three_point_example():
    report = hotelling_t2([[1.0, 0.0], [2.0, -1.0], [3.0, -2.0]], [1.0, 0.0])
    assert report.t_squared == pytest.approx(3.0)
    assert report.f_statistic == pytest.approx(3.0)
    assert (report.df1, report.df2) == (1, 2)
    assert report.p_value == pytest.approx(1 - math.sqrt(3 / 5))


def test_mean_equal_to_hypothesis_gives_zero():
    data = np.random.default_rng(1).dirichlet([2.0, 3.0, 4.0], size=30)
    report = hotelling_t2(data, data.mean(axis=0))
    assert report.t_squared == 0.0
    assert report.p_value == 1.0


def test_dropped_coordinate_does_not_matter():
    rng = np.random.default_rng(2)
    data = rng.dirichlet([3.0, 2.0, 4.0, 1.0], size=40)
    mean = np.array([0.3, 0.2, 0.4, 0.1])
    base = hotelling_t2(data, mean)
    for order in ([3, 1, 2, 0], [0, 3, 1, 2], [2, 0, 3, 1]):
        assert hotelling_t2(data[:, order], mean[order]).t_squared == pytest.approx(base.t_squared, rel=1e-9)


def test_scale_invariance():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(25, 3))
    mean = np.array([0.1, -0.2, 0.0])
    assert hotelling_t2(7.5 * data, 7.5 * mean).t_squared == pytest.approx(hotelling_t2(data, mean).t_squared)


def test_constant_coordinate_is_singular():
    data = [[0.5, 0.5]] * 5
    with pytest.raises(SingularCovarianceError) as raised:
        hotelling_t2(data, [0.4, 0.6])
    assert math.isinf(raised.value.condition) or raised.value.condition > 1e12


def test_shape_checks():
    with pytest.raises(UsageError):
        hotelling_t2([[0.5, 0.5], [0.4, 0.6]], [0.5, 0.5])
    with pytest.raises(UsageError):
        hotelling_t2(np.ones((10, 3)), [1.0, 0.0])
    with pytest.raises(UsageError):
        hotelling_t2(np.ones((10, 1)), [1.0])


def test_p_values_uniform_under_null():
    rng = np.random.default_rng(4)
    covariance = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, 0.5], [0.0, 0.5, 1.5]])
    p_values = [hotelling_t2(rng.multivariate_normal(np.zeros(3), covariance, size=20), np.zeros(3)).p_value
                for _ in range(1_000)]
    assert stats.kstest(p_values, "uniform").pvalue > 1e-3


def test_report_formatting():
    report = hotelling_t2([[1.0, 0.0], [2.0, -1.0], [3.0, -2.0]], [1.0, 0.0])
    row = report.csv_row()
    assert len(row) == len(REPORT_CSV_HEADER)
    assert row[4:6] == ["1", "2"]
    tiny = hotelling_t2(np.random.default_rng(5).normal(10.0, 0.01, size=(50, 3)), np.zeros(3))
    assert tiny.formatted_p_value() == "<1e-15"


def test_matrix_to_vector_follows_edge_order(system1):
    matrix = fixture_store.theoretical_matrix("system1")
    vector = matrix_to_vector(system1, matrix)
    assert vector.tolist() == [matrix[i, j] for j, i in system1.edges]
    assert vector.sum() == pytest.approx(1.0)
    with pytest.raises(UsageError):
        matrix_to_vector(system1, np.zeros((2, 3)))


def test_theoretical_sources(system1, small_tree, complete_2x2):
    tree = theoretical_vector(small_tree, "tree")
    assert tree == pytest.approx([0.4, 0.1, 0.5])
    assert theoretical_vector(small_tree, "lp") == pytest.approx(tree)
    assert theoretical_vector(complete_2x2, "complete") == pytest.approx([0.25] * 4)
    labels = ["1-2-3", "3-2-1"]
    assert theoretical_vector(system1, "permutation", labels) == pytest.approx([0.1, 0.1])
    assert theoretical_vector(system1, {"1-2-3": 0.4}, labels).tolist() == [0.4, 0.0]
    with pytest.raises(UsageError):
        theoretical_vector(system1, "nonsense")


@pytest.fixture(scope="module")
def short_study():
    spec = fixture_store.spec("system1")
    protocol = SimulationProtocol(warmup_services=1_000, measured_services=10_000)
    return spec, run_study(spec, LawFamily.EXPONENTIAL, protocol, replications=12, seed_base=6, progress=False)


def test_compare_laws_accepts_estimates_and_documents(short_study):
    spec, estimate = short_study
    matrix = fixture_store.theoretical_matrix("system1")
    document = ReplicationVectorsDocument.model_validate_json(estimate.vectors_document("system1").model_dump_json())
    from_estimate = compare_laws(spec, matrix, {LawFamily.EXPONENTIAL: estimate}, system="system1")
    from_document = compare_laws(spec, matrix, {LawFamily.EXPONENTIAL: document}, system="system1")
    assert from_estimate[0].t_squared == pytest.approx(from_document[0].t_squared)
    assert from_estimate[0].law == "exponential"
    assert from_estimate[0].p_value > 1e-4
    table = report_table(from_estimate)
    assert table.reports[0].system == "system1"


def test_compare_laws_on_orderings(short_study):
    spec, estimate = short_study
    [report] = compare_laws(spec, "permutation", {"exponential": estimate}, target="permutation")
    assert report.dimension == 5
    assert report.target == "permutation"
    assert report.p_value > 1e-4


def test_compare_laws_unknown_target(short_study):
    spec, estimate = short_study
    with pytest.raises(UsageError):
        compare_laws(spec, "permutation", {"exponential": estimate}, target="spans")


def test_f_tail_is_decreasing():
    values = [f_upper_tail(f, 3, 12) for f in np.linspace(0.0, 20.0, 81)]
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))


def test_f_tail_against_sampled_variates():
    draws = np.random.default_rng(7).f(4, 9, size=200_000)
    for f in (0.5, 1.5, 4.0):
        frequency = (draws > f).mean()
        error = math.sqrt(frequency * (1 - frequency) / len(draws))
        assert abs(f_upper_tail(f, 4, 9) - frequency) < 4 * error

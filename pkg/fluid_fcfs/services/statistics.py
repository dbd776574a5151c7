"""
Hotelling's T² test of simulated vectors against theoretical means
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from ..core.exceptions import ConvergenceError, SingularCovarianceError, UsageError
from ..models.schemas import HotellingReportDocument, HotellingReportTable, ReplicationVectorsDocument
from ..models.system import SystemSpec
from .lp import matching_rates_complete, matching_rates_tree, solve_static_plan
from .pooling import check_crp_tree
from .simulation import SimEstimate, permutation_distribution_theoretical

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
RELATIVE_TOLERANCE = 1e-14
TINY = 1e-300
P_VALUE_FLOOR = 1e-15


def _continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction of the incomplete beta function, modified Lentz evaluation"""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, MAX_ITERATIONS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < RELATIVE_TOLERANCE:
            return h
    raise ConvergenceError(f"incomplete beta continued fraction did not converge in {MAX_ITERATIONS} iterations (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise UsageError(f"incomplete beta needs a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = gammaln(a + b) - gammaln(a) - gammaln(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return float(math.exp(log_front) * _continued_fraction(a, b, x) / a)
    return float(1.0 - math.exp(log_front) * _continued_fraction(b, a, 1.0 - x) / b)


def f_upper_tail(f: float, d1: float, d2: float) -> float:
    """P(F > f) for F with (d1, d2) degrees of freedom, as I_x(d2/2, d1/2) at x = d2/(d2 + d1 f)"""
    if d1 < 1 or d2 < 1:
        raise UsageError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")
    if f < 0 or math.isnan(f):
        raise UsageError(f"F statistic must be >= 0, got {f}")
    if f == 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = d2 / (d2 + d1 * f)
    return min(max(regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, x), 0.0), 1.0)


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    t_squared: float
    f_statistic: float
    df1: int
    df2: int
    p_value: float
    n: int
    dimension: int
    system: str = ""
    law: str = ""
    target: str = "matching"

    def formatted_p_value(self) -> str:
        return f"<{P_VALUE_FLOOR:.0e}" if self.p_value < P_VALUE_FLOOR else f"{self.p_value:.6g}"

    def csv_row(self) -> List[str]:
        return [
            self.system,
            self.law,
            f"{self.t_squared:.10g}",
            f"{self.f_statistic:.10g}",
            str(self.df1),
            str(self.df2),
            self.formatted_p_value(),
        ]

    def to_document(self) -> HotellingReportDocument:
        return HotellingReportDocument(
            system=self.system,
            law=self.law,
            target=self.target,
            t_squared=self.t_squared,
            f_statistic=self.f_statistic,
            df1=self.df1,
            df2=self.df2,
            p_value=self.p_value,
            n=self.n,
            dimension=self.dimension,
        )


REPORT_CSV_HEADER = ["system", "law", "t2", "f", "d1", "d2", "p_value"]


def hotelling_t2(observations, hypothesized_mean) -> TestReport:
    """
    One-sample Hotelling T² with the last coordinate omitted.

    The coordinates of each observation sum to one, so the full covariance is
    singular; dropping one coordinate removes the linear dependency.

    Args:
        observations: n vectors of dimension p + 1
        hypothesized_mean: vector of dimension p + 1 in the same coordinate order

    Returns:
        TestReport with F = (n − p) / (p (n − 1)) · T² on (p, n − p) degrees of freedom
    """
    data = np.asarray(observations, dtype=float)
    mean0 = np.asarray(hypothesized_mean, dtype=float)
    if data.ndim != 2 or mean0.ndim != 1 or data.shape[1] != mean0.shape[0]:
        raise UsageError(f"dimension mismatch: observations {data.shape}, mean {mean0.shape}")
    n, p = data.shape[0], data.shape[1] - 1
    if p < 1:
        raise UsageError("vectors need at least two coordinates")
    if n < p + 2:
        raise UsageError(f"need n > p + 1 observations, got n={n} for p={p}")

    x = data[:, :p]
    diff = x.mean(axis=0) - mean0[:p]
    if not np.any(diff):
        t_squared = 0.0
    else:
        covariance = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
        try:
            lower = np.linalg.cholesky(covariance)
        except np.linalg.LinAlgError:
            eigenvalues = np.linalg.eigvalsh(covariance)
            smallest, largest = eigenvalues[0], eigenvalues[-1]
            condition = math.inf if smallest <= 0 else float(largest / smallest)
            raise SingularCovarianceError(
                f"sample covariance is singular (condition estimate {condition:.3g}); "
                f"some coordinate has no variation or coordinates are collinear",
                condition=condition,
            )
        whitened = np.linalg.solve(lower, diff)
        t_squared = float(n * whitened @ whitened)

    f_statistic = (n - p) / (p * (n - 1)) * t_squared
    p_value = f_upper_tail(f_statistic, p, n - p)
    return TestReport(
        t_squared=t_squared,
        f_statistic=f_statistic,
        df1=p,
        df2=n - p,
        p_value=p_value,
        n=n,
        dimension=p,
    )


def matrix_to_vector(spec: SystemSpec, matrix) -> np.ndarray:
    """Customers-by-servers matrix flattened to spec edge order"""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (spec.num_customers, spec.num_servers):
        raise UsageError(f"expected a {spec.num_customers}x{spec.num_servers} matrix, got {matrix.shape}")
    return np.array([matrix[i, j] for j, i in spec.edges])


TheoreticalSource = Union[str, np.ndarray, Sequence[Sequence[float]], Mapping[str, float]]


def theoretical_vector(spec: SystemSpec, source: TheoreticalSource, labels: Sequence[str] = ()) -> np.ndarray:
    """
    Hypothesized mean in the coordinate order of the simulated vectors.

    source is one of "tree", "complete", "lp" or "permutation", a
    customers-by-servers matrix, or a mapping from ordering label to probability.
    """
    if isinstance(source, str):
        if source == "tree":
            solution = check_crp_tree(spec)
            return matrix_to_vector(spec, matching_rates_tree(spec, solution.eta, solution.mu))
        if source == "complete":
            return matrix_to_vector(spec, matching_rates_complete(spec).matrix)
        if source == "lp":
            solution = solve_static_plan(spec)
            return np.array([spec.rate(j, i) * solution.eta[k] / solution.mu_star for k, (j, i) in enumerate(spec.edges)])
        if source == "permutation":
            source = permutation_distribution_theoretical(spec)
        else:
            raise UsageError(f"unknown theoretical source '{source}'")
    if isinstance(source, Mapping):
        return np.array([source.get(label, 0.0) for label in labels])
    return matrix_to_vector(spec, source)


Study = Union[SimEstimate, ReplicationVectorsDocument]


def _study_vectors(study: Study, target: str) -> Tuple[np.ndarray, Sequence[str]]:
    if target not in ("matching", "permutation"):
        raise UsageError(f"unknown test target '{target}', expected matching or permutation")
    if isinstance(study, ReplicationVectorsDocument):
        if target == "permutation":
            return np.asarray(study.permutation_vectors, dtype=float), study.permutation_labels
        return np.asarray(study.matching_vectors, dtype=float), ()
    if target == "permutation":
        return study.permutation_vectors, study.permutation_labels
    return study.replication_vectors, ()


def compare_laws(
    spec: SystemSpec,
    theoretical_mean_source: TheoreticalSource,
    studies: Mapping[str, Study],
    target: str = "matching",
    system: str = "",
) -> List[TestReport]:
    """One T² report per law, testing its replication vectors against the theoretical mean"""
    reports = []
    for law, study in studies.items():
        vectors, labels = _study_vectors(study, target)
        if isinstance(theoretical_mean_source, np.ndarray) and theoretical_mean_source.ndim == 1:
            mean = theoretical_mean_source
        else:
            mean = theoretical_vector(spec, theoretical_mean_source, labels)
        try:
            report = hotelling_t2(vectors, mean)
        except Exception as e:
            logger.error(f"Failed to test {law} against the theoretical mean: {e}")
            raise
        label = law.value if hasattr(law, "value") else str(law)
        reports.append(replace(report, system=system, law=label, target=target))
        logger.info(f"{system or 'system'} {label} {target}: T2={report.t_squared:.4g}, p={report.formatted_p_value()}")
    return reports


def report_table(reports: Sequence[TestReport]) -> HotellingReportTable:
    return HotellingReportTable(reports=[report.to_document() for report in reports])


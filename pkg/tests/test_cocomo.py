import math

import numpy as np
import pytest

from effort_lab.cocomo import (
    DEFAULT_COEFFICIENTS,
    EM_BOUNDS,
    EM_NAMES,
    NOMINAL,
    SF_NAMES,
    CocomoCoefficients,
    CocomoEstimator,
    CocomoProject,
    RatingTable,
    estimate,
    local_calibrate,
    projects_from_dataset,
    to_hours,
)
from effort_lab.datasets import load_bundled
from effort_lab.exceptions import CalibrationError, CocomoError, RatingDomainError, SchemaError

TABLE_SHA256 = "98e2571e99adc8e61014a58a884c579612eca11b2137a3d75f4236cc7c4d98f6"


@pytest.fixture(scope="module")
def table() -> RatingTable:
    return RatingTable.load()


def nominal(kloc: float, actual=None, **ratings) -> CocomoProject:
    sf = tuple(ratings.get(n, NOMINAL) for n in SF_NAMES)
    em = tuple(ratings.get(n, NOMINAL) for n in EM_NAMES)
    return CocomoProject(sf, em, kloc, actual)


def random_projects(table, coeffs, n, seed):
    rng = np.random.default_rng(seed)
    projects = []
    for _ in range(n):
        sf = tuple(int(rng.integers(1, 7)) for _ in SF_NAMES)
        em = tuple(int(rng.choice(sorted(table.effort_multipliers[name]))) for name in EM_NAMES)
        kloc = float(rng.uniform(2, 400))
        effort = estimate(CocomoProject(sf, em, kloc), coeffs, table)
        projects.append(CocomoProject(sf, em, kloc, effort))
    return projects


def test_rating_table_is_pinned(table):
    assert table.digest() == TABLE_SHA256
    assert table.version == "COCOMO-II.2000"


def test_rating_table_maps_nominal_to_one_within_bounds(table):
    low, high = EM_BOUNDS
    for name in EM_NAMES:
        values = table.effort_multipliers[name]
        assert values[NOMINAL] == 1.0
        assert all(low <= v <= high for v in values.values())


def test_nominal_estimate_matches_the_equation(table):
    sf_sum = sum(table.sf_value(n, NOMINAL) for n in SF_NAMES)
    expected = 2.94 * 100 ** (0.91 + 0.01 * sf_sum)
    assert estimate(nominal(100), DEFAULT_COEFFICIENTS, table) == pytest.approx(expected, rel=1e-12)


def test_doubling_kloc_scales_by_the_exponent(table):
    project = nominal(40, prec=1, team=5)
    doubled = nominal(80, prec=1, team=5)
    exponent = DEFAULT_COEFFICIENTS.b + 0.01 * table.sf_sum(project)
    ratio = estimate(doubled, tables=table) / estimate(project, tables=table)
    assert ratio == pytest.approx(2 ** exponent, rel=1e-12)


def test_estimate_grows_with_effort_multiplier_value(table):
    estimates = [estimate(nominal(50, rely=r), tables=table) for r in (1, 2, 3, 4, 5)]
    assert all(a < b for a, b in zip(estimates, estimates[1:]))


def test_undefined_rating_names_the_attribute(table):
    with pytest.raises(RatingDomainError, match="'data'"):
        estimate(nominal(10, data=1), tables=table)


def test_project_shape_is_checked():
    with pytest.raises(CocomoError):
        CocomoProject((3, 3), (3,) * len(EM_NAMES), 10)
    with pytest.raises(CocomoError):
        nominal(0)


@pytest.mark.parametrize("a,b", [(2.0, 1.0), (2.94, 0.91)])
def test_calibration_recovers_generating_coefficients(table, a, b):
    projects = random_projects(table, CocomoCoefficients(a=a, b=b), 25, seed=5)
    fitted = local_calibrate(projects, table)
    assert fitted.a == pytest.approx(a, abs=1e-9)
    assert fitted.b == pytest.approx(b, abs=1e-9)


def test_calibration_minimises_log_residuals(table):
    rng = np.random.default_rng(2)
    projects = [
        CocomoProject(p.scale_factors, p.effort_multipliers, p.kloc, p.actual_months * math.exp(rng.normal(0, 0.3)))
        for p in random_projects(table, DEFAULT_COEFFICIENTS, 30, seed=8)
    ]
    fitted = local_calibrate(projects, table)

    def sse(a, b):
        coeffs = CocomoCoefficients(a=a, b=b)
        return sum((math.log(p.actual_months) - math.log(estimate(p, coeffs, table))) ** 2 for p in projects)

    best = sse(fitted.a, fitted.b)
    for da in (-0.05, 0.0, 0.05):
        for db in (-0.01, 0.0, 0.01):
            if da or db:
                assert best <= sse(fitted.a + da, fitted.b + db)


def test_single_project_is_underdetermined(table):
    with pytest.raises(CalibrationError, match="underdetermined"):
        local_calibrate([nominal(10, 30.0)], table)


def test_equal_sizes_are_underdetermined(table):
    with pytest.raises(CalibrationError, match="underdetermined"):
        local_calibrate([nominal(10, 30.0), nominal(10, 40.0)], table)


def test_missing_actuals_are_rejected(table):
    with pytest.raises(CalibrationError, match="project 1"):
        local_calibrate([nominal(10, 30.0), nominal(20)], table)


def test_estimator_on_bundled_sample():
    data = load_bundled("nasa10_sample")
    assert len(projects_from_dataset(data)) == 5
    model = CocomoEstimator().fit(data)
    predictions = model.predict(data.features)
    assert predictions.shape == (5,)
    assert np.all(predictions > 0)


def test_estimator_needs_cocomo_data():
    with pytest.raises(SchemaError):
        CocomoEstimator().fit(load_bundled("kemerer"))


def test_hours_per_month():
    assert to_hours(2) == 304


def test_coefficients_must_be_positive():
    with pytest.raises(ValueError):
        CocomoCoefficients(b=0.0)
    with pytest.raises(ValueError):
        CocomoCoefficients(a=-1.0)


def test_shrinking_effort_fails_calibration(table):
    with pytest.raises(CalibrationError, match="not positive") as err:
        local_calibrate([nominal(10, 100.0), nominal(100, 10.0)], table)
    assert err.value.context["b"] < 0

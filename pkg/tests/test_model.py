import numpy as np
import pytest
import yaml
from hypothesis import given, settings

from branchlab.config import loads_model
from branchlab.errors import (
    DegenerateVariance,
    MissingLink,
    ModelStructureError,
    NonCritical,
)
from branchlab.families import Bernoulli, Geometric, PointMass, Poisson
from branchlab.model import (
    ProcessSpec,
    ProductLaw,
    TableLaw,
    check_assumptions,
    describe,
    expectation_matrix,
    pair_diff_map,
    pgf_eval,
    sample_offspring,
    survival_map,
    validate_hypothesis_A,
)
from branchlab.zoo import micro_table, single_geometric, two_type_cascade

import properties


def test_product_pgf_values():
    spec = two_type_cascade()
    # geometric factor 1/(2 - 0.5) = 2/3 with the feed factor at 1
    assert pgf_eval(spec, 1, [0.5, 1.0]) == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert pgf_eval(spec, 2, [0.3, 0.5]) == pytest.approx(1.0 / 1.5, rel=1e-15)


def test_survival_map_small_argument():
    spec = two_type_cascade()
    out = survival_map(spec, [1e-8, 0.0])
    # to first order the type-1 complement shrinks by the quadratic
    # term only: d - d^2 + feed contribution 0
    assert out[0] == pytest.approx(9.9999999e-09, rel=1e-9)
    assert out[1] == 0.0


def test_survival_map_rejects_bad_input():
    spec = two_type_cascade()
    with pytest.raises(ValueError):
        survival_map(spec, [1.5, 0.0])
    with pytest.raises(ValueError):
        survival_map(spec, [0.5])


def test_pair_diff_matches_direct_subtraction():
    spec = micro_table()
    da = [0.3, 0.2]
    delta = [0.1, 0.05]
    diffs = pair_diff_map(spec, da, delta)
    for i in (1, 2):
        a = [1.0 - x for x in da]
        b = [x - y for x, y in zip(a, delta)]
        naive = pgf_eval(spec, i, a) - pgf_eval(spec, i, b)
        assert diffs[i - 1] == pytest.approx(naive, abs=1e-14)


def test_mean_matrix_and_powers():
    spec = two_type_cascade()
    md = validate_hypothesis_A(spec)
    assert np.allclose(md.mean_matrix, [[1.0, 1.0], [0.0, 1.0]])
    assert md.b == (1.0, 1.0)
    assert md.link_means == (1.0,)
    m10 = expectation_matrix(spec, 10)
    assert m10[0, 1] == pytest.approx(10.0)
    assert m10[0, 0] == pytest.approx(1.0)


def test_micro_table_moments():
    md = validate_hypothesis_A(micro_table())
    assert md.b == pytest.approx((0.4, 0.5))
    assert md.link_means == pytest.approx((0.2,))


def test_noncritical_detected():
    spec = ProcessSpec(n_types=1, laws=(
        ProductLaw(parent=1, children={1: Geometric(1.2)}),
    ))
    with pytest.raises(NonCritical) as err:
        validate_hypothesis_A(spec)
    assert err.value.violations[0].type_index == 1


def test_missing_link_detected():
    spec = ProcessSpec(n_types=2, laws=(
        ProductLaw(parent=1, children={1: Geometric(1.0)}),
        ProductLaw(parent=2, children={2: Geometric(1.0)}),
    ))
    with pytest.raises(MissingLink):
        validate_hypothesis_A(spec)


def test_degenerate_variance_detected():
    spec = ProcessSpec(n_types=1, laws=(
        ProductLaw(parent=1, children={1: PointMass(1)}),
    ))
    with pytest.raises(DegenerateVariance):
        validate_hypothesis_A(spec)


def test_violations_collected_without_raise():
    spec = ProcessSpec(n_types=2, laws=(
        ProductLaw(parent=1, children={1: Geometric(1.3)}),
        ProductLaw(parent=2, children={2: PointMass(1)}),
    ))
    out = validate_hypothesis_A(spec, raise_on_violation=False)
    kinds = {v.kind for v in out}
    assert "non_critical" in kinds
    assert "missing_link" in kinds
    assert "degenerate_variance" in kinds
    assert check_assumptions(spec) == out


def test_force_skips_enforcement():
    spec = ProcessSpec(n_types=1, laws=(
        ProductLaw(parent=1, children={1: Geometric(1.2)}),
    ))
    md = validate_hypothesis_A(spec, force=True)
    assert md.mean_matrix[0, 0] == pytest.approx(1.2)


def test_table_law_validation():
    with pytest.raises(ModelStructureError):
        TableLaw(parent=1, rows=(((0, 0), 0.5), ((1, 0), 0.6)))  # sum > 1
    with pytest.raises(ModelStructureError):
        TableLaw(parent=2, rows=(((1, 0), 1.0),))  # count below parent
    with pytest.raises(ModelStructureError):
        TableLaw(parent=1, rows=(((0,), 0.5), ((1, 0), 0.5)))  # ragged
    with pytest.raises(ModelStructureError):
        TableLaw(parent=1, rows=(((0, 0), -0.1), ((1, 0), 1.1)))


def test_process_spec_validation():
    law1 = ProductLaw(parent=1, children={1: Geometric(1.0)})
    with pytest.raises(ModelStructureError):
        ProcessSpec(n_types=2, laws=(law1,))  # law count mismatch
    with pytest.raises(ModelStructureError):
        ProcessSpec(n_types=1, laws=(
            ProductLaw(parent=1, children={1: Geometric(1.0),
                                           2: Poisson(0.5)}),
        ))  # child type beyond n_types
    with pytest.raises(ModelStructureError):
        ProductLaw(parent=2, children={1: Geometric(1.0)})  # child below


def test_sample_offspring_shape_and_mean():
    spec = two_type_cascade()
    rng = np.random.default_rng(7)
    out = sample_offspring(spec, 1, 2000, rng)
    assert out.shape == (2,)
    assert out[0] / 2000 == pytest.approx(1.0, abs=0.15)
    assert out[1] / 2000 == pytest.approx(1.0, abs=0.15)


def test_describe_yaml_round_trip():
    for spec in (single_geometric(), two_type_cascade(), micro_table()):
        text = yaml.safe_dump(describe(spec))
        again = loads_model(text)
        assert again == spec


@given(properties.model_specs(), properties.unit_points(4))
@settings(max_examples=120, deadline=None)
def test_property_pgf_basics(spec, point):
    properties.check_pgf_basics(spec, point[:spec.n_types])
    properties.check_survival_consistency(spec, point[:spec.n_types])


@given(properties.model_specs())
@settings(max_examples=120, deadline=None)
def test_property_moment_structure(spec):
    properties.check_moment_structure(spec)

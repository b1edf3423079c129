import textwrap

import pytest

from branchlab.config import load_model, loads_model
from branchlab.errors import ConfigError
from branchlab.families import Geometric, Poisson
from branchlab.model import ProductLaw, TableLaw

GOOD = textwrap.dedent("""\
    name: demo
    types: 2
    laws:
      - parent: 1
        kind: product
        children:
          1: {family: geometric, mean: 1.0}
          2: {family: poisson, mean: 0.5}
      - parent: 2
        kind: table
        rows:
          - {counts: [0, 0], prob: 0.5}
          - {counts: [0, 2], prob: 0.5}
""")


def test_parse_valid_document():
    spec = loads_model(GOOD)
    assert spec.name == "demo"
    assert spec.n_types == 2
    law1 = spec.law(1)
    assert isinstance(law1, ProductLaw)
    assert law1.children[1] == Geometric(1.0)
    assert law1.children[2] == Poisson(0.5)
    law2 = spec.law(2)
    assert isinstance(law2, TableLaw)
    assert law2.rows == (((0, 0), 0.5), ((0, 2), 0.5))


def test_document_name_beats_argument():
    assert loads_model(GOOD, name="other").name == "demo"
    anon = GOOD.replace("name: demo\n", "")
    assert loads_model(anon, name="other").name == "other"
    assert loads_model(anon).name == "model"


def test_load_model_uses_filename_stem(tmp_path):
    p = tmp_path / "cascade_x.yaml"
    p.write_text(GOOD.replace("name: demo\n", ""), encoding="utf-8")
    assert load_model(str(p)).name == "cascade_x"


def test_missing_types_key():
    with pytest.raises(ConfigError) as err:
        loads_model("laws: []\n")
    assert "types" in str(err.value)


def test_law_count_mismatch():
    doc = GOOD.replace("types: 2", "types: 1")
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    assert "laws" in str(err.value)


def test_unknown_kind_reports_field_and_line():
    doc = GOOD.replace("kind: table", "kind: matrix")
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    msg = str(err.value)
    assert "matrix" in msg
    assert "laws[1].kind" in msg
    assert "line" in msg


def test_bad_family_parameter_names_child():
    doc = GOOD.replace("{family: poisson, mean: 0.5}", "{family: poisson}")
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    assert "laws[0].children[2]" in str(err.value)


def test_negative_mean_rejected():
    doc = GOOD.replace("mean: 1.0", "mean: -1.0")
    with pytest.raises(ConfigError):
        loads_model(doc)


def test_bad_counts_width():
    doc = GOOD.replace("counts: [0, 0]", "counts: [0]")
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    assert "counts" in str(err.value)


def test_row_probabilities_must_sum_to_one():
    doc = GOOD.replace("prob: 0.5", "prob: 0.4", 1)
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    assert "sum" in str(err.value)


def test_non_integer_child_key():
    doc = GOOD.replace("2: {family: poisson", "two: {family: poisson")
    assert "two:" in doc  # guard against a silent no-op edit
    with pytest.raises(ConfigError) as err:
        loads_model(doc)
    assert "child type key" in str(err.value)


def test_invalid_yaml_reports_line():
    with pytest.raises(ConfigError) as err:
        loads_model("types: 2\nlaws: [\n")
    assert "invalid YAML" in str(err.value)


def test_types_must_be_integer():
    with pytest.raises(ConfigError):
        loads_model("types: two\nlaws: []\n")
    with pytest.raises(ConfigError):
        loads_model("types: true\nlaws: []\n")

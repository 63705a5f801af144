import csv
import json

import pytest

from kmob.catalog import from_spec
from kmob.cli import main
from kmob.config import CHECKS, TOLERANCES, load, validate
from kmob.errors import ConfigError
from kmob.metrics import HamiltonianBundle, Scaled
from kmob.runner import emit_csv, record, report_body, run

SF = {"kind": "SpaceForm", "m": 2, "c": 2.0}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_defaults_filled():
    cfg = validate({"instance": SF})
    assert cfg["points"] == {"count": 20, "seed": 0}
    assert cfg["checks"] == list(CHECKS)
    assert cfg["tolerances"] == TOLERANCES


def test_checks_ordered():
    cfg = validate({"instance": SF, "checks": ["nullity", "kahler"]})
    assert cfg["checks"] == ["kahler", "nullity"]


@pytest.mark.parametrize(
    "bad",
    [
        {"instance": {"m": 2, "c": 1.0}},
        {"instance": SF, "extra": 1},
        {"instance": SF, "tolerances": {"nope": 1e-3}},
        {"instance": SF, "points": {"count": 1}},
        {"instance": SF, "checks": ["everything"]},
        [],
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        validate(bad)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load(p)


def test_from_spec_kinds():
    inst = from_spec(
        {
            "kind": "Scaled",
            "s": 2.0,
            "base": {"kind": "HamiltonianBundle", "thetas": [[0, 4, -4]], "xi_boxes": [[0, 1]],
                     "constants": [{"eta": 1.0, "c": 4.0}]},
        }
    )
    assert isinstance(inst, Scaled) and isinstance(inst.base, HamiltonianBundle)
    with pytest.raises(ConfigError):
        from_spec({"kind": "catalog", "name": "nothing"})


def test_space_form_kahler_nullity():
    rep = run(validate({"instance": SF, "checks": ["kahler", "nullity"], "points": {"count": 4}}), timestamp=False)
    assert rep["passed"]
    assert set(rep["summary"]["nullity"]["dimensions"]) == {4}
    assert abs(rep["summary"]["nullity"]["B"]) == pytest.approx(0.5)
    assert all(r["anchor"] for r in rep["checks"])


def test_report_deterministic():
    cfg = validate({"instance": {"kind": "catalog", "name": "orthotoric_cubic"}, "points": {"count": 4, "seed": 3}})
    a = report_body(run(cfg))
    b = report_body(run(cfg))
    assert a == b


def test_cone_check_refuses_positive_B():
    cfg = validate({"instance": {"kind": "catalog", "name": "product"}, "checks": ["cone"], "points": {"count": 3}})
    rep = run(cfg, timestamp=False)
    assert not rep["passed"] and all("error" in r for r in rep["checks"])


def fake_report():
    return {
        "points": {"base": [[0.1, 0.2], [0.3, 1 / 3], [0.5, 0.6]], "cone": []},
        "checks": [
            record("a", [1e-9, 2.5e-17, 0.1], 1e-8),
            record("b", [0.0, 1 / 7, 3e-300], 1.0),
        ],
    }


def test_csv_rows_roundtrip(tmp_path):
    rep = fake_report()
    path = tmp_path / "r.csv"
    emit_csv(rep, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["check", "point_index", "x0", "x1", "residual", "tolerance", "pass"]
    assert len(rows) == 7
    for row, (rec, i) in zip(rows[1:], [(r, i) for r in rep["checks"] for i in range(3)]):
        assert float(row[4]) == rec["residuals"][i]
        assert [float(v) for v in row[2:4]] == rep["points"]["base"][i]
        assert float(row[5]) == rec["tolerance"]
    assert [r[6] for r in rows[1:4]] == ["true", "true", "false"]


def test_csv_header_only(tmp_path):
    cfg = validate({"instance": SF, "checks": [], "points": {"count": 2}})
    rep = run(cfg, timestamp=False)
    path = tmp_path / "e.csv"
    emit_csv(rep, path)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 1 and rows[0][0] == "check"


def test_cli_missing_kind(tmp_path, capsys):
    p = write(tmp_path, {"instance": {"m": 2, "c": 1.0}})
    assert main(["verify", str(p)]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_cli_verify_writes_outputs(tmp_path, capsys):
    p = write(tmp_path, {"instance": {"kind": "catalog", "name": "bundle_4d"}})
    out, cs = tmp_path / "rep.json", tmp_path / "rep.csv"
    code = main(["verify", str(p), "--points", "3", "--out", str(out), "--csv", str(cs), "--no-timestamp"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert "generated_at" not in rep and rep["passed"]
    assert {r["name"].split(".")[0] for r in rep["checks"]} == {"kahler", "solution", "extended", "nullity", "equivalence"}
    assert capsys.readouterr().err.startswith("PASS")
    assert cs.exists()


def test_cli_failure_exit(tmp_path):
    p = write(tmp_path, {"instance": {"kind": "catalog", "name": "orthotoric_control"}})
    assert main(["verify", str(p), "--points", "3", "--out", str(tmp_path / "o.json")]) == 1


def test_cli_bad_points(tmp_path):
    p = write(tmp_path, {"instance": SF})
    assert main(["classify", str(p), "--points", "1"]) == 2


def test_cli_construction_error(tmp_path):
    p = write(tmp_path, {"instance": {"kind": "Product", "factors": [SF], "eigenvalues": [0, 1]}})
    assert main(["classify", str(p)]) == 2

import json

import pytest

from strictgauge import catalog as cat
from strictgauge import specfile as sf
from strictgauge.cli import main

TOY = """# strictgauge geometry spec, format 1

[problem]
name = toy
chart = plane
transversal = sqrt(x^2 + y^2)

[chart plane]
coords = x, y

[metric]
g.0.0 = 1
g.1.1 = 1

[bundle]
frame.0 = -y; x
"""


@pytest.mark.parametrize("name", cat.NAMES)
def test_catalog_specs_round_trip(name):
    text = sf.export_spec(sf.spec_from_entry(cat.make(name)))
    assert sf.export_spec(sf.parse_spec(text)) == text


def test_parse_minimal_spec():
    spec = sf.parse_spec(TOY)
    assert spec.name == "toy" and spec.problem.rank == 1 and not spec.lattice
    assert len(spec.source_hash) == 64


@pytest.mark.parametrize("broken,line", [
    (TOY.replace("[metric]", "[metrik]"), 11),
    (TOY.replace("frame.0 = -y; x", "frame.0 = -y; x +"), 16),
    (TOY.replace("g.1.1 = 1", "g.1.1 1"), 13),
])
def test_parse_errors_point_at_lines(broken, line):
    with pytest.raises((sf.SpecError, ValueError)) as err:
        sf.parse_spec(broken)
    assert getattr(err.value, "line", line) == line


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_check_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, "toy.spec", TOY)
    assert main(["check", good]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["overall"] == "gauging-pass" and rep["strictness"] == "strict"
    assert "timings" not in rep
    wrong = str(tmp_path / "wrong.spec")
    assert main(["catalog", "r3_flux:wrong", "--out", wrong]) == 0
    assert main(["check", wrong]) == 1
    assert main(["check", _write(tmp_path, "bad.spec", TOY.replace("= -y; x", "= -y; x)"))]) == 2
    assert main(["check", str(tmp_path / "missing.spec")]) == 2


def test_catalog_list_and_unknown(capsys):
    assert main(["catalog", "list"]) == 0
    assert capsys.readouterr().out.split() == list(cat.NAMES)
    assert main(["catalog", "no_such_thing"]) == 2
    assert "toy_rotation" in capsys.readouterr().err


def test_reports_are_reproducible(tmp_path, capsys):
    spec = str(tmp_path / "bad.spec")
    assert main(["catalog", "r3_flux:bad", "--out", spec]) == 0
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert main(["check", spec, "--out", a]) == 0
    assert main(["check", spec, "--out", b, "--timings"]) == 0
    capsys.readouterr()
    assert main(["report-diff", a, b]) == 0
    assert capsys.readouterr().out.strip() == "identical"
    assert main(["check", spec, "--out", b, "--seed", "5"]) == 0
    assert main(["report-diff", a, b]) == 1


def test_almost_strict_catalog_check_reports_shell(tmp_path, capsys):
    rep = str(tmp_path / "r.json")
    assert main(["catalog", "su2:almost_strict", "eps=1/5", "--out", str(tmp_path / "s.spec"),
                 "--check", "--report", rep]) == 0
    data = json.loads(open(rep).read())
    rows = data["shell_profile"]["rows"]
    inside = [r["max_residual"] for r in rows if 0.1 < r["rb"] < 0.2]
    outside = [r["max_residual"] for r in rows if r["rb"] <= 0.1 or r["rb"] >= 0.2]
    assert min(inside) > 1e-6 and max(outside) < 1e-12


def test_solve_writes_artifacts(tmp_path, capsys):
    spec = str(tmp_path / "toy.spec")
    assert main(["catalog", "toy_rotation", "--lattice", "8", "--out", spec]) == 0
    out = tmp_path / "run"
    assert main(["solve", spec, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["freezing"]["verdict"] == "propagating"
    for name in ("config.csv", "history.csv", "profile.csv"):
        assert (out / name).read_text().startswith("# {")
    assert main(["solve", _write(tmp_path, "nolat.spec", TOY)]) == 2

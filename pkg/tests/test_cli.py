import json
import xml.etree.ElementTree as ET

import pytest

from perfstrip import cli
from perfstrip.cli import ConfigError, load_config, main, svg_dispersion


def run(tmp_path, *args):
    return main(list(args) + ["--set", f"output.directory={tmp_path}"])


def test_defaults_and_overrides(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[geometry]\nH = 0.3\nN = 4\n[sweep]\nbands = 3\n")
    cfg = load_config(ini, ["geometry.N=6", "output.formats=json"])
    assert cfg["geometry"]["H"] == 0.3 and cfg["geometry"]["N"] == 6
    assert cfg["sweep"]["bands"] == 3 and cfg.formats == {"json"}
    assert cli.hole_from(cfg).center == (0.0, 0.15)


@pytest.mark.parametrize("text", [
    "[geometry]\ncolour = red\n",
    "[nonsense]\nH = 1\n",
    "[geometry]\nH = abc\n",
    "[run]\ndeterministic = false\n",
    "[output]\nformats = png\n",
])
def test_bad_configs_rejected(tmp_path, text):
    ini = tmp_path / "c.ini"
    ini.write_text(text)
    with pytest.raises(ConfigError):
        load_config(ini)
    assert main(["limit", str(ini)]) == 2


def test_bad_override_exit_code(tmp_path):
    assert run(tmp_path, "limit", "--set", "geometry.nope=1") == 2
    assert run(tmp_path, "limit", "--set", "geometry.H") == 2


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for sec, keys in cli.SCHEMA.items():
        assert f"[{sec}]" in out
        for k in keys:
            assert k in out


def test_limit_outputs(tmp_path, capsys):
    assert run(tmp_path, "limit") == 0
    out = capsys.readouterr().out
    assert "opens_gap  (proven)" in out
    nodes = json.loads((tmp_path / "limit_nodes.json").read_text())["nodes"]
    status = {(round(n["eta_star"], 6), round(n["lambda_star"], 6)): n["status"] for n in nodes}
    assert status[(3.141593, 9.869604)] == "opens_gap"
    assert status[(0.0, 39.478418)] == "opens_gap"
    root = ET.parse(tmp_path / "limit_dispersion.svg").getroot()
    assert root.tag.endswith("svg")
    header = (tmp_path / "limit_dispersion.csv").read_text().splitlines()[0]
    assert header == "eta,lambda1,lambda2,lambda3,lambda4,lambda5,lambda6"


def test_limit_exceptional_height_warns(tmp_path, capsys):
    assert run(tmp_path, "limit", "--set", "geometry.H=0.5") == 0
    assert "exceptional" in capsys.readouterr().err


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["dispersion", "--set", "geometry.N=4", "--set", "fem.target_h=0.008",
            "--set", "sweep.eta_samples=9", "--set", "sweep.bands=3"]
    assert main(args + ["--set", f"output.directory={a}"]) == 0
    assert main(args + ["--set", f"output.directory={b}", "--set", "sweep.workers=3"]) == 0
    for name in ("dispersion.csv", "dispersion.json", "dispersion.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cell_constants_command(tmp_path, capsys):
    assert run(tmp_path, "cell-constants", "--set", "cell_constants.target_h=0.005") == 0
    cc = json.loads((tmp_path / "cell_constants.json").read_text())
    assert abs(cc["m2"]) <= 1e-2 * cc["m1"]
    assert capsys.readouterr().err == ""


def test_asymmetric_hole_warns(tmp_path, capsys):
    code = run(tmp_path, "cell-constants", "--set", "geometry.hole=ellipse",
               "--set", "geometry.params=0.1,0.05,0.5", "--set", "cell_constants.target_h=0.005")
    assert code == 0
    assert "not mirror symmetric" in capsys.readouterr().err


def test_hole_outside_strip_is_config_error(tmp_path):
    assert run(tmp_path, "cell-constants", "--set", "geometry.params=0.3") == 2


def test_gaps_unperforated(tmp_path, capsys):
    assert run(tmp_path, "gaps", "--set", "geometry.hole=none", "--set", "fem.target_h=0.02",
               "--set", "sweep.eta_samples=17", "--set", "sweep.bands=3") == 0
    out = capsys.readouterr().out
    assert "gap 1:" in out and "open" not in out
    data = json.loads((tmp_path / "bands_gaps.json").read_text())
    assert not any(g["open"] for g in data["gaps"])
    assert not (tmp_path / "comparison.json").exists()


def test_svg_is_valid_xml():
    text = svg_dispersion([-1, 0, 1], [[1, 0, 1], [2, 3, 2]], "a < b & c",
                          gaps=[(1.2, 1.8)], markers=[(0, 0, "circle"), (1, 2, "square")])
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")

import json

import numpy as np
import pytest

from lattice_scatter import __version__
from lattice_scatter.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from lattice_scatter.runner import ConfigError, ExperimentError, parse_config, run_experiments


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def base(**over):
    doc = {"lattice": {"preset": "square1d"}, "potential": {"c": 0.0, "rho": 0.5}, "window": [0.5, 1.5],
           "grid": {"L": 256}, "experiments": ["bands", {"name": "thresholds", "expected": [-2, 2]}]}
    doc.update(over)
    return doc


class TestConfig:
    def test_minimal(self, tmp_path):
        cfg = parse_config(write(tmp_path, base()))
        assert cfg.kernel.name == "square1d"
        assert cfg.gamma == [(0.5, 1.5)]
        np.testing.assert_allclose(cfg.thresholds, [-2, 2], atol=1e-9)
        assert cfg.window.margin == pytest.approx(0.5)
        assert [n for n, _ in cfg.experiments] == ["bands", "thresholds"]

    def test_threshold_in_window(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            parse_config(write(tmp_path, base(window=[1.9, 2.1])))
        assert info.value.field == "window"
        assert info.value.line is not None

    def test_missing_rho_names_field_and_line(self, tmp_path):
        doc = base(potential={"c": 0.2})
        with pytest.raises(ConfigError) as info:
            parse_config(write(tmp_path, doc))
        assert info.value.field == "potential.rho"
        text = (tmp_path / "cfg.json").read_text().splitlines()
        assert '"potential"' in text[info.value.line - 1]

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown preset"):
            parse_config(write(tmp_path, base(lattice={"preset": "nope"})))

    def test_unknown_experiment_parameter(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown parameters"):
            parse_config(write(tmp_path, base(experiments=[{"name": "cook", "max_slop": -1}])))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"lattice": {"preset": "square1d"},\n "potential": }')
        with pytest.raises(ConfigError) as info:
            parse_config(path)
        assert info.value.line == 2

    def test_kernel_file(self, tmp_path):
        from lattice_scatter.lattice_model import preset

        (tmp_path / "k.json").write_text(preset("square1d").to_json())
        cfg = parse_config(write(tmp_path, base(lattice={"kernel_file": "k.json"})))
        assert cfg.kernel.n == 1


class TestRunner:
    def test_hexagonal_thresholds(self, tmp_path):
        doc = {"lattice": {"preset": "hexagonal"}, "potential": {"c": 0.0, "rho": 0.5}, "window": [1.5, 2.5],
               "experiments": [{"name": "thresholds", "expected": [-3, -1, 0, 1, 3]}, "mourre"]}
        res = run_experiments(parse_config(doc), out=str(tmp_path / "out"))
        assert res["experiments"]["thresholds"]["passed"]
        assert res["experiments"]["mourre"]["metrics"]["c_star"] > 0
        assert (tmp_path / "out" / "result.json").is_file()

    def test_free_wave_operator_is_isometric(self, tmp_path):
        doc = base(experiments=[{"name": "waveop", "checkpoints": [10, 20, 30], "modifier": "identity"}])
        res = run_experiments(parse_config(doc), out=str(tmp_path / "out"))
        m = res["experiments"]["waveop"]["metrics"]
        assert m["isometry"] == pytest.approx(1.0, abs=1e-12)
        assert max(m["gaps"]) < 1e-12

    def test_curves_and_document(self, tmp_path):
        res = run_experiments(parse_config(base()), out=str(tmp_path / "out"))
        assert res["version"] == __version__
        assert res["passed"]
        assert res["experiments"]["bands"]["curves"]
        for name in res["experiments"]["bands"]["curves"]:
            assert (tmp_path / "out" / "curves" / name).is_file()

    def test_module_errors_are_recorded_or_raised(self, tmp_path):
        doc = {"lattice": {"preset": "square"}, "potential": {"c": 0.2, "rho": 0.5}, "window": [1.5, 2.5],
               "grid": {"L": 16}, "experiments": ["phase"]}
        res = run_experiments(parse_config(doc), out=str(tmp_path / "a"))
        assert not res["passed"]
        assert "NotImplementedError" in res["artifact_errors"]["phase"]
        with pytest.raises(ExperimentError):
            run_experiments(parse_config(doc), out=str(tmp_path / "b"), raise_errors=True)


class TestCli:
    def test_presets(self, capsys):
        assert main(["presets"]) == EXIT_PASS
        out = capsys.readouterr().out
        assert "hexagonal" in out and "square1d" in out

    def test_presets_json(self, capsys):
        assert main(["presets", "--json"]) == EXIT_PASS
        assert "kagome" in json.loads(capsys.readouterr().out)

    def test_run_pass(self, tmp_path, capsys):
        cfg = write(tmp_path, base())
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PASS
        assert "PASS thresholds" in capsys.readouterr().out

    def test_run_fail(self, tmp_path, capsys):
        cfg = write(tmp_path, base(experiments=[{"name": "thresholds", "expected": [-2, 2.5]}]))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_FAIL
        assert "FAIL thresholds" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, base(window=[1.9, 2.1]))
        assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
        assert "window" in capsys.readouterr().err

    def test_bad_threads(self, tmp_path):
        assert main(["run", "--config", str(write(tmp_path, base())), "--threads", "0"]) == EXIT_CONFIG

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert __version__ in capsys.readouterr().out

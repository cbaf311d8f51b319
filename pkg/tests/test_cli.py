import json

import jsonschema
import numpy as np
import pytest

from handlesurgery.asymptotics import AsymptoticOperatorSpec, spectrum, synth_tail
from handlesurgery.cli import REPORT_SCHEMAS, main


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(list(argv) + ["--out", str(out)])
    doc = json.loads(out.read_text()) if out.exists() else None
    return code, doc


def test_enumerate(two_chord_file, tmp_path, capsys):
    code, doc = run(["enumerate", "--atlas", str(two_chord_file), "--no-meta"], tmp_path)
    assert code == 0
    assert [w["word"] for w in doc["words"]] == [["a"], ["b"], ["a", "a"], ["a", "b"], ["b", "a"], ["b", "b"]]
    assert "6 words" in capsys.readouterr().out
    jsonschema.validate(doc, REPORT_SCHEMAS["enumerate"])
    assert "meta" not in doc


def test_meta_block_present_by_default(two_chord_file, tmp_path):
    _, doc = run(["enumerate", "--atlas", str(two_chord_file)], tmp_path)
    jsonschema.validate(doc, REPORT_SCHEMAS["enumerate"])
    assert set(doc["meta"]) == {"timestamp", "argv", "version"}


def test_usage_errors_exit_1(two_chord_file, capsys):
    with pytest.raises(SystemExit) as info:
        main(["enumerate", "--atlas", str(two_chord_file), "--bogus"])
    assert info.value.code == 1
    assert main(["enumerate", "--synth"]) == 1
    assert "error[config]" in capsys.readouterr().err
    assert main(["enumerate"]) == 1


def test_invalid_params_exit_1(two_chord_file, capsys):
    assert main(["strip", "--q", "22"]) == 1
    assert "error[" in capsys.readouterr().err


def test_verify_passes(two_chord_file, tmp_path):
    code, doc = run(["verify", "--atlas", str(two_chord_file), "--no-meta"], tmp_path)
    assert code == 0 and doc["pass"] is True
    jsonschema.validate(doc, REPORT_SCHEMAS["verify"])


def test_verify_fail_exit_2(two_chord_file, tmp_path):
    code, doc = run(["verify", "--atlas", str(two_chord_file), "--epsilon", "0.9", "--no-meta"], tmp_path)
    assert code == 2 and doc["pass"] is False


def test_config_precedence(two_chord_file, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epsilon": 0.45, "variant": "one-corner"}))
    _, doc = run(["strip", "--config", str(config), "--no-meta"], tmp_path, "a.json")
    assert doc["variant"] == "one-corner" and doc["corners"] == 1
    _, doc = run(["strip", "--config", str(config), "--variant", "two-corner", "--no-meta"], tmp_path, "b.json")
    assert doc["variant"] == "two-corner"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not_an_option": 1}))
    assert main(["strip", "--config", str(bad)]) == 1


def test_find_commands(two_chord_file, tmp_path):
    code, doc = run(["find-chords", "--atlas", str(two_chord_file), "--no-meta"], tmp_path, "c.json")
    assert code == 0 and len(doc["chords"]) == 6
    jsonschema.validate(doc, REPORT_SCHEMAS["find-chords"])
    code, doc = run(["find-orbits", "--atlas", str(two_chord_file), "--no-meta"], tmp_path, "o.json")
    assert code == 0 and len(doc["orbits"]) == 5
    jsonschema.validate(doc, REPORT_SCHEMAS["find-orbits"])


def test_spectrum_and_fit_tail(tmp_path):
    code, doc = run(["spectrum", "--no-meta"], tmp_path, "s.json")
    assert code == 0
    assert np.allclose(doc["eigenvalues"], -2 * np.pi * np.arange(1, 5), atol=1e-8)
    jsonschema.validate(doc, REPORT_SCHEMAS["spectrum"])
    res = spectrum(AsymptoticOperatorSpec.constant(np.zeros((2, 2)), 64), 4)
    tail = synth_tail(res, [0.0, 0.7], np.linspace(0, 0.25, 26), np.arange(64) / 64)
    tail_path = tmp_path / "tail.json"
    tail_path.write_text(json.dumps(tail.to_document()))
    code, doc = run(["fit-tail", "--tail", str(tail_path), "--no-meta"], tmp_path, "f.json")
    assert code == 0 and doc["leading_index"] == 2
    jsonschema.validate(doc, REPORT_SCHEMAS["fit-tail"])
    assert main(["fit-tail"]) == 1


def test_strip_and_probe(tmp_path):
    code, doc = run(["strip", "--no-meta"], tmp_path, "s.json")
    assert code == 0 and doc["corners"] == 2
    assert doc["holomorphicity_residual"] <= 1e-10
    jsonschema.validate(doc, REPORT_SCHEMAS["strip"])
    code, doc = run(["probe", "--no-meta"], tmp_path, "p.json")
    assert code == 0 and doc["pass"] is True and doc["kernel"]["dimension"] == 0
    jsonschema.validate(doc, REPORT_SCHEMAS["probe"])
    code, doc = run(["probe", "--boundary", "matching", "--no-meta"], tmp_path, "m.json")
    assert code == 2 and doc["pass"] is False


def test_threshold(two_chord_file, tmp_path):
    code, doc = run(["threshold", "--atlas", str(two_chord_file), "--no-meta"], tmp_path)
    assert code == 0
    assert doc["bracket"][0] <= doc["epsilon0"] <= doc["bracket"][1]
    jsonschema.validate(doc, REPORT_SCHEMAS["threshold"])


def test_verify_deterministic_across_jobs(tmp_path):
    argv = ["verify", "--synth", "--seed", "3", "--no-meta"]
    main(argv + ["--jobs", "1", "--out", str(tmp_path / "one.json")])
    main(argv + ["--jobs", "3", "--out", str(tmp_path / "three.json")])
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "three.json").read_bytes()

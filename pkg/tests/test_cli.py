import json

import pytest

from insectcam import nnet, pnm
from insectcam.cli import main
from insectcam.config_loader import load_config, merge_overrides
from insectcam.errors import ConfigError, DataError, StageError
from insectcam.validate import validate_document

APIS_ONLY = ",".join(["1"] + ["0"] * 15)


def _run_json(capsys, argv):
    code = main([*argv, "--json"])
    out = capsys.readouterr().out
    return code, json.loads(out) if code == 0 else None


def test_merge_overrides_dotted_keys():
    base = {"train": {"epochs": 5, "learning_rate": 0.1}, "seed": 1}
    merged = merge_overrides(base, {"train.epochs": 2, "seed": None, "detect.margin": 0.1})
    assert merged == {"train": {"epochs": 2, "learning_rate": 0.1}, "seed": 1, "detect": {"margin": 0.1}}
    assert base["train"]["epochs"] == 5


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- a\n- b\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")
    (tmp_path / "broken.yaml").write_text("seed: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.yaml")
    (tmp_path / "empty.yaml").write_text("", encoding="utf-8")
    assert load_config(tmp_path / "empty.yaml") == {}


def test_schema_error_names_the_field():
    with pytest.raises(ConfigError, match="detect/connectivity"):
        validate_document(
            {"seed": 0, "out_dir": "x", "taxonomy": "t", "classify": {"net_spec": "n"}, "detect": {"connectivity": 6}},
            "run_config",
        )


def test_exit_codes_follow_error_kind():
    assert ConfigError("x").exit_code == 2
    assert DataError("x").exit_code == 3
    assert StageError("classify", DataError("x")).exit_code == 4


def test_rollup_command(capsys):
    code, result = _run_json(capsys, ["rollup", "--probs", APIS_ONLY])
    assert code == 0
    assert result["decision"]["name"] == "Apis mellifica"
    assert result["decision"]["rank"] == "species"
    assert result["rollup"]["order"]["Hymenoptera"] == pytest.approx(1.0)


def test_rollup_rejects_bad_mass(capsys):
    assert main(["rollup", "--probs", "0.5,0.4"]) == 3
    assert main(["rollup", "--probs", "a,b"]) == 3


def test_missing_config_exits_2(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert main(["trigger"]) == 2


def test_optics_command(capsys):
    code, result = _run_json(capsys, ["optics"])
    assert code == 0
    assert {"magnification", "depth_of_field", "supplement"} <= set(result)
    code, faster = _run_json(capsys, ["optics", "--speed", "2.0"])
    assert faster["supplement"]["exposure_blur_object"] > result["supplement"]["exposure_blur_object"]


def test_simulate_trigger_detect_chain(tmp_path, capsys, monkeypatch):
    out = tmp_path / "sim"
    code, sim = _run_json(capsys, ["simulate", "--out", str(out), "--frames", "12", "--width", "64", "--height", "48"])
    assert code == 0
    assert sim["flash_indices"] == [8, 9, 10]

    code, events = _run_json(capsys, ["trigger", "--frames-dir", str(out / "frames")])
    assert code == 0
    assert events == [{"trigger_index": 8, "selected_indices": [8, 9, 10]}]
    sidecar = json.loads((out / "transit.json").read_text(encoding="utf-8"))
    assert len(sidecar["timestamps"]) == len(sidecar["luma"]) == 12
    assert sidecar["timestamps"] == sorted(sidecar["timestamps"])
    code, from_sidecar = _run_json(capsys, ["trigger", "--luma", sim["sidecar"]])
    assert from_sidecar == events
    (tmp_path / "luma.json").write_text(json.dumps(sidecar["luma"]), encoding="utf-8")
    (tmp_path / "luma.txt").write_text("\n".join(map(str, sidecar["luma"])) + "\n", encoding="utf-8")
    for name in ("luma.json", "luma.txt"):
        code, found = _run_json(capsys, ["trigger", "--luma", str(tmp_path / name)])
        assert found == events

    code, det = _run_json(capsys, [
        "detect",
        "--image", str(out / "frames" / "f009.ppm"),
        "--mask", str(out / "masks" / "f009.pgm"),
        "--resize", "32",
        "--out", str(tmp_path / "det"),
    ])
    assert code == 0
    assert det["square"]["w"] == det["square"]["h"]
    assert pnm.read_rgb(tmp_path / "det" / "f009_crop.ppm").shape == (32, 32, 3)

    monkeypatch.chdir(tmp_path)
    code, det = _run_json(capsys, ["detect", "--image", str(out / "frames" / "f009.ppm"), "--threshold", "95"])
    assert code == 0
    assert (tmp_path / "runs" / "detect" / "f009_crop.ppm").exists()
    assert det["crop"].endswith("f009_crop.ppm")


def test_split_command(tmp_path, capsys):
    lines = [f"a{i}.ppm\tApis mellifica" for i in range(10)] + [f"b{i}.ppm\tVespa crabro" for i in range(5)]
    (tmp_path / "m.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    code, result = _run_json(capsys, ["split", "--manifest", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "s")])
    assert code == 0
    assert result["counts"]["Apis mellifica"] == {"train": 6, "val": 2, "test": 2}
    assert result["counts"]["Vespa crabro"] == {"train": 3, "val": 1, "test": 1}
    written = (tmp_path / "s" / "manifest_split.tsv").read_text(encoding="utf-8").splitlines()
    assert len(written) == 15 and all(line.split("\t")[3] in ("train", "val", "test") for line in written)


def test_predict_command(tmp_path, capsys, config_dir):
    spec_path = config_dir / "netspec_desk.json"
    params = nnet.save_params(nnet.init_params(nnet.load_spec(spec_path), 0), tmp_path / "p.bin")
    main(["simulate", "--out", str(tmp_path / "sim"), "--frames", "12", "--width", "64", "--height", "48"])
    capsys.readouterr()
    code, result = _run_json(capsys, [
        "predict",
        "--spec", str(spec_path),
        "--params", str(params),
        "--image", str(tmp_path / "sim" / "frames" / "f009.ppm"),
    ])
    assert code == 0
    assert sum(result["probs"].values()) == pytest.approx(1.0)
    assert result["decision"]["rank"] in ("species", "genus", "family", "order")


def test_compare_command(tmp_path, capsys):
    def metrics(recalls, acc):
        return {"top1_accuracy": acc, "per_class": [{"species": s, "recall": r} for s, r in zip("xy", recalls)]}

    (tmp_path / "a.json").write_text(json.dumps(metrics([1.0, 0.5], 0.75)), encoding="utf-8")
    (tmp_path / "b.json").write_text(json.dumps(metrics([0.5, 1.0], 0.8)), encoding="utf-8")
    code, report = _run_json(capsys, ["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")])
    assert code == 0
    assert report["worst_regression"] == "x"
    assert report["overall_delta"] == pytest.approx(0.05)
    assert main(["compare", str(tmp_path / "a.json"), str(tmp_path / "missing.json")]) == 3


def test_rollup_accepts_json_arrays(tmp_path, capsys):
    inline = json.dumps([1.0] + [0.0] * 15)
    code, result = _run_json(capsys, ["rollup", "--probs", inline])
    assert code == 0 and result["decision"]["name"] == "Apis mellifica"
    (tmp_path / "p.json").write_text(inline, encoding="utf-8")
    code, from_file = _run_json(capsys, ["rollup", "--probs", f"@{tmp_path / 'p.json'}"])
    assert from_file == result


def test_malformed_inputs_exit_3(tmp_path):
    (tmp_path / "truncated.json").write_text("[0.5, 0.5,", encoding="utf-8")
    (tmp_path / "words.json").write_text('["a", "b"]', encoding="utf-8")
    (tmp_path / "empty.txt").write_text("", encoding="utf-8")
    (tmp_path / "m.json").write_text("{not json", encoding="utf-8")
    (tmp_path / "list.json").write_text("[1, 2]", encoding="utf-8")
    assert main(["rollup", "--probs", f"@{tmp_path / 'truncated.json'}"]) == 3
    assert main(["rollup", "--probs", "[0.5, 0.5"]) == 3
    assert main(["rollup", "--probs", f"@{tmp_path / 'words.json'}"]) == 3
    assert main(["trigger", "--luma", str(tmp_path / "empty.txt")]) == 3
    assert main(["trigger", "--luma", str(tmp_path / "truncated.json")]) == 3
    assert main(["compare", str(tmp_path / "m.json"), str(tmp_path / "m.json")]) == 3
    assert main(["compare", str(tmp_path / "list.json"), str(tmp_path / "list.json")]) == 3


def test_optics_flags_reach_the_report(capsys):
    _, base = _run_json(capsys, ["optics"])
    _, short = _run_json(capsys, ["optics", "--flash-duration", "0.00025"])
    assert short["blur_object"] == pytest.approx(base["blur_object"] / 2)
    _, coc = _run_json(capsys, ["optics", "--circle-of-confusion", str(2 * base["supplement"]["circle_of_confusion"])])
    assert coc["depth_of_field"] == pytest.approx(2 * base["depth_of_field"])
    _, green = _run_json(capsys, ["optics", "--wavelength", "0.55", "--sensor-width", "6.287", "--exposure-time", "0.0235"])
    assert green["magnification"] == pytest.approx(base["magnification"])
    assert main(["optics", "--sensor-width", "100"]) != 0

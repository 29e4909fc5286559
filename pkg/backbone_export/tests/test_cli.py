"""Command-line behavior and exit codes."""

import json

from b4export.cli import EXIT_OK, EXIT_USAGE, EXIT_WEIGHTS, main


def test_export_flow(tmp_path, capsys):
    model_path = tmp_path / "backbone.onnx"
    meta_path = tmp_path / "backbone.json"
    code = main(["--tap", "2", "--weights", "random", "--seed", "5",
                 "--out", str(model_path), "--meta", str(meta_path)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "efficientnet-b4-b2-rand5" in captured.out
    assert "32x95x95" in captured.out
    assert model_path.exists()
    meta = json.loads(meta_path.read_text())
    assert meta["kind"] == "onnx"
    assert meta["output_shape"] == [32, 95, 95]


def test_invalid_tap_exits_with_weights_code(tmp_path, capsys):
    code = main(["--tap", "9", "--weights", "random",
                 "--out", str(tmp_path / "x.onnx"),
                 "--meta", str(tmp_path / "x.json")])
    captured = capsys.readouterr()
    assert code == EXIT_WEIGHTS
    assert captured.err.startswith("error:")


def test_bad_flag_exits_usage(capsys):
    assert main(["--tap", "not-a-number"]) == EXIT_USAGE
    assert main(["--frobnicate"]) == EXIT_USAGE
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
    capsys.readouterr()

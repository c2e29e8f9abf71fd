import os

import pytest

from ddrstack import init_ddrstack
from dispatch import dispatch_command
from main import main
from nn import save_checkpoint


def _run(capsys, *argv):
    code = main(["--quiet", *argv])
    return code, capsys.readouterr()


def test_gen_is_byte_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        code, out = _run(capsys, "gen", "--out-dir", str(tmp_path / name), "--n", "2",
                         "--counts", "10,5,5,5", "--gen-n", "4", "--seed", "9")
        assert code == 0
        assert "train.rpn\t10\tn=2" in out.out
    for name in ("train.rpn", "val.rpn", "test.rpn", "gen4.rpn"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("counts", ["10,5", "ten,5,5", "10,0,5"])
def test_bad_counts_exit_2(tmp_path, capsys, counts):
    code, out = _run(capsys, "gen", "--out-dir", str(tmp_path / "d"), "--counts", counts)
    assert code == 2
    assert out.err


def test_missing_required_flag_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--quiet", "exec", "--program", "count"])
    assert info.value.code == 2


def test_train_on_missing_data_exits_3(tmp_path, capsys):
    code, out = _run(capsys, "train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "run"))
    assert code == 3
    assert "DataError" in out.err


def test_train_eval_report_pipeline(tiny_data, tmp_path, capsys):
    run = tmp_path / "tiny"
    code, _ = _run(capsys, "train", "--data", tiny_data, "--out", str(run), "--hidden", "4",
                   "--epochs", "1", "--batch", "32")
    assert code == 0

    eval_csv = run / "eval_test.csv"
    code, out = _run(capsys, "eval", "--ckpt", str(run / "best.ddrc"),
                     "--data", os.path.join(tiny_data, "test.rpn"), "--out", str(eval_csv))
    assert code == 0
    assert "overall L1" in out.out
    assert eval_csv.read_text().splitlines()[0] == "subproblem,l1"

    code, _ = _run(capsys, "report", "--runs", str(run), "--out", str(tmp_path / "report"))
    assert code == 0
    assert (tmp_path / "report" / "curves_subproblem.csv").exists()


def test_eval_missing_checkpoint_exits_3(tiny_data, tmp_path, capsys):
    code, _ = _run(capsys, "eval", "--ckpt", str(tmp_path / "absent.ddrc"),
                   "--data", os.path.join(tiny_data, "test.rpn"))
    assert code == 3


def test_exec_prints_answer(tmp_path, capsys):
    scene = tmp_path / "scene.txt"
    scene.write_text("cube red small rubber 0.1 0.2\ncube red large metal 0.5 0.6\nsphere blue small metal 0.9 0.3\n")
    code, out = _run(capsys, "exec", "--scene", str(scene),
                     "--program", "filter_color_red fork filter_shape_sphere union count")
    assert code == 0
    assert out.out.strip() == "3"


def test_exec_program_errors_exit_3(tmp_path, capsys):
    scene = tmp_path / "scene.txt"
    scene.write_text("cube red small rubber 0.1 0.2\n")
    code, out = _run(capsys, "exec", "--scene", str(scene), "--program", "fork count")
    assert code == 3
    assert "StructureError" in out.err


def test_params_prints_counts(capsys):
    code, out = _run(capsys, "params", "--model", "ddrstack", "--hidden", "32")
    assert code == 0
    assert "16993 parameters" in out.out
    code, out = _run(capsys, "params", "--model", "baseline", "--hidden", "128", "--layers", "2")
    assert "265089 parameters" in out.out


def test_params_unknown_model_exits_2(capsys):
    code, _ = _run(capsys, "params", "--model", "gru")
    assert code == 2


def test_unknown_command_dispatch():
    assert dispatch_command("fly", {}).return_code == 2


def test_eval_vocabulary_mismatch_exits_3(tiny_data, tmp_path, capsys):
    ckpt = str(tmp_path / "wrong.ddrc")
    save_checkpoint(ckpt, init_ddrstack(0, 4).named_parameters(),
                    {"model": "ddrstack", "hidden": 4, "layers": 1, "vocab": 14})
    code, out = _run(capsys, "eval", "--ckpt", ckpt, "--data", os.path.join(tiny_data, "test.rpn"))
    assert code == 3
    assert "VocabularyMismatchError" in out.err

import json

import pytest

from hypermsg import cli, harness


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestCodes:
    def test_list(self, capsys):
        code, out, _ = run(capsys, "codes", "list")
        assert code == 0
        assert "bch-63-51" in out and "hamming-7-4" in out


class TestErrors:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["sweep", "--frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_names_path(self, capsys, tmp_path):
        missing = tmp_path / "nowhere.toml"
        code, _, err = run(capsys, "sweep", "--config", str(missing))
        assert code == 1 and str(missing) in err

    def test_bad_toml(self, capsys, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("code = \n")
        code, _, err = run(capsys, "sweep", "--config", str(path))
        assert code == 1 and "cannot parse" in err

    def test_code_required(self, capsys, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        code, _, err = run(capsys, "sweep", "--config", str(path))
        assert code == 1 and "code is required" in err

    def test_unknown_code(self, capsys):
        code, _, err = run(capsys, "sweep", "--code", "golay-24-12")
        assert code == 1 and "golay-24-12" in err


class TestSweep:
    def test_toml_config_and_csv(self, capsys, tmp_path):
        cfg = tmp_path / "s.toml"
        cfg.write_text('code = "hamming-7-4"\nsnr_db = [2.0, 4.0]\nmin_bit_errors = 20\n'
                       'variants = ["uncoded", "bp"]\n')
        out_csv = tmp_path / "s.csv"
        code, _, err = run(capsys, "sweep", "--config", str(cfg), "--out", str(out_csv))
        assert code == 0 and "dB" in err
        config, rows = harness.read_sweep_csv(out_csv)
        assert config.snr_db == (2.0, 4.0) and len(rows) == 4

    def test_flags_override_json(self, capsys, tmp_path):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"code": "bch-15-7", "snr_db": [1.0], "min_bit_errors": 10}))
        code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--code", "hamming-7-4",
                           "--variants", "bp", "--snr", "3,5", "--seed", "4")
        assert code == 0
        lines = out.strip().splitlines()
        assert [ln.split(",")[:2] for ln in lines] == [["bp", "3.0"], ["bp", "5.0"]]

    def test_rerun(self, capsys, tmp_path):
        out_csv = tmp_path / "s.csv"
        run(capsys, "sweep", "--code", "hamming-7-4", "--snr", "3", "--out", str(out_csv))
        code, out, _ = run(capsys, "sweep", "--rerun", str(out_csv))
        assert code == 0
        rows = harness.read_sweep_csv(out_csv)[1]
        assert out.splitlines()[0].split(",")[3] == rows[0]["bit_errors"]


class TestCompare:
    def test_compare(self, capsys, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('code = "hamming-7-4"\nsnr_db = [4.0]\nmin_bit_errors = 20\n'
                       '[a]\nvariant = "uncoded"\n[b]\nvariant = "bp"\n')
        code, out, _ = run(capsys, "compare", "--config", str(cfg), "--out", str(tmp_path / "c.csv"))
        assert code == 0 and "4.00" in out
        assert (tmp_path / "c.csv").read_text().startswith("# config ")

    def test_compare_needs_both_tables(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"code": "hamming-7-4", "a": {"variant": "bp"}}))
        code, _, err = run(capsys, "compare", "--config", str(cfg))
        assert code == 1 and "'a' and 'b'" in err


class TestTrainAndCheck:
    def test_train_writes_artifacts(self, capsys, tmp_path):
        cfg = tmp_path / "t.toml"
        cfg.write_text('code = "hamming-7-4"\nvariant = "hyper_damped"\ndamping = 0.5\n'
                       '[train]\nsteps = 3\nbatch_size = 4\n[hyper]\nf_hidden = [4]\ng_hidden = [2]\n')
        out = tmp_path / "m.npz"
        code, stdout, _ = run(capsys, "train", "--config", str(cfg), "--out", str(out))
        assert code == 0
        assert out.exists() and out.with_suffix(".loss.csv").exists()
        assert json.loads(stdout)["steps_recorded"] == 3

    def test_train_rejects_plain_bp(self, capsys, tmp_path):
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"code": "hamming-7-4", "variant": "bp"}))
        code, _, err = run(capsys, "train", "--config", str(cfg))
        assert code == 1 and "cannot train" in err

    def test_gradcheck(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--count", "5")
        assert code == 0 and out.startswith("5/5 passed")

    def test_gin_train_and_eval(self, capsys, tmp_path):
        cfg = tmp_path / "g.toml"
        cfg.write_text('[data]\nsizes = [4, 5]\nper_size = 2\n'
                       '[model]\nhidden = 4\nf_hidden = [4]\ng_hidden = [2]\nhead_hidden = 4\n'
                       '[train]\nsteps = 2\nbatch_size = 4\n')
        out = tmp_path / "g.npz"
        code, stdout, _ = run(capsys, "gin-train", "--config", str(cfg), "--out", str(out))
        assert code == 0 and "test accuracy" in stdout
        code, stdout, _ = run(capsys, "gin-eval", str(out))
        assert code == 0 and stdout.startswith("accuracy")

    def test_gin_eval_missing(self, capsys, tmp_path):
        code, _, err = run(capsys, "gin-eval", str(tmp_path / "none.npz"))
        assert code == 1 and "none.npz" in err

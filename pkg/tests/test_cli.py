"""End-to-end tests for the command-line interface, run in process through
main(argv)."""

import json

import pytest

from cmrecon.cli import main

TINY = {
    "data": {"count": 3, "size": 8, "accel": 2.0, "acs": 2},
    "model": {"base_channels": 2, "depth": 2},
    "train": {"epochs": 1, "batch_size": 2},
    "bench": {"kinds": ["none", "simam"], "seeds": [0], "test_count": 2},
}


@pytest.fixture()
def tiny_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def _gen(tmp_path, tiny_cfg, name="ds"):
    out = tmp_path / name
    rc = main(["gen", "--config", tiny_cfg, "--out", str(out)])
    assert rc == 0
    return out


class TestGen:
    def test_writes_pairs_manifest_and_resolved_config(self, tmp_path,
                                                       tiny_cfg, capsys):
        out = _gen(tmp_path, tiny_cfg)
        assert len(list(out.glob("*.ten"))) == 6
        assert (out / "manifest.json").exists()
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["data"]["count"] == 3
        assert resolved["train"]["epochs"] == 1  # defaults filled in
        assert "wrote 3 pairs" in capsys.readouterr().out

    def test_flags_override_config_file(self, tmp_path, tiny_cfg):
        out = tmp_path / "ds5"
        assert main(["gen", "--config", tiny_cfg, "--count", "5",
                     "--out", str(out)]) == 0
        assert len(list(out.glob("*_input.ten"))) == 5
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["data"]["count"] == 5

    def test_invalid_value_exits_1(self, tmp_path, tiny_cfg, capsys):
        rc = main(["gen", "--config", tiny_cfg, "--count", "0",
                   "--out", str(tmp_path / "bad")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_key_exits_1(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"data": {"sizee": 8}}))
        rc = main(["gen", "--config", str(p), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "sizee" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval_then_maps(self, tmp_path, tiny_cfg, capsys):
        ds = _gen(tmp_path, tiny_cfg)
        run = tmp_path / "run"
        assert main(["train", "--config", tiny_cfg, "--data", str(ds),
                     "--out", str(run)]) == 0
        assert (run / "checkpoint" / "manifest.json").exists()
        assert (run / "loss.csv").read_text().startswith("step,loss")
        assert (run / "resolved_config.json").exists()

        ev = tmp_path / "eval"
        assert main(["eval", "--config", tiny_cfg,
                     "--checkpoint", str(run / "checkpoint"),
                     "--data", str(ds), "--out", str(ev)]) == 0
        out = capsys.readouterr().out
        assert "ssim=" in out and "zero-filled" in out
        metrics = (ev / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "id,psnr,mse,ssim"
        assert len(metrics) == 4
        agg = (ev / "aggregate.csv").read_text().splitlines()
        assert agg[0] == "method,params_overhead,psnr,mse,ssim"
        assert len(agg) == 3  # model row + zero-filled row

        maps = tmp_path / "maps"
        assert main(["export-maps", "--checkpoint", str(run / "checkpoint"),
                     "--data", str(ds), "--out", str(maps)]) == 0
        assert len(list(maps.glob("*.pgm"))) == 9

    def test_missing_checkpoint_exits_1(self, tmp_path, tiny_cfg, capsys):
        ds = _gen(tmp_path, tiny_cfg)
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope"),
                   "--data", str(ds), "--out", str(tmp_path / "ev")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestParams:
    def test_prints_overhead(self, tiny_cfg, capsys):
        assert main(["params", "--config", tiny_cfg,
                     "--attention", "simam"]) == 0
        out = capsys.readouterr().out
        assert "attention=simam" in out
        assert "attention_overhead=0" in out

    def test_unknown_attention_exits_1(self, tiny_cfg, capsys):
        assert main(["params", "--config", tiny_cfg,
                     "--attention", "sparkle"]) == 1
        assert "sparkle" in capsys.readouterr().err


class TestBench:
    def test_bench_materializes_data_and_writes_table(self, tmp_path,
                                                      tiny_cfg, capsys):
        out = tmp_path / "b" / "bench.csv"
        assert main(["bench", "--config", tiny_cfg, "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        table = out.read_text()
        assert table.splitlines()[0] == ("method,parameters,"
                                         "computational_overhead,psnr,mse,ssim")
        assert table in printed
        base = out.with_suffix("")
        assert (tmp_path / "b" / "bench_runs.csv").exists()
        assert (tmp_path / "b" / "bench_summary.json").exists()
        assert (tmp_path / "b" / "bench_config.json").exists()
        assert (base.parent / "bench_data" / "train" / "manifest.json").exists()
        test_man = json.loads((base.parent / "bench_data" / "test" /
                               "manifest.json").read_text())
        assert test_man["count"] == 2  # bench.test_count, not data.count

    def test_rerun_is_byte_identical(self, tmp_path, tiny_cfg):
        first = tmp_path / "r1" / "bench.csv"
        second = tmp_path / "r2" / "bench.csv"
        assert main(["bench", "--config", tiny_cfg, "--out", str(first)]) == 0
        assert main(["bench", "--config", tiny_cfg, "--out", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()
        assert (tmp_path / "r1" / "bench_summary.json").read_bytes() == \
            (tmp_path / "r2" / "bench_summary.json").read_bytes()

    def test_reuses_existing_datasets(self, tmp_path, tiny_cfg):
        tr = _gen(tmp_path, tiny_cfg, "tr")
        te = _gen(tmp_path, tiny_cfg, "te")
        out = tmp_path / "bench.csv"
        assert main(["bench", "--config", tiny_cfg, "--out", str(out),
                     "--train-data", str(tr), "--test-data", str(te)]) == 0
        assert not (tmp_path / "bench_data").exists()

    def test_half_specified_data_pair_exits_1(self, tmp_path, tiny_cfg,
                                              capsys):
        rc = main(["bench", "--config", tiny_cfg,
                   "--out", str(tmp_path / "b.csv"),
                   "--train-data", str(tmp_path)])
        assert rc == 1
        assert "together" in capsys.readouterr().err

    def test_non_csv_out_exits_1(self, tiny_cfg, tmp_path, capsys):
        rc = main(["bench", "--config", tiny_cfg,
                   "--out", str(tmp_path / "bench.txt")])
        assert rc == 1
        assert ".csv" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["teleport"])
        assert e.value.code == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["gen", "--frobnicate", "1", "--out", "x"])
        assert e.value.code == 2

    def test_missing_required_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["train", "--out", "x"])  # --data required
        assert e.value.code == 2

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--help"])
        assert e.value.code == 0
        out = capsys.readouterr().out
        for name in ("gen", "train", "eval", "bench", "params", "export-maps"):
            assert name in out

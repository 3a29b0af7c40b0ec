import os

import numpy as np
import pytest

from roadtraj.cli import main, read_config_file, read_window_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    code = main([
        "synth", "--topology", "grid", "--width", "5", "--height", "5",
        "--n-trajectories", "30", "--traj-length", "14", "--length-jitter", "4",
        "--seed", "3", "--out-dir", str(out),
    ])
    assert code == 0
    return out


class TestNetworkCommands:
    def test_stats_on_grid_reports_zero_revision(self, capsys, synth_dir):
        code, out, _ = run(
            capsys, "network", "stats",
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"), "--k", "8",
        )
        assert code == 0
        assert "revision_rate: 0.000000" in out
        assert "out_degree_histogram:" in out

    def test_build_writes_labeled_edges(self, capsys, synth_dir, tmp_path):
        labeled = tmp_path / "labeled.csv"
        code, out, _ = run(
            capsys, "network", "build",
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--k", "8", "--out", str(labeled),
        )
        assert code == 0
        header = labeled.read_text().splitlines()[0]
        assert header == "id,source,target,heading,interval,direction"

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "network", "stats",
            "--nodes", str(tmp_path / "nope.csv"),
            "--edges", str(tmp_path / "nope2.csv"),
        )
        assert code == 2

    def test_usage_error_exit_code(self, capsys):
        code, _, err = run(capsys, "network", "stats", "--nodes")
        assert code == 1


class TestSynthCommand:
    def test_outputs_parse_back(self, synth_dir):
        from roadtraj.cli import build_network
        from roadtraj.codec import load_trajectory_file

        net, report = build_network(
            str(synth_dir / "nodes.csv"), str(synth_dir / "edges.csv"), 8
        )
        assert len(net.nodes) == 25
        corpus = load_trajectory_file(str(synth_dir / "trajectories.txt"), net)
        assert len(corpus) == 30

    def test_seeded_rerun_is_byte_identical(self, synth_dir, tmp_path, capsys):
        out2 = tmp_path / "again"
        code, _, _ = run(
            capsys, "synth", "--topology", "grid", "--width", "5", "--height", "5",
            "--n-trajectories", "30", "--traj-length", "14", "--length-jitter", "4",
            "--seed", "3", "--out-dir", str(out2),
        )
        assert code == 0
        for name in ("nodes.csv", "edges.csv", "trajectories.txt"):
            assert (synth_dir / name).read_bytes() == (out2 / name).read_bytes()


class TestEncodeCommand:
    def test_encode_writes_rows(self, capsys, synth_dir, tmp_path):
        out = tmp_path / "encoded.csv"
        code, _, _ = run(
            capsys, "encode",
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "traj_id,time_slot,weather,driver_id,nodes,directions"
        assert len(lines) == 31
        fields = lines[1].split(",")
        nodes = fields[4].split()
        dirs = fields[5].split()
        assert len(nodes) == len(dirs) + 1


class TestConfigFile:
    def test_parse_and_reject_unknown(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 3\nlr0 = 0.4\n# comment\nb 32\n")
        values = read_config_file(str(cfg))
        assert values == {"epochs": 3, "lr0": 0.4, "b": 32}
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense = 1\n")
        from roadtraj.errors import ConfigError

        with pytest.raises(ConfigError, match="unknown config key"):
            read_config_file(str(bad))


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("trainrun")
    cfg = out / "run.cfg"
    cfg.write_text(
        "m = 8\nd = 8\nb = 16\ns = 2\n"
        "q_time = 4\nq_weather = 4\nq_individual = 4\n"
        "l_in = 4\nl_out = 2\n"
        "batch_size = 4\nslide = 4\nepochs = 3\ndropout = 0.0\nseed = 5\n"
    )
    code = main([
        "train",
        "--nodes", str(synth_dir / "nodes.csv"),
        "--edges", str(synth_dir / "edges.csv"),
        "--trajectories", str(synth_dir / "trajectories.txt"),
        "--val-trajectories", str(synth_dir / "trajectories.txt"),
        "--config", str(cfg),
        "--out-dir", str(out / "run"),
    ])
    assert code == 0
    return out


class TestTrainPredictEvaluate:
    def test_train_artifacts(self, trained_dir):
        run_dir = trained_dir / "run"
        assert (run_dir / "log.csv").exists()
        assert (run_dir / "checkpoint.ckpt").exists()
        lines = (run_dir / "log.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 epochs

    def test_flag_overrides_config_file(self, capsys, synth_dir, trained_dir, tmp_path):
        cfg = trained_dir / "run.cfg"
        out = tmp_path / "override"
        code, stdout, _ = run(
            capsys, "train",
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--config", str(cfg), "--epochs", "1",
            "--out-dir", str(out),
        )
        assert code == 0
        lines = (out / "log.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_predict_then_evaluate(self, capsys, synth_dir, trained_dir, tmp_path):
        pred_dir = tmp_path / "pred"
        code, _, _ = run(
            capsys, "predict",
            "--checkpoint", str(trained_dir / "run" / "checkpoint.ckpt"),
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--slide", "4",
            "--out-dir", str(pred_dir),
        )
        assert code == 0
        preds = read_window_file(str(pred_dir / "predictions.txt"))
        truths = read_window_file(str(pred_dir / "truth.txt"))
        assert len(preds) == len(truths) > 0

        report_csv = tmp_path / "report.csv"
        detail_csv = tmp_path / "detail.csv"
        code, out, _ = run(
            capsys, "evaluate",
            "--predictions", str(pred_dir / "predictions.txt"),
            "--truth", str(pred_dir / "truth.txt"),
            "--out", str(report_csv), "--detail", str(detail_csv),
        )
        assert code == 0
        assert "AMR" in out
        header = report_csv.read_text().splitlines()[0]
        assert header.startswith("count,DE,AMR,MR1")
        assert len(detail_csv.read_text().strip().splitlines()) == len(preds) + 1

    def test_evaluate_truth_against_itself_is_perfect(self, capsys, synth_dir,
                                                      trained_dir, tmp_path):
        pred_dir = tmp_path / "pred2"
        run(
            capsys, "predict",
            "--checkpoint", str(trained_dir / "run" / "checkpoint.ckpt"),
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--slide", "4",
            "--out-dir", str(pred_dir),
        )
        code, out, _ = run(
            capsys, "evaluate",
            "--predictions", str(pred_dir / "truth.txt"),
            "--truth", str(pred_dir / "truth.txt"),
        )
        assert code == 0
        assert "DE:  0.0000" in out
        assert "AMR: 100.0000" in out

    def test_train_determinism_byte_identical(self, capsys, synth_dir, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code, _, _ = run(
                capsys, "train",
                "--nodes", str(synth_dir / "nodes.csv"),
                "--edges", str(synth_dir / "edges.csv"),
                "--trajectories", str(synth_dir / "trajectories.txt"),
                "--m", "8", "--d", "8", "--b", "16",
                "--q-time", "4", "--q-weather", "4", "--q-individual", "4",
                "--l-in", "4", "--l-out", "2",
                "--batch-size", "4", "--slide", "4", "--epochs", "2",
                "--seed", "9", "--out-dir", str(out),
            )
            assert code == 0
            outs.append(out)
        assert (outs[0] / "log.csv").read_bytes() == (outs[1] / "log.csv").read_bytes()
        assert (outs[0] / "checkpoint.ckpt").read_bytes() == \
            (outs[1] / "checkpoint.ckpt").read_bytes()


class TestBaselineAndAttention:
    def test_baseline_mc(self, capsys, synth_dir, tmp_path):
        out = tmp_path / "mc"
        code, _, _ = run(
            capsys, "baseline-mc",
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--train-trajectories", str(synth_dir / "trajectories.txt"),
            "--test-trajectories", str(synth_dir / "trajectories.txt"),
            "--l-in", "4", "--l-out", "2", "--slide", "4",
            "--out-dir", str(out),
        )
        assert code == 0
        preds = read_window_file(str(out / "predictions.txt"))
        truths = read_window_file(str(out / "truth.txt"))
        assert len(preds) == len(truths) > 0

    def test_attn_dump(self, capsys, synth_dir, trained_dir, tmp_path):
        out = tmp_path / "attn"
        code, _, _ = run(
            capsys, "attn-dump",
            "--checkpoint", str(trained_dir / "run" / "checkpoint.ckpt"),
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--slide", "4", "--limit", "3",
            "--out-dir", str(out),
        )
        assert code == 0
        spatial = (out / "spatial.csv").read_text().strip().splitlines()
        temporal = (out / "temporal.csv").read_text().strip().splitlines()
        assert spatial[0] == "window_id,phase,step,node,neighbor,weight"
        assert temporal[0] == "window_id,out_step,w1,w2,w3,w4"
        # temporal matrix is l_out x l_in per window
        assert len(temporal) == 1 + 3 * 2
        # spatial weights per (window, phase, step, node) sum to one
        groups = {}
        for line in spatial[1:]:
            wid, phase, step, node, neighbor, weight = line.split(",")
            groups.setdefault((wid, phase, step, node), 0.0)
            groups[(wid, phase, step, node)] += float(weight)
        assert groups
        for key, total in groups.items():
            assert abs(total - 1.0) < 1e-5, key


class TestEndToEndConsistency:
    def test_pipeline_reproduces_trainer_val_metrics(self, capsys, synth_dir,
                                                     trained_dir, tmp_path):
        # the trainer's last logged val_AMR came from the same windows the
        # predict+evaluate pipeline scores, so the numbers must agree
        log_lines = (trained_dir / "run" / "log.csv").read_text().strip().splitlines()
        last = log_lines[-1].split(",")
        logged_amr = float(last[2])
        logged_de = float(last[3])

        pred_dir = tmp_path / "pred"
        run(
            capsys, "predict",
            "--checkpoint", str(trained_dir / "run" / "checkpoint.ckpt"),
            "--nodes", str(synth_dir / "nodes.csv"),
            "--edges", str(synth_dir / "edges.csv"),
            "--trajectories", str(synth_dir / "trajectories.txt"),
            "--slide", "4",
            "--out-dir", str(pred_dir),
        )
        report_csv = tmp_path / "report.csv"
        code, _, _ = run(
            capsys, "evaluate",
            "--predictions", str(pred_dir / "predictions.txt"),
            "--truth", str(pred_dir / "truth.txt"),
            "--out", str(report_csv),
        )
        assert code == 0
        row = report_csv.read_text().strip().splitlines()[1].split(",")
        assert float(row[2]) == pytest.approx(logged_amr, abs=1e-4)
        assert float(row[1]) == pytest.approx(logged_de, abs=1e-4)

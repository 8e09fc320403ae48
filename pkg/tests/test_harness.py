"""Tests for the experiment harness, plotting, and the CLI."""

import csv
import json
import os

import numpy as np
import pytest

from swarmplan.cli import main
from swarmplan.harness import (
    rolling_mean,
    run_cell,
    simulate_command,
    summarize,
    sweep_command,
    training_curves_csv,
    write_csv,
)
from swarmplan.plotting import heatmap_svg, line_chart_svg
from swarmplan.world import SimParams


def small_params(n=5):
    return SimParams(n_agents=n, width=4.0, horizon_steps=15)


class TestCsvFormatting:
    def test_write_csv_formats_floats_compactly(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a", "b"], [[1.0, 0.3333333333333333], [2, "text"]])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "a,b"
        assert lines[1] == "1,0.3333333333"
        assert lines[2] == "2,text"

    def test_rolling_mean_constant_preserved(self):
        assert np.allclose(rolling_mean(np.full(20, 3.5), 9), 3.5)

    def test_rolling_mean_window_and_edges(self):
        vals = np.arange(10.0)
        out = rolling_mean(vals, 3)
        assert out[0] == pytest.approx(0.5)        # mean of [0, 1]
        assert out[5] == pytest.approx(5.0)        # mean of [4, 5, 6]
        assert out[-1] == pytest.approx(8.5)       # mean of [8, 9]

    def test_rolling_mean_shorter_than_window(self):
        out = rolling_mean([1.0, 2.0], 9)
        assert np.allclose(out, 1.5)


class TestRunCell:
    def test_results_in_episode_order_and_deterministic(self):
        p = small_params()
        a = run_cell("dhop:0", p, base_seed=5, episodes=4)
        b = run_cell("dhop:0", p, base_seed=5, episodes=4)
        assert [r.seed_key for r in a] == [(5, 0), (5, 1), (5, 2), (5, 3)]
        assert [r.discounted_coverage for r in a] == [r.discounted_coverage for r in b]

    def test_summarize_matches_manual_mean(self):
        p = small_params()
        results = run_cell("lsap", p, base_seed=1, episodes=3)
        s = summarize("lsap", results)
        assert s["policy"] == "lsap"
        assert s["episodes"] == 3
        assert s["discounted_coverage_mean"] == pytest.approx(
            np.mean([r.discounted_coverage for r in results]))
        assert s["collisions_events_mean"] == pytest.approx(
            np.mean([r.collisions_events for r in results]))


class TestSimulateCommand:
    def test_outputs_and_determinism(self, tmp_path):
        p = small_params()
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            simulate_command(["lsap", "dhop:0"], p, base_seed=3, episodes=2,
                             out_dir=out)
        assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()
        assert (out1 / "coverage_vs_time.csv").read_bytes() == \
            (out2 / "coverage_vs_time.csv").read_bytes()

        with open(out1 / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["policy"] for r in rows] == ["lsap", "dhop:0"]

        with open(out1 / "coverage_vs_time.csv") as fh:
            curve = list(csv.DictReader(fh))
        assert len(curve) == p.horizon_steps + 1
        assert set(curve[0]) == {"step", "lsap_mean", "lsap_std",
                                 "dhop:0_mean", "dhop:0_std"}

    def test_traces_written_per_policy(self, tmp_path):
        p = small_params(n=3)
        simulate_command(["capt"], p, base_seed=0, episodes=2,
                         out_dir=tmp_path / "out")
        tdir = tmp_path / "out" / "traces_capt"
        assert sorted(os.listdir(tdir)) == ["episode000.jsonl", "episode001.jsonl"]
        rec = json.loads((tdir / "episode000.jsonl").read_text().split("\n")[0])
        assert rec["step"] == 0

    def test_no_traces_flag(self, tmp_path):
        p = small_params(n=3)
        simulate_command(["capt"], p, base_seed=0, episodes=1,
                         out_dir=tmp_path / "out", write_traces=False)
        assert not (tmp_path / "out" / "traces_capt").exists()


class TestSweepCommand:
    def test_matrix_shapes_and_files(self, tmp_path):
        out = tmp_path / "sweep"
        mats = sweep_command("dhop:0", n_values=[4, 6], densities=[0.5, 1.0],
                             base_seed=0, episodes=1, out_dir=out,
                             sim_overrides={"horizon_steps": 10})
        assert mats["coverage"].shape == (2, 2)
        for fname in ("coverage_matrix.csv", "collisions_per100_step_pair.csv",
                      "collisions_per100_events.csv", "coverage_heatmap.svg",
                      "collisions_heatmap.svg"):
            assert (out / fname).exists()
        with open(out / "coverage_matrix.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["rho", "N=4", "N=6"]
        assert len(rows) == 3

    def test_per100_normalization(self, tmp_path):
        out = tmp_path / "sweep"
        mats = sweep_command("dhop:0", n_values=[4], densities=[1.0],
                             base_seed=7, episodes=2, out_dir=out,
                             sim_overrides={"horizon_steps": 10})
        p = SimParams.from_density(4, 1.0, horizon_steps=10)
        results = run_cell("dhop:0", p, base_seed=7, episodes=2)
        s = summarize("dhop:0", results)
        assert mats["per100_step_pair"][0, 0] == pytest.approx(
            s["collisions_step_pair_mean"] * 100.0 / 4)


class TestTrainingCurves:
    def test_csv_columns_and_smoothing(self, tmp_path):
        metrics = [{"epoch": e, "coverage": 0.5, "collisions_step_pair": 40.0}
                   for e in range(12)]
        path = tmp_path / "curves.csv"
        training_curves_csv(metrics, path, window=9, per_agent_divisor=20.0)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert float(rows[0]["coverage_smoothed"]) == pytest.approx(0.5)
        assert float(rows[0]["collisions_per_agent_smoothed"]) == pytest.approx(2.0)

    def test_empty_metrics_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            training_curves_csv([], tmp_path / "x.csv")


class TestPlotting:
    def series(self):
        return [{"label": "a", "x": [0, 1, 2], "mean": [0.0, 0.5, 1.0],
                 "std": [0.1, 0.1, 0.1]},
                {"label": "b", "x": [0, 1, 2], "mean": [1.0, 0.5, 0.0]}]

    def test_line_chart_is_valid_svg_and_deterministic(self):
        a = line_chart_svg(self.series(), "x", "y", "title")
        b = line_chart_svg(self.series(), "x", "y", "title")
        assert a == b
        assert a.startswith("<svg")
        assert a.rstrip().endswith("</svg>")
        assert "title" in a and "a" in a and "b" in a

    def test_line_chart_rejects_empty(self):
        with pytest.raises(ValueError):
            line_chart_svg([], "x", "y")
        with pytest.raises(ValueError):
            line_chart_svg([{"label": "a", "x": [], "mean": []}], "x", "y")

    def test_heatmap_annotations_and_determinism(self):
        vals = [[0.0, 0.5], [1.0, 0.25]]
        a = heatmap_svg(vals, ["r0", "r1"], ["c0", "c1"], "N", "rho", "t")
        assert a == heatmap_svg(vals, ["r0", "r1"], ["c0", "c1"], "N", "rho", "t")
        for v in ("0.5", "0.25"):
            assert v in a

    def test_heatmap_rejects_empty(self):
        with pytest.raises(ValueError):
            heatmap_svg([], [], [], "x", "y")


class TestCli:
    def test_simulate_subcommand(self, tmp_path):
        cfgfile = tmp_path / "cfg.toml"
        cfgfile.write_text(
            "[sim]\nn_agents = 4\nwidth = 4.0\nhorizon_steps = 10\n")
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(cfgfile), "--policy", "dhop:0",
                   "--policy", "capt", "--episodes", "2", "--out", str(out),
                   "--seed", "3", "--no-traces"])
        assert rc == 0
        assert (out / "summary.csv").exists()
        assert (out / "coverage_vs_time.csv").exists()

    def test_plot_subcommand_lines(self, tmp_path):
        csv_path = tmp_path / "c.csv"
        write_csv(csv_path, ["step", "a_mean", "a_std"],
                  [[0, 0.1, 0.0], [1, 0.4, 0.1], [2, 0.9, 0.05]])
        out = tmp_path / "c.svg"
        rc = main(["plot", str(csv_path), "--kind", "lines", "--out", str(out),
                   "--title", "cov"])
        assert rc == 0
        text = out.read_text()
        assert text.startswith("<svg") and "</svg>" in text

    def test_plot_subcommand_heatmap(self, tmp_path):
        csv_path = tmp_path / "m.csv"
        write_csv(csv_path, ["rho", "N=4", "N=8"], [[0.5, 0.7, 0.8], [1.0, 0.6, 0.65]])
        out = tmp_path / "m.svg"
        rc = main(["plot", str(csv_path), "--kind", "heatmap", "--out", str(out)])
        assert rc == 0
        assert out.read_text().startswith("<svg")

    def test_train_il_subcommand_smoke(self, tmp_path):
        cfgfile = tmp_path / "cfg.toml"
        cfgfile.write_text(
            "[sim]\nn_agents = 4\nwidth = 3.0\nhorizon_steps = 10\n\n"
            "[train]\nepochs = 1\nepisodes_per_epoch = 1\nsteps_per_epoch = 2\n"
            "batch_size = 16\neval_episodes = 1\nfeatures = 8\nnum_layers = 1\n"
            "taps = 2\nmlp_hidden = 8\nmlp_depth = 2\n")
        out = tmp_path / "run"
        rc = main(["train-il", "--config", str(cfgfile), "--out", str(out),
                   "--seed", "0"])
        assert rc == 0
        assert (out / "final.ckpt").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "curves.csv").exists()

    def test_train_rl_subcommand_smoke(self, tmp_path):
        # Reuse an IL checkpoint as the pretrained actor.
        cfgfile = tmp_path / "cfg.toml"
        cfgfile.write_text(
            "[sim]\nn_agents = 4\nwidth = 3.0\nhorizon_steps = 10\n\n"
            "[train]\nepochs = 1\nepisodes_per_epoch = 1\nsteps_per_epoch = 2\n"
            "batch_size = 16\neval_episodes = 1\nfeatures = 8\nnum_layers = 1\n"
            "taps = 2\nmlp_hidden = 8\nmlp_depth = 2\n")
        il_out = tmp_path / "il"
        main(["train-il", "--config", str(cfgfile), "--out", str(il_out),
              "--seed", "0"])

        rl_cfg = tmp_path / "rl.toml"
        rl_cfg.write_text(
            "[sim]\nn_agents = 4\nwidth = 3.0\nhorizon_steps = 10\n\n"
            "[train]\ntotal_epochs = 1\nepisodes_per_epoch = 1\n"
            "steps_per_epoch = 2\nbatch_size = 16\neval_episodes = 1\n")
        rl_out = tmp_path / "rl"
        rc = main(["train-rl", "--config", str(rl_cfg),
                   "--checkpoint", str(il_out / "final.ckpt"),
                   "--out", str(rl_out), "--seed", "0"])
        assert rc == 0
        assert (rl_out / "final.ckpt").exists()

    def test_sweep_subcommand(self, tmp_path):
        cfgfile = tmp_path / "cfg.toml"
        cfgfile.write_text("[sim]\nhorizon_steps = 8\n")
        out = tmp_path / "sweep"
        rc = main(["sweep", "--config", str(cfgfile), "--policy", "dhop:0",
                   "--agents", "4", "6", "--densities", "1.0",
                   "--episodes", "1", "--out", str(out), "--seed", "0"])
        assert rc == 0
        assert (out / "coverage_matrix.csv").exists()
        assert (out / "coverage_heatmap.svg").exists()

    def test_unknown_policy_fails(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["simulate", "--policy"])  # missing value

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from _support import HARNESS, harness_config
from divdrive import losses
from divdrive.binio import FormatError
from divdrive.harness import cli, sweep
from divdrive.harness import train as tr
from divdrive.harness.config import DEFAULT_CONFIG, ConfigError, RunConfig
from divdrive.harness.dataset import Dataset, DatasetMismatch, collect
from divdrive.harness.evaluate import EPISODE_COLUMNS, PER_KM_COLUMNS
from divdrive.losses import LossWeights
from divdrive.model import Policy, load_checkpoint, read_checkpoint
from divdrive.sim.infractions import KINDS

REGRESSION_CKPT = Path(__file__).parent / "data" / "regression.ckpt"


@pytest.fixture(scope="module")
def cfg():
    return harness_config()


@pytest.fixture(scope="module")
def collected(cfg):
    return collect(cfg)


@pytest.fixture(scope="module")
def ds(collected):
    return collected[0]


@pytest.fixture(scope="module")
def trained(cfg, ds, tmp_path_factory):
    return tr.train(cfg, ds, tmp_path_factory.mktemp("train"))


def write_config(path, **changes):
    d = harness_config(**changes).to_dict()
    path.write_text(yaml.safe_dump(d, sort_keys=False))
    return str(path)


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_shipped_default(self):
        assert RunConfig.load().run_hash == RunConfig().run_hash
        assert RunConfig.load(DEFAULT_CONFIG).to_dict() == RunConfig().to_dict()

    def test_yaml_round_trip(self, tmp_path):
        cfg = harness_config(**{"loss.div": 0.0, "optim.lr": 0.01})
        cfg.save(tmp_path / "c.yaml")
        back = RunConfig.load(tmp_path / "c.yaml")
        assert back.to_dict() == cfg.to_dict() and back.run_hash == cfg.run_hash

    def test_missing_sections_default(self):
        assert RunConfig.from_dict({}).to_dict() == RunConfig().to_dict()
        assert RunConfig.from_dict(None).run_hash == RunConfig().run_hash

    def test_replace_dotted(self, cfg):
        c = cfg.replace(**{"loss.div": 0.0, "seed": 4})
        assert c.loss.div == 0.0 and c.seed == 4 and cfg.loss.div == 5e-5

    def test_hash_scopes(self, cfg):
        assert cfg.replace(out="elsewhere").run_hash == cfg.run_hash
        assert cfg.replace(**{"optim.lr": 0.1}).run_hash != cfg.run_hash
        runs = cfg.replace(**{"evaluate.runs": 5, "controller.w_turn": 0.5})
        assert runs.train_hash == cfg.train_hash and runs.run_hash != cfg.run_hash
        twin = cfg.replace(**{"loss.div": 0.0})
        assert twin.data_hash == cfg.data_hash and twin.train_hash != cfg.train_hash
        assert cfg.replace(**{"collect.seeds": [1]}).data_hash != cfg.data_hash

    @pytest.mark.parametrize("bad", [
        {"colour": 1},
        {"optim": {"learning_rate": 1}},
        {"optim": {"lr": -1.0}},
        {"loss": {"div": -0.1}},
        {"routes": "straight_lead"},
        {"interpret": {"quantile": 1.0}},
        {"penalties": {"speeding": 0.5}},
        {"evaluate": {"runs": 0}},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)

    def test_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "missing.yaml")
        (tmp_path / "bad.yaml").write_text("seed: [1,\n")
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "bad.yaml")
        (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "list.yaml")

    def test_unknown_route(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"routes": ["nowhere"]}).world_configs()


class TestDataset:
    def test_frame_arithmetic(self, cfg, collected):
        ds, clean, noisy = collected
        assert not noisy and len(clean) == 2
        assert all(len(r.frames) == math.ceil(r.steps / cfg.collect.frame_stride) for r in clean)
        assert len(ds) == ds.header["frames"] == sum(len(r.frames) for r in clean)

    def test_stride_one_frame_per_step(self, cfg):
        ds, clean, _ = collect(cfg.replace(**{"routes": ["straight_lead"], "collect.frame_stride": 1}))
        assert len(ds) == clean[0].steps

    def test_deterministic_bytes(self, cfg, ds, tmp_path):
        again, _, _ = collect(cfg)
        assert ds.save(tmp_path / "a") == again.save(tmp_path / "b")

    def test_round_trip(self, cfg, ds, tmp_path):
        ds.save(tmp_path / "d")
        back = Dataset.load(tmp_path / "d", expected_data_hash=cfg.data_hash)
        assert back.header == ds.header
        for k in ("obs", "meas", "action", "waypoints", "speed", "value", "features", "future", "episode", "step"):
            assert np.array_equal(getattr(back, k), getattr(ds, k))

    def test_observation_decoding(self, ds):
        obs = ds.observations(np.arange(3))
        assert obs.shape == (3, 5, 16, 16) and obs.min() >= 0 and obs.max() <= 1

    def test_hash_mismatch(self, cfg, ds, tmp_path):
        ds.save(tmp_path / "d")
        with pytest.raises(DatasetMismatch):
            Dataset.load(tmp_path / "d", expected_data_hash=cfg.replace(**{"collect.seeds": [7]}).data_hash)

    def test_truncated(self, ds, tmp_path):
        data = ds.save(tmp_path / "d")
        (tmp_path / "d").write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError):
            Dataset.load(tmp_path / "d")


class TestTraining:
    def test_artifacts(self, cfg, trained):
        out = trained.best_path.parent
        assert header(out / "train_steps.csv") == list(tr.STEP_COLUMNS)
        assert header(out / "train_epochs.csv") == list(tr.EPOCH_COLUMNS)
        extra = read_checkpoint(trained.best_path)[0]["extra"]
        assert extra["train_hash"] == cfg.train_hash and extra["lambda_div"] == cfg.loss.div
        assert read_checkpoint(trained.last_path)[0]["run_hash"] == cfg.run_hash

    def test_log_identity(self, cfg, trained):
        steps = rows(trained.best_path.parent / "train_steps.csv")
        assert steps
        for r in steps:
            br = {k: float(r[k]) for k in ("traj", "ctrl", "sub", "div")}
            assert losses.recombine(br, cfg.loss) == float(r["total"])

    def test_same_seed_bit_identical(self, cfg, ds, trained, tmp_path):
        again = tr.train(cfg, ds, tmp_path)
        for name in ("best.ckpt", "last.ckpt", "train_steps.csv", "train_epochs.csv"):
            assert (tmp_path / name).read_bytes() == (trained.best_path.parent / name).read_bytes()
        assert again.best_val == trained.best_val

    def test_other_seed_differs(self, cfg, ds, trained, tmp_path):
        tr.train(cfg.replace(seed=2), ds, tmp_path)
        assert (tmp_path / "best.ckpt").read_bytes() != trained.best_path.read_bytes()

    def test_zero_weights_leave_parameters(self, cfg, ds, tmp_path):
        zero = {f"loss.{k}": 0.0 for k in LossWeights().to_dict()}
        c = cfg.replace(**zero)
        res = tr.train(c, ds, tmp_path)
        init = Policy(c.model, seed=c.seed).named_params()
        for k, p in load_checkpoint(res.last_path).named_params().items():
            assert np.array_equal(p.data, init[k].data), k

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_single_sample_overfit(self, cfg, ds, seed):
        h = np.array(tr.overfit(Policy(cfg.model, seed=seed), ds, [5], cfg.loss, 500, lr=3e-2, grad_clip=5.0))
        assert h.min() < 0.01 * h[0]
        # the L1 term chatters step to step; after warmup the 50-step means fall monotonically
        blocks = h[200:].reshape(-1, 50).mean(axis=1)
        assert np.all(np.diff(blocks) < 0)

    def test_non_finite_names_component(self, cfg, ds, tmp_path):
        import copy

        bad = copy.copy(ds)
        bad.waypoints = ds.waypoints.copy()
        bad.waypoints[:] = np.nan
        with pytest.raises(tr.NonFiniteLoss) as exc:
            tr.train(cfg, bad, tmp_path)
        assert exc.value.component == "traj" and "epoch 1" in str(exc.value)

    def test_check_finite(self):
        with pytest.raises(tr.NonFiniteLoss, match="div"):
            tr.check_finite({"traj": 1.0, "ctrl": 1.0, "sub": 1.0, "div": math.inf, "total": 1.0}, 1, 1)

    def test_zero_epochs_saves_initial(self, cfg, ds, tmp_path):
        res = tr.train(cfg.replace(**{"optim.epochs": 0}), ds, tmp_path)
        assert res.best_epoch == 0 and res.best_path.exists() and res.last_path.exists()

    def test_split(self):
        tr_idx, val = tr.split_indices(25, 10)
        assert list(val) == [0, 10, 20] and len(tr_idx) == 22

    def test_shipped_regression_checkpoint(self, cfg, ds):
        m = load_checkpoint(REGRESSION_CKPT, expected_model_config=cfg.model)
        stored = m.checkpoint_header["extra"]
        assert stored["train_hash"] == cfg.train_hash
        _, val = tr.split_indices(len(ds), cfg.optim.val_every)
        got = tr.evaluate_loss(m, ds, val, cfg.loss, cfg.optim.batch_size)["total"]
        assert abs(got - stored["val_loss"]) < 1e-9


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A collected and trained output directory driven through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    conf = write_config(root / "run.yaml", out=str(root / "out"))
    assert run_cli("collect", "--config", conf) == 0
    assert run_cli("train", "--config", conf) == 0
    return root, conf


class TestCli:
    def test_collect_output(self, workspace, capsys, tmp_path):
        root, conf = workspace
        assert run_cli("collect", "--config", conf, "--out", tmp_path) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("frames ") and lines[1].startswith("expert DS ")
        assert (tmp_path / "dataset.bin").read_bytes() == (root / "out" / "dataset.bin").read_bytes()

    def test_collect_floor_warning(self, tmp_path, capsys):
        conf = write_config(tmp_path / "c.yaml", **{"routes": ["straight_lead"], "collect.ds_floor": 101.0})
        assert run_cli("collect", "--config", conf, "--out", tmp_path / "o") == 0
        assert "below the floor" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [
        [],
        ["drive"],
        ["train", "--bogus"],
        ["evaluate", "--runs", "zero"],
        ["evaluate", "--runs", "0"],
        ["sweep", "--lambda-div-grid", ","],
        ["sweep", "--lambda-div-grid", "0.1,-1"],
        ["interpret", "--checkpoint", "a", "--checkpoint", "b", "--checkpoint", "c"],
    ])
    def test_usage_errors(self, argv, workspace, capsys):
        _, conf = workspace
        extra = ["--config", conf] if argv and argv[0] in cli.COMMANDS else []
        assert run_cli(*argv, *extra) == cli.EXIT_USAGE

    def test_bad_config_is_usage_error(self, tmp_path):
        (tmp_path / "c.yaml").write_text("optim: {lr: -1}\n")
        assert run_cli("collect", "--config", tmp_path / "c.yaml") == cli.EXIT_USAGE
        assert run_cli("collect", "--config", tmp_path / "nope.yaml") == cli.EXIT_USAGE

    def test_runtime_errors(self, workspace, tmp_path):
        root, conf = workspace
        assert run_cli("train", "--config", conf, "--out", tmp_path) == cli.EXIT_RUNTIME
        (tmp_path / "junk.ckpt").write_bytes(b"\0" * 64)
        assert run_cli("evaluate", "--config", conf, "--checkpoint", tmp_path / "junk.ckpt") == cli.EXIT_RUNTIME
        assert run_cli("evaluate", "--config", conf, "--checkpoint", tmp_path / "none.ckpt") == cli.EXIT_RUNTIME

    def test_checkpoint_config_mismatch(self, workspace):
        root, conf = workspace
        ck = root / "out" / "train" / "best.ckpt"
        assert run_cli("evaluate", "--config", conf, "--seed", 9, "--checkpoint", ck) == cli.EXIT_RUNTIME

    def test_dataset_config_mismatch(self, workspace, tmp_path):
        root, _ = workspace
        other = write_config(tmp_path / "c.yaml", **{"collect.seeds": [3]})
        assert run_cli("train", "--config", other, "--dataset", root / "out" / "dataset.bin",
                       "--out", tmp_path) == cli.EXIT_RUNTIME

    def test_seed_override(self, workspace, tmp_path):
        _, conf = workspace
        args = cli.build_parser().parse_args(["train", "--config", conf, "--seed", "7", "--out", str(tmp_path)])
        c = cli._config(args)
        assert c.seed == 7 and c.out == str(tmp_path)

    def test_module_entry_point(self):
        import subprocess
        import sys

        r = subprocess.run([sys.executable, "-m", "divdrive", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "collect" in r.stdout


class TestEvaluate:
    def test_expert_matches_collect(self, tmp_path):
        conf = write_config(tmp_path / "c.yaml", out=str(tmp_path), **{"evaluate.seeds": [0]})
        assert run_cli("collect", "--config", conf) == 0
        assert run_cli("evaluate", "--config", conf, "--checkpoint", "expert") == 0
        a = json.loads((tmp_path / "expert" / "metrics.json").read_text())
        b = json.loads((tmp_path / "evaluate" / "metrics.json").read_text())
        assert a["summary"] == b["summary"] and a["episodes"] == b["episodes"]
        csvs = [(tmp_path / d / "metrics.csv").read_bytes() for d in ("expert", "evaluate")]
        assert csvs[0] == csvs[1]

    def test_report_layout_over_runs(self, workspace, tmp_path):
        root, conf = workspace
        ck = root / "out" / "train" / "best.ckpt"
        assert run_cli("evaluate", "--config", conf, "--checkpoint", ck, "--runs", 5, "--out", tmp_path) == 0
        out = tmp_path / "evaluate"
        assert header(out / "metrics.csv") == ["metric", "mean", "std"]
        assert [r["metric"] for r in rows(out / "metrics.csv")] == ["ds", "rc", "ip"]
        assert header(out / "infractions_per_km.csv") == list(PER_KM_COLUMNS) == ["km", *KINDS]
        assert header(out / "episodes.csv") == list(EPISODE_COLUMNS)
        rep = json.loads((out / "metrics.json").read_text())
        assert rep["runs"] == 5 and len(rep["per_run"]) == 5 and len(rep["episodes"]) == 5 * 2
        assert {r["seed"] for r in rep["episodes"]} == {10, 1010, 2010, 3010, 4010}
        for e in rep["episodes"]:
            assert e["ds"] == e["rc"] * e["ip"]

    def test_report_deterministic(self, workspace, tmp_path):
        root, conf = workspace
        ck = root / "out" / "train" / "best.ckpt"
        for d in ("a", "b"):
            assert run_cli("evaluate", "--config", conf, "--checkpoint", ck, "--out", tmp_path / d) == 0
        for name in ("metrics.json", "metrics.csv", "episodes.csv", "infractions_per_km.csv"):
            a, b = ((tmp_path / d / "evaluate" / name).read_bytes() for d in ("a", "b"))
            assert a == b


class TestInterpretCommand:
    def test_zero_frames(self, workspace, tmp_path, capsys):
        root, _ = workspace
        conf = write_config(tmp_path / "c.yaml", out=str(root / "out"), **{"evaluate.seeds": []})
        ck = root / "out" / "train" / "best.ckpt"
        assert run_cli("interpret", "--config", conf, "--checkpoint", ck, "--out", tmp_path / "o") == 0
        out = tmp_path / "o" / "interpret"
        assert rows(out / "categories.csv") == [] and rows(out / "semantic.csv") == []
        assert header(out / "categories.csv") == ["category", "n_frames", "iou", "gtc", "sc"]
        summary = json.loads((out / "interpret.json").read_text())
        assert summary["frames"] == 0 and summary["models"]["model_a"]["categories"] == {}
        assert "frames 0" in capsys.readouterr().out

    def test_single_model(self, workspace):
        root, conf = workspace
        assert run_cli("interpret", "--config", conf) == 0
        out = root / "out" / "interpret"
        assert header(out / "correlation.csv") == ["signal", "rho_a", "rho_b", "n_a", "n_b", "r2", "z"]
        assert header(out / "semantic.csv") == ["class", "n_frames", "iou"]
        cats = rows(out / "categories.csv")
        assert cats and cats[-1]["category"] == "overall"
        assert len(list((out / "saliency").glob("*.pgm"))) == 2
        corr = rows(out / "correlation.csv")
        assert [r["signal"] for r in corr] == ["steer_ctrl", "steer_traj"] and all(r["rho_b"] == "" for r in corr)

    def test_twin_comparison(self, workspace, tmp_path):
        root, conf = workspace
        base = write_config(tmp_path / "b.yaml", out=str(root / "out"), **{"loss.div": 0.0})
        assert run_cli("train", "--config", base, "--dataset", root / "out" / "dataset.bin",
                       "--out", tmp_path / "b") == 0
        ck_a, ck_b = root / "out" / "train" / "best.ckpt", tmp_path / "b" / "train" / "best.ckpt"
        assert run_cli("interpret", "--config", conf, "--checkpoint", ck_a, "--checkpoint", ck_b,
                       "--out", tmp_path / "o") == 0
        out = tmp_path / "o" / "interpret"
        assert (out / "model_a" / "categories.csv").exists() and (out / "model_b" / "categories.csv").exists()
        summary = json.loads((out / "interpret.json").read_text())
        assert set(summary["models"]) == {"model_a", "model_b"}
        corr = rows(out / "correlation.csv")
        assert all(r["n_b"] != "" for r in corr)


class TestSweep:
    def test_parse_grid(self):
        assert sweep.parse_grid("0, 5e-5,0.5") == (0.0, 5e-5, 0.5)
        for bad in ("", " , ", "x", "-1", "nan"):
            with pytest.raises(ValueError):
                sweep.parse_grid(bad)

    def test_default_grid(self):
        assert sweep.DEFAULT_GRID == (5e-1, 5e-2, 5e-3, 5e-4, 5e-5, 5e-6)

    def test_single_point(self, cfg, ds, tmp_path):
        rows_, best = sweep.run_sweep(cfg, ds, (5e-5,), tmp_path)
        assert len(rows_) == 1 and rows_[0]["status"] == "ok" and best == 5e-5
        table = rows(tmp_path / "sweep.csv")
        assert header(tmp_path / "sweep.csv") == list(sweep.SWEEP_COLUMNS) and len(table) == 1

    def test_twin_grid_via_cli(self, workspace, tmp_path, capsys):
        root, conf = workspace
        assert run_cli("sweep", "--config", conf, "--lambda-div-grid", "0,5e-5",
                       "--dataset", root / "out" / "dataset.bin", "--out", tmp_path) == 0
        table = rows(tmp_path / "sweep" / "sweep.csv")
        assert [float(r["lambda_div"]) for r in table] == [0.0, 5e-5]
        assert all(r["status"] == "ok" and 0 <= float(r["ds_mean"]) <= 100 for r in table)
        info = json.loads((tmp_path / "sweep" / "sweep.json").read_text())
        assert info["best_lambda_div"] in (0.0, 5e-5)
        assert "best lambda_div" in capsys.readouterr().out

    def test_failure_isolated(self, cfg, ds, tmp_path, monkeypatch):
        real = sweep.train

        def flaky(c, *a, **k):
            if c.loss.div == 0.5:
                raise tr.NonFiniteLoss("div", " at epoch 1, step 1")
            return real(c, *a, **k)

        monkeypatch.setattr(sweep, "train", flaky)
        rows_, best = sweep.run_sweep(cfg, ds, (0.5, 0.0), tmp_path)
        assert rows_[0]["status"].startswith("failed: NonFiniteLoss") and rows_[0]["ds_mean"] is None
        assert rows_[1]["status"] == "ok" and best == 0.0
        table = rows(tmp_path / "sweep.csv")
        assert table[0]["ds_mean"] == "" and table[0]["status"].startswith("failed")

    def test_all_failed_is_runtime_error(self, workspace, tmp_path, monkeypatch):
        root, conf = workspace

        def broken(*a, **k):
            raise ValueError("boom")

        monkeypatch.setattr(sweep, "train", broken)
        assert run_cli("sweep", "--config", conf, "--lambda-div-grid", "0", "--dataset",
                       root / "out" / "dataset.bin", "--out", tmp_path) == cli.EXIT_RUNTIME


def test_harness_fixture_is_small():
    assert len(HARNESS["routes"]) == 2 and HARNESS["optim"]["epochs"] == 1

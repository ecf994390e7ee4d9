import json

import pytest
import yaml

from diffcontrol import cli
from diffcontrol.config import RunConfig, load_config, write_resolved
from diffcontrol.exceptions import InvalidConfigError

TINY = {
    "W": 16,
    "h": 4,
    "T": 8,
    "beta_end": 0.3,
    "channels": [8, 16, 32],
    "cond_dim": 32,
    "prior_hidden": 8,
    "n_demos": 3,
    "epochs_base": 1,
    "epochs_transition": 1,
    "epochs_bc": 1,
    "batches_per_epoch": 2,
    "batch_size": 8,
    "episodes": 2,
}


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump({**TINY, "data_dir": str(tmp_path / "data"), "ckpt_dir": str(tmp_path / "ckpt"),
                                 "report_dir": str(tmp_path / "report")}))
    return p


def test_precedence_flag_over_file_over_default(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"episodes": 7, "h": 6}))
    assert RunConfig().episodes == 50
    cfg = load_config(p)
    assert cfg.episodes == 7 and cfg.h == 6 and cfg.W == 48
    cfg = load_config(p, {"episodes": 3, "seed_eval": None})
    assert cfg.episodes == 3 and cfg.h == 6 and cfg.seed_eval == 0


def test_yaml_and_json_agree(tmp_path):
    (tmp_path / "a.yaml").write_text("episodes: 9\ntasks: [drum]\n")
    (tmp_path / "a.json").write_text('{"episodes": 9, "tasks": ["drum"]}')
    assert load_config(tmp_path / "a.yaml") == load_config(tmp_path / "a.json")


def test_config_rejections(tmp_path):
    (tmp_path / "bad.yaml").write_text("epocs: 3\n")
    with pytest.raises(InvalidConfigError, match="epocs"):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(InvalidConfigError):
        load_config(tmp_path / "list.yaml")
    for over in ({"h": 0}, {"tasks": ["juggle"]}, {"occlude": "0:3"}, {"bootstrap": "x"}, {"beta_end": 1.5}):
        with pytest.raises(InvalidConfigError):
            load_config(None, over)


def test_resolved_config_is_written(tmp_path):
    out = write_resolved(RunConfig(episodes=4), tmp_path / "o", "test")
    doc = json.loads(out.read_text())
    assert doc["config"]["episodes"] == 4 and doc["command"] == "test" and doc["version"]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_data_twice_is_byte_identical(tiny_cfg, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--config", str(tiny_cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    assert {"cosine/manifest.json", "drum/demo_0002.json", "scoop/manifest.json", "run_config.json"} <= set(a)
    assert cli.main(["gen-data", "--config", str(tiny_cfg), "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert _tree(tmp_path / "c")["scoop/demo_0000.json"] != a["scoop/demo_0000.json"]


def test_verify_exits_zero(tmp_path, capsys):
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert all(c["passed"] for c in json.loads((tmp_path / "verify.json").read_text()))


def test_end_to_end_tiny(tiny_cfg, tmp_path, capsys):
    c = ["--config", str(tiny_cfg)]
    assert cli.main(["gen-data", *c, "--task", "drum"]) == 0
    for stage in ("base", "transition", "bc"):
        assert cli.main(["train", *c, "--task", "drum", "--stage", stage]) == 0
    ck = tmp_path / "ckpt" / "drum"
    assert (ck / "transition.ckpt").exists() and (ck / "base_loss.csv").exists() and (ck / "run_config.json").exists()
    assert cli.main(["rollout", *c, "--task", "drum", "--policy", "diff_control", "--episodes", "1", "--occlude", "1:2"]) == 0
    assert (tmp_path / "report" / "rollouts" / "diff_control__drum" / "episode_0000.jsonl").exists()
    rc = cli.main(["benchmark", *c, "--task", "drum", "--policy", "diff_control", "--policy", "bc", "--occlude", "1:2",
                   "--plots"])
    assert rc == 0
    rows = (tmp_path / "report" / "report.jsonl").read_text().splitlines()
    assert len(rows) == 4
    assert (tmp_path / "report" / "gaps.svg").exists()
    assert "diff_control" in capsys.readouterr().out


def test_benchmark_missing_checkpoint_names_path(tiny_cfg, tmp_path, capsys):
    rc = cli.main(["benchmark", "--config", str(tiny_cfg), "--task", "scoop", "--ckpt", str(tmp_path / "nowhere")])
    assert rc == cli.EXIT_MISSING
    assert str(tmp_path / "nowhere" / "scoop" / "base.ckpt") in capsys.readouterr().err


def test_train_without_dataset(tiny_cfg, tmp_path, capsys):
    rc = cli.main(["train", "--config", str(tiny_cfg), "--task", "drum", "--stage", "base", "--data", str(tmp_path / "x")])
    assert rc == cli.EXIT_MISSING and "dataset not found" in capsys.readouterr().err


def test_transition_needs_base(tiny_cfg):
    assert cli.main(["gen-data", "--config", str(tiny_cfg), "--task", "cosine"]) == 0
    assert cli.main(["train", "--config", str(tiny_cfg), "--task", "cosine", "--stage", "transition"]) == cli.EXIT_MISSING


def test_corrupt_checkpoint_exit(tiny_cfg, tmp_path):
    c = ["--config", str(tiny_cfg)]
    cli.main(["gen-data", *c, "--task", "cosine"])
    cli.main(["train", *c, "--task", "cosine", "--stage", "base"])
    p = tmp_path / "ckpt" / "cosine" / "base.ckpt"
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0xFF
    p.write_bytes(bytes(data))
    rc = cli.main(["rollout", *c, "--task", "cosine", "--policy", "stateless_diffusion", "--episodes", "1"])
    assert rc == cli.EXIT_CORRUPT


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["gen-data", "--task", "cosine", "--n-demos", "1", "--out", str(blocker / "sub")]) == cli.EXIT_UNWRITABLE


def test_bad_config_exit(tmp_path):
    (tmp_path / "c.yaml").write_text("h: 100\n")
    assert cli.main(["verify", "--config", str(tmp_path / "c.yaml")]) == cli.EXIT_CONFIG


def test_exit_codes_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_CHECK, cli.EXIT_CONFIG, cli.EXIT_MISSING, cli.EXIT_UNWRITABLE, cli.EXIT_CORRUPT,
             cli.EXIT_DIVERGED]
    assert len(set(codes)) == len(codes)

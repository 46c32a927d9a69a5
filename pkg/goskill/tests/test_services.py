from __future__ import annotations

import csv
import json

import pytest

from goskill.errors import DatasetFormatError, RunLockedError
from goskill.main import main
from goskill.services import RunDirectory, RunManifest
from goskill.services.manifest import PhaseRecord, RunStatusEnum
from goskill.services.pipeline import POLICY_CHECKPOINT, SKILL_CHECKPOINT

from .helpers import tiny_run_config


def test_run_directory_admits_one_writer(tmp_path):
    first = RunDirectory(tmp_path, "run", lock_attempts=2, lock_wait=0.0)
    second = RunDirectory(tmp_path, "run", lock_attempts=2, lock_wait=0.0)
    with first:
        with pytest.raises(RunLockedError):
            second.acquire()
    with second:
        assert second.lock_path.exists()
    assert not second.lock_path.exists()


def test_config_snapshot_is_written_twice(tmp_path):
    directory = RunDirectory(tmp_path, "run")
    config = tiny_run_config(tmp_path)
    path = directory.write_config(config)
    assert json.loads(path.read_text())["skill"]["horizon"] == 4
    assert "skill.horizon=4" in (directory.path / "config.txt").read_text()


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest(run_id="r", command="run")
    manifest.phases["extraction"] = PhaseRecord(status=RunStatusEnum.COMPLETED, iterations=3, final_loss=0.5)
    manifest.save(tmp_path)
    loaded = RunManifest.load(tmp_path)
    assert loaded.phases["extraction"].final_loss == 0.5
    assert loaded.status is RunStatusEnum.RUNNING


def test_corrupt_manifest_is_a_format_error(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetFormatError):
        RunManifest.load(tmp_path)


# -- command line ---------------------------------------------------------
@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A collected dataset plus one tiny pretrained run, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    settings = root / "settings.json"
    settings.write_text(json.dumps(tiny_run_config(root).model_dump(mode="json")))
    mp = pytest.MonkeyPatch()
    mp.delenv("GOSKILL_RUN_ROOT", raising=False)
    assert main(["--config", str(settings), "collect"]) == 0
    assert main(["--config", str(settings), "run", "--run-id", "tiny"]) == 0
    yield root, settings
    mp.undo()


def test_collect_writes_every_task(workspace):
    root, _ = workspace
    manifest = (root / "data" / "manifest.txt").read_text()
    for task in (0, 3, 8):
        assert (root / "data" / f"task_{task}.bin").exists()
        assert any(line.startswith(f"{task} 6 ") for line in manifest.splitlines())


def test_run_produces_checkpoints_reports_and_manifest(workspace):
    root, _ = workspace
    run_dir = root / "runs" / "tiny"
    manifest = RunManifest.load(run_dir)
    assert manifest.status is RunStatusEnum.COMPLETED
    assert set(manifest.phases) == {"extraction", "assignment", "preprocess", "enhancement_policy", "evaluation"}
    assert all(phase.status is RunStatusEnum.COMPLETED for phase in manifest.phases.values())
    assert {"dataset", "encoder_codebook", "skill_checkpoint", "policy_checkpoint"} <= set(manifest.hashes)
    for name in (SKILL_CHECKPOINT, POLICY_CHECKPOINT):
        assert (run_dir / "checkpoints" / name).exists()
    for name in ("per_task.csv", "per_seed.csv", "aggregate.csv", "summary.txt", "codebook_usage.csv"):
        assert (run_dir / "reports" / name).exists()
    assert (run_dir / "assignments.csv").exists()
    assert (run_dir / "config.txt").exists()
    assert not (run_dir / ".lock").exists()
    assert manifest.metrics["errors"] == 0


def test_eval_reloads_a_trained_run(workspace):
    root, settings = workspace
    assert main(["--config", str(settings), "eval", str(root / "runs" / "tiny")]) == 0
    with (root / "runs" / "tiny" / "reports" / "eval" / "per_task.csv").open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [int(row["task_id"]) for row in rows] == [0, 3]


def test_eval_accepts_a_run_id_under_the_run_root(workspace):
    root, settings = workspace
    assert main(["--config", str(settings), "eval", "tiny"]) == 0
    assert (root / "runs" / "tiny" / "reports" / "eval" / "summary.txt").exists()
    assert main(["--config", str(settings), "eval", "no-such-run"]) == 1


def test_scripted_agent_gets_its_own_run(workspace):
    root, settings = workspace
    assert main(["--config", str(settings), "eval", "--agent", "expert"]) == 0
    manifest = RunManifest.load(root / "runs" / "expert-seed0")
    assert manifest.method == "expert"
    assert manifest.metrics["errors"] == 0
    assert (root / "runs" / "expert-seed0" / "reports" / "summary.txt").exists()


def test_baseline_finetune_and_report(workspace, tmp_path):
    root, settings = workspace
    assert main(["--config", str(settings), "baseline", "--run-id", "flat"]) == 0
    assert main(
        ["--config", str(settings), "finetune", str(root / "runs" / "tiny"), "--baseline", str(root / "runs" / "flat")]
    ) == 0
    finetuned = root / "runs" / "finetune-tiny"
    manifest = RunManifest.load(finetuned)
    assert manifest.hashes["encoder_codebook"] == RunManifest.load(root / "runs" / "tiny").hashes["encoder_codebook"]
    assert (finetuned / "reports" / "comparison.csv").exists()
    assert (root / "runs" / "finetune-tiny-baseline" / "reports" / "comparison.csv").exists()

    out = tmp_path / "report"
    runs = [root / "runs" / name for name in ("tiny", "flat", "finetune-tiny")]
    assert main(["report", *map(str, runs), str(tmp_path / "missing"), "--out", str(out)]) == 0
    for name in ("summary_per_task.csv", "summary_aggregate.csv", "returns.png", "success.png"):
        assert (out / name).exists()
    with (out / "summary_aggregate.csv").open(newline="") as handle:
        methods = {row["method"] for row in csv.DictReader(handle)}
    assert methods == {"goskill", "flat-baseline", "goskill-finetuned"}
    assert "missing" in (out / "gaps.txt").read_text()


def test_unknown_preset_exits_with_usage_error(workspace):
    _, settings = workspace
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(settings), "collect", "--preset", "perfect"])
    assert exc.value.code == 1


def test_unknown_ablation_exits_with_config_code(workspace):
    _, settings = workspace
    assert main(["--config", str(settings), "run", "--ablate", "no-decoder"]) == 1


def test_missing_dataset_exits_with_data_code(workspace, tmp_path):
    _, settings = workspace
    assert main(["--config", str(settings), "run", "--set", f'paths.dataset_dir="{tmp_path / "none"}"']) == 2

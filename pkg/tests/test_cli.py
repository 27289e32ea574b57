import json

import pytest
import yaml
from click.testing import CliRunner

from eerdkit.cli import load_config, main
from eerdkit.exporter import load_jsonl
from eerdkit.fixtures import fixture_text


@pytest.fixture()
def workspace(tmp_path):
    """A config directory with one train and one test schema plus rubrics."""
    for name in ("company", "hospital"):
        (tmp_path / f"{name}.json").write_text(fixture_text(f"{name}.json"))
        (tmp_path / f"{name}_rubrics.json").write_text(fixture_text(f"{name}_rubrics.json"))
    cfg = {
        "seed": 42,
        "schemas": {"train": ["company.json"], "test": ["hospital.json"]},
        "rubrics": {"company": "company_rubrics.json",
                    "hospital": "hospital_rubrics.json"},
        "plan": {1: 4, 2: 4, 3: 4},
        "judge_mode": "oracle",
        "rejected_source": "initial_trace",
        "output_dir": "out",
    }
    (tmp_path / "pipeline.yaml").write_text(yaml.safe_dump(cfg))
    return tmp_path


def _invoke(workspace, *args):
    runner = CliRunner()
    return runner.invoke(main, ["--config", str(workspace / "pipeline.yaml"), *args])


# --- config --------------------------------------------------------------------

def test_load_config_resolves_paths(workspace):
    cfg = load_config(str(workspace / "pipeline.yaml"))
    assert cfg["seed"] == 42
    assert cfg["output_dir"] == workspace / "out"
    assert cfg["schemas"]["train"][0].name == "company.json"


def test_missing_seed_is_a_config_error(workspace):
    doc = yaml.safe_load((workspace / "pipeline.yaml").read_text())
    del doc["seed"]
    (workspace / "pipeline.yaml").write_text(yaml.safe_dump(doc))
    result = _invoke(workspace, "forge")
    assert result.exit_code == 2
    assert "seed" in result.output


def test_missing_schema_file_is_a_config_error(workspace):
    (workspace / "company.json").unlink()
    result = _invoke(workspace, "forge")
    assert result.exit_code == 2
    assert "company.json" in result.output


def test_missing_config_file_is_a_config_error(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["--config", str(tmp_path / "nope.yaml"), "forge"])
    assert result.exit_code == 2


# --- forge ----------------------------------------------------------------------

def test_forge_writes_corpora_and_manifest(workspace):
    result = _invoke(workspace, "forge")
    assert result.exit_code == 0, result.output
    top = json.loads((workspace / "out/corpus/manifest.json").read_text())
    assert top["train_total"] == 12
    assert top["test_total"] == 12
    assert len(load_jsonl(workspace / "out/corpus/company.jsonl")) == 12


def test_forge_is_deterministic(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    first = json.loads((workspace / "out/corpus/manifest.json").read_text())
    assert _invoke(workspace, "forge").exit_code == 0
    second = json.loads((workspace / "out/corpus/manifest.json").read_text())
    assert first["schemas"]["company"]["corpus_hash"] == second["schemas"]["company"]["corpus_hash"]


def test_seed_override_changes_corpus(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    first = json.loads((workspace / "out/corpus/manifest.json").read_text())
    result = CliRunner().invoke(
        main, ["--config", str(workspace / "pipeline.yaml"), "--seed", "7", "forge"])
    assert result.exit_code == 0
    second = json.loads((workspace / "out/corpus/manifest.json").read_text())
    assert first["schemas"]["company"]["corpus_hash"] != second["schemas"]["company"]["corpus_hash"]


def test_refine_before_forge_fails_cleanly(workspace):
    result = _invoke(workspace, "refine")
    assert result.exit_code == 1
    assert "forge" in result.output


# --- refine / export / eval ------------------------------------------------------

def test_full_pipeline(workspace):
    for cmd in ("forge", "refine", "export"):
        result = _invoke(workspace, cmd)
        assert result.exit_code == 0, (cmd, result.output)

    datasets = workspace / "out/datasets"
    counts = {}
    for stem in ("reasoning_sft", "reasoning_dpo", "feedback_sft", "feedback_dpo"):
        records = load_jsonl(datasets / f"{stem}.jsonl")
        counts[stem] = len(records)
        assert records, stem
        for rec in records:
            assert rec["stage"] == ("reasoning" if stem.startswith("reasoning") else "feedback")
            if stem.endswith("sft"):
                assert set(rec) == {"prompt", "completion", "stage", "variant_id"}
            else:
                assert set(rec) == {"prompt", "chosen", "rejected", "stage", "variant_id"}
                assert rec["chosen"] != rec["rejected"]
    manifest = json.loads((datasets / "manifest.json").read_text())
    assert counts["reasoning_sft"] == (
        counts["reasoning_dpo"] + manifest["reasoning_dpo"]["dropped_degenerate"])
    assert counts["feedback_sft"] == (
        counts["feedback_dpo"] + manifest["feedback_dpo"]["dropped_degenerate"])
    assert manifest["reasoning_sft"]["train_plan"] == {
        "sft_epochs": 1, "dpo_steps": 50, "notes": ""}

    result = _invoke(workspace, "eval")
    assert result.exit_code == 0, result.output
    summary = json.loads((workspace / "out/eval/summary.json").read_text())
    # oracle self-evaluation must be perfect on the held-out split
    assert summary["precision"] == summary["recall"] == summary["f1"] == 1.0
    assert summary["report_count"] == 12

    result = _invoke(workspace, "report")
    assert result.exit_code == 0
    assert "Average" in result.output


def test_refine_resumes_from_truncated_log(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    assert _invoke(workspace, "refine").exit_code == 0
    log_path = workspace / "out/refine/company.jsonl"
    full = log_path.read_text()
    lines = full.splitlines(keepends=True)
    log_path.write_text("".join(lines[:5]))
    assert _invoke(workspace, "refine").exit_code == 0
    resumed = load_jsonl(log_path)
    assert {r["variant_id"] for r in resumed} == {r["variant_id"] for r in
                                                  (json.loads(x) for x in full.splitlines())}
    assert sorted(json.dumps(r, sort_keys=True) for r in resumed) == sorted(
        json.dumps(json.loads(x), sort_keys=True) for x in full.splitlines())


def test_refine_restarts_when_config_changes(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    assert _invoke(workspace, "refine").exit_code == 0
    result = CliRunner().invoke(
        main, ["--config", str(workspace / "pipeline.yaml"), "--seed", "9", "forge"])
    assert result.exit_code == 0
    result = CliRunner().invoke(
        main, ["--config", str(workspace / "pipeline.yaml"), "--seed", "9", "refine"])
    assert result.exit_code == 0
    state = json.loads((workspace / "out/refine/company.state.json").read_text())
    assert state["config_hash"]


def test_eval_with_predictions(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    variants = load_jsonl(workspace / "out/corpus/hospital.jsonl")
    pred_path = workspace / "preds.jsonl"
    with pred_path.open("w") as fh:
        for v in variants:
            findings = [{"category": m["type"], "focal": m["focal"]} for m in v["mistakes"]]
            fh.write(json.dumps({"variant_id": v["mistake_id"], "findings": findings}) + "\n")
    result = _invoke(workspace, "eval", "--predictions", str(pred_path))
    assert result.exit_code == 0, result.output
    summary = json.loads((workspace / "out/eval/summary.json").read_text())
    assert summary["f1"] == 1.0


def test_eval_reports_missing_prediction_ids(workspace):
    assert _invoke(workspace, "forge").exit_code == 0
    variants = load_jsonl(workspace / "out/corpus/hospital.jsonl")
    pred_path = workspace / "preds.jsonl"
    kept = variants[:-2]
    skipped = [v["mistake_id"] for v in variants[-2:]]
    with pred_path.open("w") as fh:
        for v in kept:
            fh.write(json.dumps({"variant_id": v["mistake_id"], "findings": []}) + "\n")
    result = _invoke(workspace, "eval", "--predictions", str(pred_path))
    assert result.exit_code == 1
    for vid in skipped:
        assert str(vid) in result.output


def test_report_without_eval_fails(workspace):
    result = _invoke(workspace, "report")
    assert result.exit_code == 1
    assert "eval" in result.output

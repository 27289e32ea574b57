import json

import pytest

from eerdkit.exporter import (
    AllPairsDegenerate,
    IncompleteRun,
    IoError,
    MissingReasoning,
    PromptContext,
    TaskInput,
    TrainPlan,
    build_feedback_pairs,
    build_feedback_train,
    build_preference_pairs,
    build_reasoning_sft,
    export_jsonl,
    load_jsonl,
)
from eerdkit.gateway import mock_script
from eerdkit.refine import RefinementRun, Trace


def _task(variant_id=1, split="train"):
    return TaskInput(
        variant_id=variant_id,
        schema_text='{"name": "mini"}',
        statements_text='[{"description": "d", "rubrics": ["r"]}]',
        split=split,
    )


def _run(initial="draft text", final="refined text"):
    return RefinementRun(
        initial=Trace(text=initial, claims=(), kind="reasoning"),
        final=Trace(text=final, claims=(), kind="reasoning"),
        f1_history=(0.5, 1.0),
        reward_history=(),
        f1_optimal=1.0,
        halt_reason="converged",
    )


# --- builders -------------------------------------------------------------

def test_reasoning_sft_targets_are_refined_traces():
    examples = build_reasoning_sft([(_task(1), _run()), (_task(2), _run())])
    assert len(examples) == 2
    rec = examples[0].to_record()
    assert set(rec) == {"prompt", "completion", "stage", "variant_id"}
    assert rec["completion"] == "refined text"
    assert rec["stage"] == "reasoning"
    assert rec["variant_id"] == 1
    assert _task().schema_text in rec["prompt"]
    assert _task().statements_text in rec["prompt"]


def test_reasoning_sft_rejects_empty_refinement():
    with pytest.raises(IncompleteRun):
        build_reasoning_sft([(_task(), _run(final="  "))])


def test_preference_pairs_from_initial_trace():
    pairs, dropped = build_preference_pairs(
        [(_task(1), _run()), (_task(2), _run())], rejected_source="initial_trace")
    assert dropped == 0
    rec = pairs[0].to_record()
    assert set(rec) == {"prompt", "chosen", "rejected", "stage", "variant_id"}
    assert rec["chosen"] == "refined text"
    assert rec["rejected"] == "draft text"


def test_degenerate_pairs_are_dropped_and_counted():
    corpus = [
        (_task(1), _run(initial="same", final="same")),
        (_task(2), _run()),
    ]
    pairs, dropped = build_preference_pairs(corpus, rejected_source="initial_trace")
    assert len(pairs) == 1 and dropped == 1
    # the SFT builder keeps both, so |SFT| == |DPO| + dropped
    assert len(build_reasoning_sft(corpus)) == len(pairs) + dropped


def test_all_degenerate_raises():
    corpus = [(_task(1), _run(initial="x", final="x"))]
    with pytest.raises(AllPairsDegenerate):
        build_preference_pairs(corpus, rejected_source="initial_trace")


def test_pairs_from_model_endpoint_use_gateway():
    handle = mock_script([("inference_reasoning", "model draft")])
    pairs, dropped = build_preference_pairs(
        [(_task(1), _run())], rejected_source="model_endpoint", handle=handle)
    assert pairs[0].rejected == "model draft"
    assert dropped == 0
    assert handle.transcript and handle.transcript[0]["template_id"] == "inference_reasoning"


def test_model_endpoint_requires_handle():
    with pytest.raises(ValueError):
        build_preference_pairs([(_task(), _run())], rejected_source="model_endpoint")


def test_unknown_rejected_source_rejected():
    with pytest.raises(ValueError):
        build_preference_pairs([(_task(), _run())], rejected_source="oracle")


def test_feedback_train_embeds_reasoning_segment():
    examples = build_feedback_train([(_task(1), "the aligned reasoning", "the feedback")])
    prompt = examples[0].to_record()["prompt"]
    assert "<think>the aligned reasoning</think>" in prompt
    assert examples[0].stage == "feedback"
    # stage-2 contexts must not embed a reasoning segment
    sft = build_reasoning_sft([(_task(1), _run())])
    assert "the aligned reasoning" not in sft[0].to_record()["prompt"]


def test_feedback_train_guards_split():
    corpus = [
        (_task(1, split="train"), "reasoning", "feedback"),
        (_task(2, split="test"), "reasoning", "feedback"),
    ]
    assert len(build_feedback_train(corpus)) == 1
    assert len(build_feedback_train(corpus, enforce_train_split=False)) == 2


def test_feedback_train_requires_reasoning_and_feedback():
    with pytest.raises(MissingReasoning):
        build_feedback_train([(_task(), "", "feedback")])
    with pytest.raises(MissingReasoning):
        build_feedback_train([(_task(), "reasoning", " ")])


def test_feedback_pairs_carry_reasoning_context():
    pairs, dropped = build_feedback_pairs(
        [(_task(1), "aligned reasoning", _run(initial="bad feedback", final="good feedback"))])
    assert dropped == 0
    rec = pairs[0].to_record()
    assert rec["stage"] == "feedback"
    assert "<think>aligned reasoning</think>" in rec["prompt"]
    assert rec["chosen"] == "good feedback"
    assert rec["rejected"] == "bad feedback"


# --- JSONL export ----------------------------------------------------------

def test_export_round_trip(tmp_path):
    examples = build_reasoning_sft([(_task(i), _run(final=f"trace {i}")) for i in (1, 2, 3)])
    path = tmp_path / "reasoning_sft.jsonl"
    manifest = export_jsonl(examples, path)
    assert manifest["count"] == 3
    assert manifest["stage"] == "reasoning"
    assert manifest["record_kind"] == "sft"
    assert manifest["train_plan"] == {"sft_epochs": 1, "dpo_steps": 50, "notes": ""}
    sidecar = json.loads((tmp_path / "reasoning_sft.jsonl.manifest.json").read_text())
    assert sidecar == manifest
    records = load_jsonl(path)
    assert [r["completion"] for r in records] == ["trace 1", "trace 2", "trace 3"]


def test_export_preserves_unicode_bytes(tmp_path):
    examples = build_reasoning_sft([(_task(1), _run(final="naïve — ✓ 名前"))])
    path = tmp_path / "u.jsonl"
    export_jsonl(examples, path)
    raw = path.read_text(encoding="utf-8")
    assert "naïve — ✓ 名前" in raw
    assert load_jsonl(path)[0]["completion"] == "naïve — ✓ 名前"


def test_export_refuses_empty(tmp_path):
    with pytest.raises(IoError):
        export_jsonl([], tmp_path / "empty.jsonl")


def test_export_pair_manifest_and_extra_meta(tmp_path):
    pairs, dropped = build_preference_pairs(
        [(_task(1), _run())], rejected_source="initial_trace")
    manifest = export_jsonl(pairs, tmp_path / "dpo.jsonl",
                            plan=TrainPlan(notes="offline"),
                            extra_meta={"dropped_degenerate": dropped})
    assert manifest["record_kind"] == "pair"
    assert manifest["dropped_degenerate"] == 0
    assert manifest["train_plan"]["dpo_steps"] == 50
    assert len(manifest["sha256"]) == 64


def test_export_hash_tracks_content(tmp_path):
    a = export_jsonl(build_reasoning_sft([(_task(1), _run())]), tmp_path / "a.jsonl")
    b = export_jsonl(build_reasoning_sft([(_task(1), _run())]), tmp_path / "b.jsonl")
    c = export_jsonl(build_reasoning_sft([(_task(1), _run(final="other"))]), tmp_path / "c.jsonl")
    assert a["sha256"] == b["sha256"] != c["sha256"]


def test_train_plan_validates():
    with pytest.raises(ValueError):
        TrainPlan(sft_epochs=0)
    with pytest.raises(ValueError):
        TrainPlan(dpo_steps=0)


def test_prompt_context_render_is_pure():
    ctx = PromptContext(prompt_template="inference_reasoning", task_input=_task())
    assert ctx.render() == ctx.render()

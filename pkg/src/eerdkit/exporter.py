"""Builders and JSONL export for the four alignment datasets.

Stages: reasoning SFT, reasoning DPO, feedback SFT, feedback DPO.  SFT lines
are ``{prompt, completion, stage, variant_id}``; DPO lines are
``{prompt, chosen, rejected, stage, variant_id}``.  Every exported file gets
a sibling manifest with counts, a content hash, and the training plan
metadata the downstream harness mirrors.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .prompts import TEMPLATES
from .refine import RefinementRun

log = logging.getLogger(__name__)


class IncompleteRun(Exception):
    pass


class MissingReasoning(Exception):
    pass


class AllPairsDegenerate(Exception):
    pass


@dataclass(frozen=True)
class TrainPlan:
    sft_epochs: int = 1
    dpo_steps: int = 50
    notes: str = ""

    def __post_init__(self):
        if self.sft_epochs < 1 or self.dpo_steps < 1:
            raise ValueError("train plan counts must be positive")

    def to_dict(self) -> dict:
        return {"sft_epochs": self.sft_epochs, "dpo_steps": self.dpo_steps, "notes": self.notes}


@dataclass(frozen=True)
class TaskInput:
    """One schema variant rendered for prompting."""

    variant_id: int
    schema_text: str
    statements_text: str
    split: str = "train"


@dataclass(frozen=True)
class PromptContext:
    prompt_template: str
    task_input: TaskInput
    aligned_reasoning: str | None = None

    def render(self) -> str:
        fills = {
            "relevant_statements": self.task_input.statements_text,
            "submitted_erd": self.task_input.schema_text,
        }
        if self.aligned_reasoning is not None:
            fills["reasoning"] = self.aligned_reasoning
        return TEMPLATES[self.prompt_template].fill(fills)


@dataclass(frozen=True)
class SftExample:
    context: PromptContext
    target: str
    stage: str  # reasoning | feedback

    def to_record(self) -> dict:
        return {
            "prompt": self.context.render(),
            "completion": self.target,
            "stage": self.stage,
            "variant_id": self.context.task_input.variant_id,
        }


@dataclass(frozen=True)
class PreferencePair:
    context: PromptContext
    chosen: str
    rejected: str
    stage: str

    def to_record(self) -> dict:
        return {
            "prompt": self.context.render(),
            "chosen": self.chosen,
            "rejected": self.rejected,
            "stage": self.stage,
            "variant_id": self.context.task_input.variant_id,
        }


def build_reasoning_sft(corpus: list[tuple[TaskInput, RefinementRun]]) -> list[SftExample]:
    """One example per refined item; target is the final reasoning text."""
    examples = []
    for task, run in corpus:
        if not run.final.text.strip():
            raise IncompleteRun(f"variant {task.variant_id}: refined trace is empty")
        examples.append(
            SftExample(
                context=PromptContext(prompt_template="inference_reasoning", task_input=task),
                target=run.final.text,
                stage="reasoning",
            )
        )
    return examples


def build_preference_pairs(
    corpus: list[tuple[TaskInput, RefinementRun]],
    rejected_source: str = "model_endpoint",
    stage: str = "reasoning",
    handle=None,
    cache=None,
) -> tuple[list[PreferencePair], int]:
    """Chosen is the refined trace; rejected comes from the configured source.

    ``model_endpoint`` samples the post-SFT model; ``initial_trace`` falls
    back to the unrefined generation for fully offline runs.  Degenerate
    pairs (chosen == rejected) are dropped and counted.
    """
    if rejected_source not in ("model_endpoint", "initial_trace"):
        raise ValueError(f"unknown rejected_source {rejected_source!r}")
    template = "inference_reasoning" if stage == "reasoning" else "inference_feedback"
    pairs: list[PreferencePair] = []
    dropped = 0
    for task, run in corpus:
        context = PromptContext(prompt_template=template, task_input=task)
        chosen = run.final.text
        if rejected_source == "initial_trace":
            rejected = run.initial.text
        else:
            if handle is None:
                raise ValueError("model_endpoint mode needs a gateway handle")
            from .gateway import complete

            rejected = complete(handle, TEMPLATES[template], {
                "relevant_statements": task.statements_text,
                "submitted_erd": task.schema_text,
            }, cache=cache)
        if chosen == rejected:
            dropped += 1
            continue
        pairs.append(PreferencePair(context=context, chosen=chosen, rejected=rejected, stage=stage))
    if corpus and not pairs:
        raise AllPairsDegenerate("every pair had chosen == rejected")
    if dropped:
        log.info("dropped %d degenerate preference pair(s)", dropped)
    return pairs, dropped


def build_feedback_train(
    corpus: list[tuple[TaskInput, str, str]],
    enforce_train_split: bool = True,
) -> list[SftExample]:
    """Stage-4 examples: context embeds the aligned reasoning, target is the
    refined feedback.  Items outside the train split are guarded out."""
    examples = []
    for task, aligned_reasoning, refined_feedback in corpus:
        if enforce_train_split and task.split != "train":
            continue
        if not aligned_reasoning or not aligned_reasoning.strip():
            raise MissingReasoning(f"variant {task.variant_id}: no aligned reasoning")
        if not refined_feedback or not refined_feedback.strip():
            raise MissingReasoning(f"variant {task.variant_id}: no refined feedback")
        examples.append(
            SftExample(
                context=PromptContext(
                    prompt_template="inference_feedback_with_reasoning",
                    task_input=task,
                    aligned_reasoning=aligned_reasoning,
                ),
                target=refined_feedback,
                stage="feedback",
            )
        )
    return examples


def build_feedback_pairs(
    corpus: list[tuple[TaskInput, str, RefinementRun]],
    rejected_source: str = "initial_trace",
    handle=None,
    cache=None,
) -> tuple[list[PreferencePair], int]:
    """Feedback-stage preference pairs; contexts carry the aligned reasoning."""
    pairs: list[PreferencePair] = []
    dropped = 0
    for task, aligned_reasoning, run in corpus:
        context = PromptContext(
            prompt_template="inference_feedback_with_reasoning",
            task_input=task,
            aligned_reasoning=aligned_reasoning,
        )
        chosen = run.final.text
        if rejected_source == "initial_trace":
            rejected = run.initial.text
        else:
            if handle is None:
                raise ValueError("model_endpoint mode needs a gateway handle")
            from .gateway import complete

            rejected = complete(handle, TEMPLATES["inference_feedback_with_reasoning"], {
                "relevant_statements": task.statements_text,
                "submitted_erd": task.schema_text,
                "reasoning": aligned_reasoning,
            }, cache=cache)
        if chosen == rejected:
            dropped += 1
            continue
        pairs.append(
            PreferencePair(context=context, chosen=chosen, rejected=rejected, stage="feedback")
        )
    if corpus and not pairs:
        raise AllPairsDegenerate("every pair had chosen == rejected")
    return pairs, dropped


class IoError(Exception):
    pass


def export_jsonl(
    items: list[SftExample] | list[PreferencePair],
    path: str | Path,
    plan: TrainPlan | None = None,
    extra_meta: dict | None = None,
) -> dict:
    """Write one JSON object per line plus a sibling ``.manifest.json``."""
    if not items:
        raise IoError("refusing to export an empty dataset")
    path = Path(path)
    records = [item.to_record() for item in items]
    stage_kinds = {("pair" if "chosen" in r else "sft") for r in records}
    stages = sorted({r["stage"] for r in records})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    manifest = {
        "path": path.name,
        "count": len(records),
        "stage": stages[0] if len(stages) == 1 else stages,
        "record_kind": stage_kinds.pop() if len(stage_kinds) == 1 else "mixed",
        "sha256": digest,
        "train_plan": (plan or TrainPlan()).to_dict(),
    }
    if extra_meta:
        manifest.update(extra_meta)
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return manifest


def load_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


__all__ = [
    "TaskInput", "PromptContext", "SftExample", "PreferencePair", "TrainPlan",
    "IncompleteRun", "MissingReasoning", "AllPairsDegenerate", "IoError",
    "build_reasoning_sft", "build_preference_pairs", "build_feedback_train",
    "build_feedback_pairs", "export_jsonl", "load_jsonl",
]

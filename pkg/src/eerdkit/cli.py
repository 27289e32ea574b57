"""Command-line pipeline: forge -> refine -> export -> eval -> report.

Configuration comes from a YAML file; every stage writes content-addressed
artifacts under the configured output directory so completed stages are
idempotent and interrupted stages resume where they stopped.

Exit codes: 0 ok, 1 pipeline failure, 2 config error, 3 gateway failure.
"""
from __future__ import annotations

import hashlib
import json
import random
import sys
import time
from pathlib import Path

import click
import yaml

from .exporter import (
    TaskInput,
    TrainPlan,
    build_feedback_pairs,
    build_feedback_train,
    build_preference_pairs,
    build_reasoning_sft,
    export_jsonl,
)
from .forge import MISTAKE_CATEGORIES, CorpusPlan, MistakenVariant, corpus_manifest, generate_corpus
from .gateway import GatewayError
from .model import EerdSchema, parse_schema, serialize_schema
from .oracle import (
    DiagnosticReport,
    Finding,
    MetricSummary,
    diff_schemas,
    format_category_table,
    match_findings,
    precision_recall_f1,
    summarize,
)
from .refine import (
    AuditConfig,
    ClaimAuditor,
    OracleScorer,
    Trace,
    claim_markup,
    claims_to_findings,
    extract_claims,
    factual_audit,
    style_polish,
)
from .rubrics import RubricPackage, load_rubrics, relevant_statements, statements_to_json


class ConfigError(Exception):
    pass


class PipelineError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

def load_config(path: str, seed: int | None = None) -> dict:
    cfg_path = Path(path)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        raw = yaml.safe_load(cfg_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {cfg_path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config top level must be a mapping")

    if seed is not None:
        raw["seed"] = seed
    if "seed" not in raw:
        raise ConfigError("config must set a seed")
    if not isinstance(raw["seed"], int):
        raise ConfigError("seed must be an integer")

    schemas = raw.get("schemas", {})
    if not isinstance(schemas, dict) or not schemas.get("train") or not schemas.get("test"):
        raise ConfigError("config needs schemas.train and schemas.test path lists")

    base = cfg_path.parent
    resolved: dict[str, list[Path]] = {}
    for split in ("train", "test"):
        resolved[split] = []
        for p in schemas[split]:
            fp = (base / p).resolve() if not Path(p).is_absolute() else Path(p)
            if not fp.exists():
                raise ConfigError(f"schema file not found: {fp}")
            resolved[split].append(fp)

    rubrics = raw.get("rubrics", {})
    rubric_paths: dict[str, Path] = {}
    for name, p in rubrics.items():
        fp = (base / p).resolve() if not Path(p).is_absolute() else Path(p)
        if not fp.exists():
            raise ConfigError(f"rubric file not found: {fp}")
        rubric_paths[name] = fp

    plan_raw = raw.get("plan", {1: 50, 2: 50, 3: 50})
    try:
        plan = {int(k): int(v) for k, v in plan_raw.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid plan: {plan_raw}") from exc

    audit_raw = raw.get("audit", {})
    audit = AuditConfig(
        max_iterations=int(audit_raw.get("max_iterations", 5)),
        epsilon=float(audit_raw.get("epsilon", 0.05)),
    )

    judge_mode = raw.get("judge_mode", "oracle")
    if judge_mode not in ("oracle", "llm"):
        raise ConfigError(f"judge_mode must be oracle or llm, got {judge_mode!r}")
    rejected_source = raw.get("rejected_source", "initial_trace")
    if rejected_source not in ("initial_trace", "model_endpoint"):
        raise ConfigError(f"invalid rejected_source {rejected_source!r}")

    output_dir = Path(raw.get("output_dir", "out"))
    if not output_dir.is_absolute():
        output_dir = (base / output_dir).resolve()

    return {
        "seed": raw["seed"],
        "schemas": resolved,
        "rubrics": rubric_paths,
        "plan": plan,
        "audit": audit,
        "judge_mode": judge_mode,
        "rejected_source": rejected_source,
        "output_dir": output_dir,
        "jobs": int(raw.get("jobs", 1)),
    }


def config_hash(cfg: dict) -> str:
    payload = {
        "seed": cfg["seed"],
        "plan": {str(k): v for k, v in sorted(cfg["plan"].items())},
        "audit": {
            "max_iterations": cfg["audit"].max_iterations,
            "epsilon": cfg["audit"].epsilon,
        },
        "judge_mode": cfg["judge_mode"],
        "rejected_source": cfg["rejected_source"],
        "schemas": {k: [p.name for p in v] for k, v in cfg["schemas"].items()},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _schema_entries(cfg: dict) -> list[tuple[str, EerdSchema, str]]:
    """(name, schema, split) for every configured schema, train first."""
    entries = []
    for split in ("train", "test"):
        for path in cfg["schemas"][split]:
            schema = parse_schema(path.read_text(encoding="utf-8"))
            entries.append((schema.name, schema, split))
    return entries


def _rubric_package(cfg: dict, name: str, schema: EerdSchema) -> RubricPackage:
    path = cfg["rubrics"].get(name)
    if path is None:
        raise ConfigError(f"no rubric file configured for schema {name!r}")
    return load_rubrics(path.read_text(encoding="utf-8"), schema)


# ---------------------------------------------------------------------------
# forge

def run_forge(cfg: dict) -> dict:
    out_dir = cfg["output_dir"] / "corpus"
    out_dir.mkdir(parents=True, exist_ok=True)
    plan_total = sum(cfg["plan"].values())
    entries = _schema_entries(cfg)
    top = {"config_hash": config_hash(cfg), "schemas": {}, "train_total": 0, "test_total": 0}
    for idx, (name, schema, split) in enumerate(entries):
        plan = CorpusPlan(
            per_count=dict(cfg["plan"]),
            start_id=1 + idx * plan_total,
            seed=cfg["seed"] + idx,
        )
        variants = generate_corpus(schema, plan)
        lines = [json.dumps(v.to_dict(), sort_keys=True, ensure_ascii=False) for v in variants]
        (out_dir / f"{name}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        manifest = corpus_manifest(schema, plan, variants)
        manifest["split"] = split
        (out_dir / f"{name}.manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        top["schemas"][name] = {"split": split, "count": len(variants),
                                "corpus_hash": manifest["corpus_hash"]}
        top[f"{split}_total"] += len(variants)
    (out_dir / "manifest.json").write_text(
        json.dumps(top, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return top


def _load_corpus(cfg: dict, name: str) -> tuple[list[MistakenVariant], dict]:
    out_dir = cfg["output_dir"] / "corpus"
    data = out_dir / f"{name}.jsonl"
    manifest = out_dir / f"{name}.manifest.json"
    if not data.exists() or not manifest.exists():
        raise PipelineError(f"corpus for {name!r} not found; run `forge` first")
    variants = [
        MistakenVariant.from_dict(json.loads(line))
        for line in data.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return variants, json.loads(manifest.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# refine

def synthesize_initial_trace(
    variant: MistakenVariant,
    schema: EerdSchema,
    seed: int,
    kind: str = "reasoning",
) -> Trace:
    """Seeded stand-in for a base model's first-pass analysis.

    Covers roughly 60% of the true mistakes and adds up to two hallucinated
    claims, so the audit loop has both omissions and hallucinations to fix.
    """
    stream = 1 if kind == "reasoning" else 2
    rng = random.Random(seed * 1000003 + variant.variant_id * 7 + stream)
    truth_keys = {(m.category, m.focal) for m in variant.mistakes}
    parts = [f"Reviewing the submitted design for {variant.source_schema!r}."]
    for rec in variant.mistakes:
        if rng.random() < 0.6:
            parts.append(
                claim_markup(rec.category, rec.focal, "error_found",
                             rec.description or f"{rec.focal!r} deviates from the design.")
            )
    focals = sorted(schema.element_names())
    for _ in range(rng.randint(0, 2)):
        cat = rng.choice(MISTAKE_CATEGORIES)
        focal = rng.choice(focals)
        if (cat, focal) in truth_keys:
            continue
        parts.append(
            claim_markup(cat, focal, "error_found",
                         f"The {cat} around {focal!r} looks wrong.")
        )
        truth_keys.add((cat, focal))
    if len(parts) == 1:
        # guarantee at least one claim so the trace is never claim-free
        rec = variant.mistakes[0]
        parts.append(
            claim_markup(rec.category, rec.focal, "error_found",
                         rec.description or f"{rec.focal!r} deviates from the design.")
        )
    return Trace.from_text(" ".join(parts), kind=kind)


def run_refine(cfg: dict) -> dict:
    out_dir = cfg["output_dir"] / "refine"
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    auditor = ClaimAuditor()
    scorer = OracleScorer()
    halt_counts: dict[str, int] = {}
    summary = {"config_hash": chash, "schemas": {}, "halt_reasons": halt_counts}

    for name, schema, split in _schema_entries(cfg):
        variants, _manifest = _load_corpus(cfg, name)
        rubrics = _rubric_package(cfg, name, schema)
        log_path = out_dir / f"{name}.jsonl"
        state_path = out_dir / f"{name}.state.json"

        done: dict[int, dict] = {}
        if log_path.exists() and state_path.exists():
            state = json.loads(state_path.read_text(encoding="utf-8"))
            if state.get("config_hash") == chash:
                for line in log_path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        rec = json.loads(line)
                        done[rec["variant_id"]] = rec
            else:
                log_path.unlink()
        state_path.write_text(json.dumps({"config_hash": chash}) + "\n", encoding="utf-8")

        with log_path.open("a", encoding="utf-8") as fh:
            for variant in variants:
                if variant.variant_id in done:
                    rec = done[variant.variant_id]
                    halt_counts[rec["polish_halt_reason"]] = (
                        halt_counts.get(rec["polish_halt_reason"], 0) + 1
                    )
                    continue
                truth = list(variant.mistakes)
                initial_r = synthesize_initial_trace(variant, schema, cfg["seed"], "reasoning")
                audit_run = factual_audit(initial_r, truth, rubrics, auditor, scorer, cfg["audit"])
                polish_run = style_polish(
                    audit_run.final, audit_run.f1_optimal, truth, rubrics,
                    auditor, scorer, cfg["audit"],
                )
                initial_f = synthesize_initial_trace(variant, schema, cfg["seed"], "feedback")
                feedback_run = factual_audit(
                    initial_f, truth, rubrics, auditor, scorer, cfg["audit"]
                )
                rec = {
                    "variant_id": variant.variant_id,
                    "source_schema": name,
                    "split": split,
                    "initial_reasoning": initial_r.text,
                    "refined_reasoning": polish_run.final.text,
                    "f1_history": list(audit_run.f1_history),
                    "reward_history": list(polish_run.reward_history),
                    "f1_optimal": audit_run.f1_optimal,
                    "audit_halt_reason": audit_run.halt_reason,
                    "polish_halt_reason": polish_run.halt_reason,
                    "initial_feedback": initial_f.text,
                    "refined_feedback": feedback_run.final.text,
                    "feedback_f1_optimal": feedback_run.f1_optimal,
                    "feedback_halt_reason": feedback_run.halt_reason,
                }
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
                halt_counts[rec["polish_halt_reason"]] = (
                    halt_counts.get(rec["polish_halt_reason"], 0) + 1
                )
        summary["schemas"][name] = {"split": split, "count": len(variants)}
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def _load_refine_log(cfg: dict, name: str) -> dict[int, dict]:
    log_path = cfg["output_dir"] / "refine" / f"{name}.jsonl"
    if not log_path.exists():
        raise PipelineError(f"refinement log for {name!r} not found; run `refine` first")
    out: dict[int, dict] = {}
    for line in log_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["variant_id"]] = rec
    return out


# ---------------------------------------------------------------------------
# export

def _task_input(
    variant: MistakenVariant, schema: EerdSchema, rubrics: RubricPackage, split: str
) -> TaskInput:
    statements: list = []
    seen: set[int] = set()
    for focal in variant.focal_set():
        for stmt in relevant_statements(rubrics, focal, schema):
            if id(stmt) not in seen:
                seen.add(id(stmt))
                statements.append(stmt)
    return TaskInput(
        variant_id=variant.variant_id,
        schema_text=serialize_schema(variant.schema),
        statements_text=statements_to_json(statements),
        split=split,
    )


class _RunView:
    """Minimal refinement-run view rebuilt from a refine log record."""

    def __init__(self, initial_text: str, final_text: str, kind: str):
        self.initial = Trace.from_text(initial_text, kind=kind)
        self.final = Trace.from_text(final_text, kind=kind)


def run_export(cfg: dict) -> dict:
    out_dir = cfg["output_dir"] / "datasets"
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = TrainPlan(sft_epochs=1, dpo_steps=50)

    reasoning_corpus: list[tuple[TaskInput, _RunView]] = []
    feedback_sft_corpus: list[tuple[TaskInput, str, str]] = []
    feedback_pair_corpus: list[tuple[TaskInput, str, _RunView]] = []

    for name, schema, split in _schema_entries(cfg):
        if split != "train":
            continue
        variants, _ = _load_corpus(cfg, name)
        rubrics = _rubric_package(cfg, name, schema)
        log = _load_refine_log(cfg, name)
        for variant in variants:
            rec = log.get(variant.variant_id)
            if rec is None:
                raise PipelineError(
                    f"refinement log for {name!r} is missing variant {variant.variant_id}"
                )
            task = _task_input(variant, schema, rubrics, split)
            reasoning_corpus.append(
                (task, _RunView(rec["initial_reasoning"], rec["refined_reasoning"], "reasoning"))
            )
            feedback_sft_corpus.append(
                (task, rec["refined_reasoning"], rec["refined_feedback"])
            )
            feedback_pair_corpus.append(
                (task, rec["refined_reasoning"],
                 _RunView(rec["initial_feedback"], rec["refined_feedback"], "feedback"))
            )

    manifests = {}
    sft = build_reasoning_sft(reasoning_corpus)
    manifests["reasoning_sft"] = export_jsonl(
        sft, out_dir / "reasoning_sft.jsonl", plan, {"seed": cfg["seed"]}
    )
    pairs, dropped = build_preference_pairs(
        reasoning_corpus, rejected_source=cfg["rejected_source"], stage="reasoning"
    )
    manifests["reasoning_dpo"] = export_jsonl(
        pairs, out_dir / "reasoning_dpo.jsonl", plan,
        {"seed": cfg["seed"], "dropped_degenerate": dropped,
         "rejected_source": cfg["rejected_source"]},
    )
    fb_sft = build_feedback_train(feedback_sft_corpus)
    manifests["feedback_sft"] = export_jsonl(
        fb_sft, out_dir / "feedback_sft.jsonl", plan, {"seed": cfg["seed"]}
    )
    fb_pairs, fb_dropped = build_feedback_pairs(
        feedback_pair_corpus, rejected_source=cfg["rejected_source"]
    )
    manifests["feedback_dpo"] = export_jsonl(
        fb_pairs, out_dir / "feedback_dpo.jsonl", plan,
        {"seed": cfg["seed"], "dropped_degenerate": fb_dropped,
         "rejected_source": cfg["rejected_source"]},
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifests, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifests


# ---------------------------------------------------------------------------
# eval / report

def _findings_from_prediction(rec: dict) -> list[Finding]:
    if "findings" in rec:
        return [
            Finding(
                category=f["category"],
                focal=f["focal"],
                polarity=f.get("polarity", "error_found"),
                explanation=f.get("explanation", ""),
            )
            for f in rec["findings"]
        ]
    if "trace" in rec:
        return claims_to_findings(extract_claims(rec["trace"]))
    raise PipelineError(
        f"prediction for variant {rec.get('variant_id')} has neither 'findings' nor 'trace'"
    )


def run_eval(
    cfg: dict,
    predictions: str | None = None,
    split: str = "test",
    match_mode: str = "strict",
) -> MetricSummary:
    out_dir = cfg["output_dir"] / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    predicted: dict[int, dict] | None = None
    if predictions is not None:
        pred_path = Path(predictions)
        if not pred_path.exists():
            raise ConfigError(f"predictions file not found: {pred_path}")
        predicted = {}
        for line in pred_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                predicted[int(rec["variant_id"])] = rec

    reports: list[DiagnosticReport] = []
    report_lines: list[str] = []
    missing: list[int] = []
    for name, schema, schema_split in _schema_entries(cfg):
        if split != "all" and schema_split != split:
            continue
        variants, _ = _load_corpus(cfg, name)
        rubrics = _rubric_package(cfg, name, schema)
        for variant in variants:
            truth = list(variant.mistakes)
            if predicted is None:
                findings = diff_schemas(schema, variant.schema, rubrics)
            else:
                rec = predicted.get(variant.variant_id)
                if rec is None:
                    missing.append(variant.variant_id)
                    continue
                findings = _findings_from_prediction(rec)
            report = match_findings(findings, truth, mode=match_mode)
            reports.append(report)
            doc = report.to_dict()
            doc["variant_id"] = variant.variant_id
            doc["source_schema"] = name
            report_lines.append(json.dumps(doc, ensure_ascii=False, sort_keys=True))
    if missing:
        raise PipelineError(
            f"predictions file is missing {len(missing)} variant(s): "
            + ", ".join(str(i) for i in sorted(missing))
        )
    if not reports:
        raise PipelineError(f"no variants found for split {split!r}")

    summary = summarize(reports)
    (out_dir / "reports.jsonl").write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(
            {
                "precision": summary.precision,
                "recall": summary.recall,
                "f1": summary.f1,
                "counts": {c: list(v) for c, v in summary.counts.items()},
                "average_convention": summary.average_convention,
                "match_mode": match_mode,
                "split": split,
                "report_count": len(reports),
            },
            indent=2, sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (out_dir / "report.tsv").write_text(format_category_table(summary, sep="\t"), encoding="utf-8")
    return summary


def load_summary(cfg: dict) -> MetricSummary:
    path = cfg["output_dir"] / "eval" / "summary.json"
    if not path.exists():
        raise PipelineError("no evaluation summary found; run `eval` first")
    doc = json.loads(path.read_text(encoding="utf-8"))
    counts = {c: tuple(v) for c, v in doc["counts"].items()}
    per_category = {c: precision_recall_f1(tp, fp, fn) for c, (tp, fp, fn) in counts.items()}
    return MetricSummary(
        precision=doc["precision"],
        recall=doc["recall"],
        f1=doc["f1"],
        per_category=per_category,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# click wiring

def _guarded(ctx: click.Context, fn):
    try:
        return fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        ctx.exit(2)
    except GatewayError as exc:
        click.echo(f"gateway failure: {exc}", err=True)
        ctx.exit(3)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        click.echo(f"pipeline failure: {exc}", err=True)
        ctx.exit(1)


@click.group()
@click.option("--config", "-c", "config_path", required=True, type=str,
              help="Path to the pipeline YAML config.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--jobs", type=int, default=None, help="Parallel item bound (advisory).")
@click.pass_context
def main(ctx: click.Context, config_path: str, seed: int | None, jobs: int | None) -> None:
    """EERD pipeline: corpus forging, trace refinement, dataset export, evaluation."""
    ctx.ensure_object(dict)
    cfg = _guarded(ctx, lambda: load_config(config_path, seed))
    if jobs is not None:
        cfg["jobs"] = jobs
    ctx.obj["cfg"] = cfg


@main.command()
@click.pass_context
def forge(ctx: click.Context) -> None:
    """Generate the mistake-injected corpora for every configured schema."""
    cfg = ctx.obj["cfg"]
    started = time.monotonic()
    top = _guarded(ctx, lambda: run_forge(cfg))
    click.echo(
        f"forged {top['train_total']} train + {top['test_total']} test variants "
        f"in {time.monotonic() - started:.1f}s -> {cfg['output_dir'] / 'corpus'}"
    )


@main.command()
@click.pass_context
def refine(ctx: click.Context) -> None:
    """Run the factual-audit and style-polish loops over every variant."""
    cfg = ctx.obj["cfg"]
    summary = _guarded(ctx, lambda: run_refine(cfg))
    halts = ", ".join(f"{k}={v}" for k, v in sorted(summary["halt_reasons"].items()))
    click.echo(f"refined all corpora (polish halts: {halts})")


@main.command()
@click.pass_context
def export(ctx: click.Context) -> None:
    """Build the four alignment dataset files from the refinement logs."""
    cfg = ctx.obj["cfg"]
    manifests = _guarded(ctx, lambda: run_export(cfg))
    for stage, manifest in manifests.items():
        click.echo(f"{stage}: {manifest['count']} record(s)")


@main.command("eval")
@click.option("--predictions", type=str, default=None,
              help="JSONL of per-variant predictions; omit for oracle self-evaluation.")
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="test")
@click.option("--match-mode", type=click.Choice(["strict", "category_level"]), default="strict")
@click.pass_context
def eval_cmd(ctx: click.Context, predictions: str | None, split: str, match_mode: str) -> None:
    """Score findings against ground truth and emit the category table."""
    cfg = ctx.obj["cfg"]
    summary = _guarded(ctx, lambda: run_eval(cfg, predictions, split, match_mode))
    click.echo(format_category_table(summary, sep="\t"), nl=False)


@main.command()
@click.pass_context
def report(ctx: click.Context) -> None:
    """Re-render the table from the last evaluation summary."""
    cfg = ctx.obj["cfg"]
    summary = _guarded(ctx, lambda: load_summary(cfg))
    click.echo(format_category_table(summary, sep="  |  "), nl=False)


if __name__ == "__main__":
    main(sys.argv[1:])

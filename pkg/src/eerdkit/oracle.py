"""Rule-based diagnostic judge for EERD submissions.

Diffs a submitted schema against its reference, categorizes every structural
divergence into one of the 11 mistake categories, matches findings against
ground-truth mistake records, and computes precision/recall/F1 with per
category breakdowns.  A chat-model judge is available as an alternative
scoring path, but all counts are always recomputed locally.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from statistics import fmean

from .forge import MISTAKE_CATEGORIES, MistakeRecord, flip_entity_kind
from .model import (
    Attribute,
    EerdSchema,
    Entity,
    Relationship,
    normalize_name,
    render_element,
)
from .rubrics import RubricPackage

log = logging.getLogger(__name__)


class EmptyInput(Exception):
    pass


class MalformedJudgeOutput(Exception):
    pass


@dataclass(frozen=True)
class Finding:
    category: str
    focal: str
    polarity: str  # error_found | confirmed_correct
    explanation: str = ""
    evidence: str = ""

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "focal": self.focal,
            "polarity": self.polarity,
            "explanation": self.explanation,
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class DiagnosticReport:
    findings: tuple[Finding, ...]
    matched: tuple[tuple[MistakeRecord, Finding], ...]
    missed: tuple[MistakeRecord, ...]
    hallucinated: tuple[Finding, ...]

    @property
    def tp(self) -> int:
        return len(self.matched)

    @property
    def fn(self) -> int:
        return len(self.missed)

    @property
    def fp(self) -> int:
        return len(self.hallucinated)

    def to_dict(self) -> dict:
        return {
            "mistake_evaluation": [
                {
                    "mistake_type": rec.category,
                    "focal": rec.focal,
                    "detected": True,
                    "phrase": finding.explanation,
                }
                for rec, finding in self.matched
            ]
            + [
                {"mistake_type": rec.category, "focal": rec.focal, "detected": False, "phrase": ""}
                for rec in self.missed
            ],
            "false_positives": [
                {"claim_phrase": f.explanation, "category": f.category, "focal": f.focal}
                for f in self.hallucinated
            ],
            "summary_metrics": {"TP": self.tp, "FN": self.fn, "FP": self.fp},
        }


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """The standard ratios with degenerate 0/0 cases pinned.

    An empty docket judged silently must score perfect: precision and recall
    default to 1.0 when their denominators are zero; F1 of (0, 0) is 0.0.
    """
    p = 1.0 if tp + fp == 0 else tp / (tp + fp)
    r = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


@dataclass(frozen=True)
class MetricSummary:
    precision: float
    recall: float
    f1: float
    per_category: dict[str, tuple[float, float, float]]
    counts: dict[str, tuple[int, int, int]]  # category -> (tp, fp, fn)
    average_convention: str = "unweighted mean over categories with support"

    def percent(self) -> dict[str, str]:
        """Rounded-percent cells per category row plus the Average row."""
        rows = {}
        for cat in MISTAKE_CATEGORIES:
            p, r, f1 = self.per_category[cat]
            rows[cat] = f"{round(p * 100)}/{round(r * 100)}/{round(f1 * 100)}"
        rows["Average"] = (
            f"{round(self.precision * 100)}/{round(self.recall * 100)}/{round(self.f1 * 100)}"
        )
        return rows


# ---------------------------------------------------------------------------
# structural diff

def _err(category: str, focal: str, explanation: str, original, modified) -> Finding:
    return Finding(
        category=category,
        focal=focal,
        polarity="error_found",
        explanation=explanation,
        evidence=f"expected {original} / submitted {modified}",
    )


def _attr_map(attrs: tuple[Attribute, ...]) -> dict[str, Attribute]:
    return {normalize_name(a.name): a for a in attrs}


def _diff_attributes(focal: str, ref_attrs, sub_attrs, out: list[Finding]) -> None:
    ref_map = _attr_map(ref_attrs)
    sub_map = _attr_map(sub_attrs)
    for key, ra in ref_map.items():
        if key not in sub_map:
            out.append(
                _err("attribute", focal, f"attribute {ra.name!r} is missing", ra.name, "absent")
            )
            continue
        sa = sub_map[key]
        if ra.key_role != sa.key_role:
            out.append(
                _err(
                    "key_attribute", focal,
                    f"attribute {ra.name!r} should have key role {ra.key_role!r}, "
                    f"submission has {sa.key_role!r}",
                    ra.key_role, sa.key_role,
                )
            )
        elif ra.kind != sa.kind:
            out.append(
                _err(
                    "attribute_type", focal,
                    f"attribute {ra.name!r} should be {ra.kind}, submission has {sa.kind}",
                    ra.kind, sa.kind,
                )
            )
        elif ra.components != sa.components:
            out.append(
                _err(
                    "attribute", focal,
                    f"components of composite attribute {ra.name!r} differ",
                    [c.name for c in ra.components], [c.name for c in sa.components],
                )
            )
    for key, sa in sub_map.items():
        if key not in ref_map:
            out.append(
                _err("attribute", focal, f"attribute {sa.name!r} is not part of the design",
                     "absent", sa.name)
            )


def _diff_entity(ref: Entity, sub: Entity, out: list[Finding]) -> None:
    expected = ref
    if ref.kind != sub.kind:
        out.append(
            _err(
                "entity_type", ref.name,
                f"entity {ref.name!r} should be {ref.kind}, submission models it as {sub.kind}",
                render_element(ref), render_element(sub),
            )
        )
        # compare attributes modulo the canonical key adjustment that a kind
        # flip implies, so the flip itself yields exactly one finding
        expected = flip_entity_kind(ref)
    _diff_attributes(ref.name, expected.attributes, sub.attributes, out)


def _participants_by_entity(rel: Relationship) -> dict[str, tuple[str, str]]:
    return {
        normalize_name(p.entity): (p.cardinality, p.participation) for p in rel.participants
    }


def _diff_relationship(ref: Relationship, sub: Relationship, out: list[Finding]) -> None:
    if ref.kind != sub.kind:
        out.append(
            _err(
                "relationship_type", ref.name,
                f"relationship {ref.name!r} should be {ref.kind}, submission has {sub.kind}",
                ref.kind, sub.kind,
            )
        )
    if ref.arity != sub.arity:
        out.append(
            _err(
                "ternary_relationship", ref.name,
                f"relationship {ref.name!r} should have {ref.arity} participants, "
                f"submission has {sub.arity}",
                render_element(ref), render_element(sub),
            )
        )
    else:
        ref_parts = _participants_by_entity(ref)
        sub_parts = _participants_by_entity(sub)
        if set(ref_parts) != set(sub_parts):
            out.append(
                _err(
                    "relationship_participants", ref.name,
                    f"participants of {ref.name!r} differ from the design",
                    sorted(ref_parts), sorted(sub_parts),
                )
            )
        elif ref_parts != sub_parts and Counter(ref_parts.values()) == Counter(sub_parts.values()):
            # same constraint pairs assigned to the wrong entities: the
            # relationship's semantics are inverted as a whole
            out.append(
                _err(
                    "invalid_relationship", ref.name,
                    f"cardinality/participation constraints of {ref.name!r} are assigned "
                    "to the wrong participants",
                    render_element(ref), render_element(sub),
                )
            )
        else:
            for key, (ref_card, ref_part) in ref_parts.items():
                sub_card, sub_part = sub_parts[key]
                if ref_card != sub_card:
                    out.append(
                        _err(
                            "cardinality", ref.name,
                            f"cardinality of {key!r} in {ref.name!r} should be {ref_card}, "
                            f"submission has {sub_card}",
                            ref_card, sub_card,
                        )
                    )
                if ref_part != sub_part:
                    out.append(
                        _err(
                            "total_participation", ref.name,
                            f"participation of {key!r} in {ref.name!r} should be {ref_part}, "
                            f"submission has {sub_part}",
                            ref_part, sub_part,
                        )
                    )
    _diff_attributes(ref.name, ref.attributes, sub.attributes, out)


def diff_schemas(
    reference: EerdSchema,
    submitted: EerdSchema,
    rubrics: RubricPackage | None = None,
) -> list[Finding]:
    """One error_found finding per structural divergence, deterministically ordered.

    With rubrics supplied, rubric-anchored elements with no divergence get a
    confirmed_correct finding as well.
    """
    out: list[Finding] = []

    sub_entities = {normalize_name(e.name): e for e in submitted.entities}
    for ref_e in reference.entities:
        sub_e = sub_entities.get(normalize_name(ref_e.name))
        if sub_e is None:
            out.append(
                _err("entity_type", ref_e.name, f"entity {ref_e.name!r} is missing",
                     render_element(ref_e), "absent")
            )
        else:
            _diff_entity(ref_e, sub_e, out)
    ref_entity_keys = {normalize_name(e.name) for e in reference.entities}
    for sub_e in submitted.entities:
        if normalize_name(sub_e.name) not in ref_entity_keys:
            out.append(
                _err("entity_type", sub_e.name, f"entity {sub_e.name!r} is not part of the design",
                     "absent", render_element(sub_e))
            )

    sub_rels = {normalize_name(r.name): r for r in submitted.relationships}
    for ref_r in reference.relationships:
        sub_r = sub_rels.get(normalize_name(ref_r.name))
        if sub_r is None:
            out.append(
                _err("invalid_relationship", ref_r.name,
                     f"relationship {ref_r.name!r} is missing",
                     render_element(ref_r), "absent")
            )
        else:
            _diff_relationship(ref_r, sub_r, out)
    ref_rel_keys = {normalize_name(r.name) for r in reference.relationships}
    for sub_r in submitted.relationships:
        if normalize_name(sub_r.name) not in ref_rel_keys:
            out.append(
                _err("invalid_relationship", sub_r.name,
                     f"relationship {sub_r.name!r} is not part of the design",
                     "absent", render_element(sub_r))
            )

    sub_specs = {normalize_name(s.supertype): s for s in submitted.specializations}
    for ref_s in reference.specializations:
        sub_s = sub_specs.get(normalize_name(ref_s.supertype))
        if sub_s != ref_s:
            out.append(
                _err("specialization_union", ref_s.supertype,
                     f"specialization under {ref_s.supertype!r} differs from the design",
                     render_element(ref_s),
                     render_element(sub_s) if sub_s else "absent")
            )
    ref_spec_keys = {normalize_name(s.supertype) for s in reference.specializations}
    for sub_s in submitted.specializations:
        if normalize_name(sub_s.supertype) not in ref_spec_keys:
            out.append(
                _err("specialization_union", sub_s.supertype,
                     f"specialization under {sub_s.supertype!r} is not part of the design",
                     "absent", render_element(sub_s))
            )

    sub_unions = {normalize_name(u.category): u for u in submitted.unions}
    for ref_u in reference.unions:
        sub_u = sub_unions.get(normalize_name(ref_u.category))
        if sub_u != ref_u:
            out.append(
                _err("specialization_union", ref_u.category,
                     f"union category {ref_u.category!r} differs from the design",
                     render_element(ref_u),
                     render_element(sub_u) if sub_u else "absent")
            )
    ref_union_keys = {normalize_name(u.category) for u in reference.unions}
    for sub_u in submitted.unions:
        if normalize_name(sub_u.category) not in ref_union_keys:
            out.append(
                _err("specialization_union", sub_u.category,
                     f"union category {sub_u.category!r} is not part of the design",
                     "absent", render_element(sub_u))
            )

    if rubrics is not None:
        flagged = {normalize_name(f.focal) for f in out}
        for name in rubrics.anchored_names():
            if normalize_name(name) not in flagged:
                out.append(
                    Finding(
                        category="attribute",
                        focal=name,
                        polarity="confirmed_correct",
                        explanation=f"{name!r} matches the reference design",
                        evidence="no structural divergence",
                    )
                )
    return out


# ---------------------------------------------------------------------------
# matching and metrics

def match_findings(
    findings: list[Finding],
    truth: list[MistakeRecord],
    mode: str = "strict",
) -> DiagnosticReport:
    """Pair error findings with ground-truth records.

    ``strict`` matches on (category, focal); ``category_level`` matches on
    category alone, the lenient reading used for free-text judge output.
    Each truth record pairs with at most one finding.
    """
    if mode not in ("strict", "category_level"):
        raise ValueError(f"unknown matching mode {mode!r}")

    def group(category: str, focal: str) -> tuple:
        if mode == "strict":
            return (category, normalize_name(focal))
        return (category,)

    errors = [f for f in findings if f.polarity == "error_found"]
    available: dict[tuple, list[Finding]] = {}
    for f in errors:
        available.setdefault(group(f.category, f.focal), []).append(f)

    matched: list[tuple[MistakeRecord, Finding]] = []
    missed: list[MistakeRecord] = []
    for rec in truth:
        bucket = available.get(group(rec.category, rec.focal))
        if bucket:
            matched.append((rec, bucket.pop(0)))
        else:
            missed.append(rec)
    hallucinated = [f for bucket in available.values() for f in bucket]
    # keep finding order for the hallucinated list
    hallucinated.sort(key=lambda f: errors.index(f))
    return DiagnosticReport(
        findings=tuple(findings),
        matched=tuple(matched),
        missed=tuple(missed),
        hallucinated=tuple(hallucinated),
    )


def summarize(reports: list[DiagnosticReport]) -> MetricSummary:
    """Micro counts per category across all reports, then the Average row as the
    unweighted mean over categories that carry any support."""
    if not reports:
        raise EmptyInput("summarize needs at least one report")
    counts: dict[str, list[int]] = {c: [0, 0, 0] for c in MISTAKE_CATEGORIES}
    for rep in reports:
        for rec, _finding in rep.matched:
            counts[rec.category][0] += 1
        for f in rep.hallucinated:
            counts[f.category][1] += 1
        for rec in rep.missed:
            counts[rec.category][2] += 1

    per_category = {
        cat: precision_recall_f1(tp, fp, fn) for cat, (tp, fp, fn) in counts.items()
    }
    supported = [cat for cat, (tp, fp, fn) in counts.items() if tp + fp + fn > 0]
    if supported:
        precision = fmean(per_category[c][0] for c in supported)
        recall = fmean(per_category[c][1] for c in supported)
        f1 = fmean(per_category[c][2] for c in supported)
    else:
        precision = recall = f1 = 1.0
    return MetricSummary(
        precision=precision,
        recall=recall,
        f1=f1,
        per_category=per_category,
        counts={c: tuple(v) for c, v in counts.items()},
    )


_CATEGORY_LABELS = {
    "key_attribute": "Keys",
    "total_participation": "Total Participation",
    "ternary_relationship": "Ternary Relationships",
    "specialization_union": "Specialization/Union",
    "cardinality": "Cardinalities",
    "relationship_participants": "Participants",
    "attribute_type": "Attribute Types",
    "attribute": "Attributes",
    "entity_type": "Entity Types",
    "invalid_relationship": "Invalid Relationships",
    "relationship_type": "Relationship Types",
}

_TABLE_ROW_ORDER = (
    "key_attribute", "total_participation", "ternary_relationship",
    "specialization_union", "cardinality", "relationship_participants",
    "attribute_type", "attribute", "entity_type", "invalid_relationship",
    "relationship_type",
)


def format_category_table(summary: MetricSummary, sep: str = "\t") -> str:
    """Category rows plus Average, cells rendered as P/R/F1 percents.

    Rows with no support in the corpus carry a ``*`` marker: their values are
    the degenerate convention, not measurements.
    """
    cells = summary.percent()
    lines = [sep.join(("Mistake Category", "P/R/F1"))]
    for cat in _TABLE_ROW_ORDER:
        tp, fp, fn = summary.counts[cat]
        marker = "" if tp + fp + fn > 0 else " *"
        lines.append(sep.join((_CATEGORY_LABELS[cat] + marker, cells[cat])))
    lines.append(sep.join(("Average", cells["Average"])))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model-based judging

def judge_with_llm(
    reference: EerdSchema,
    submitted: EerdSchema,
    rubrics: RubricPackage,
    feedback_text: str,
    truth: list[MistakeRecord],
    handle,
    cache=None,
) -> DiagnosticReport:
    """Score free-text feedback with a chat-model judge.

    Counts are always recomputed from the returned mistake_evaluation array;
    the judge's own summary_metrics are checked and logged, never trusted.
    """
    from .gateway import complete_structured
    from .model import serialize_schema
    from .prompts import TEMPLATES
    from .rubrics import statements_to_json

    fills = {
        "row['focal_relation']": ";".join(sorted({m.focal for m in truth})) or "-",
        "row['mistake_type']": ";".join(m.category for m in truth),
        "row['num_mistakes']": str(len(truth)),
        "relevant_statements": statements_to_json(list(rubrics.statements)),
        "correct_erd": serialize_schema(reference),
        "row['mistaken_erd']": serialize_schema(submitted),
        "response": feedback_text,
        "deepseek_feedback": "",
    }
    doc = complete_structured(handle, TEMPLATES["evaluation"], fills, "judge_report", cache=cache)

    evaluation = doc.get("mistake_evaluation")
    if not isinstance(evaluation, list):
        raise MalformedJudgeOutput("missing mistake_evaluation array")

    # pair evaluation rows to truth records by mistake type, in order
    remaining: dict[str, list[MistakeRecord]] = {}
    for rec in truth:
        remaining.setdefault(rec.category, []).append(rec)
    matched: list[tuple[MistakeRecord, Finding]] = []
    missed: list[MistakeRecord] = []
    findings: list[Finding] = []
    for row in evaluation:
        mtype = str(row.get("mistake_type", ""))
        bucket = remaining.get(mtype)
        if not bucket:
            continue
        rec = bucket.pop(0)
        detected = bool(row.get("llm_feedback_detected"))
        phrase = str(row.get("llm_feedback_phrase", ""))
        if detected:
            finding = Finding(
                category=rec.category, focal=rec.focal, polarity="error_found",
                explanation=phrase, evidence="judge detection",
            )
            findings.append(finding)
            matched.append((rec, finding))
        else:
            missed.append(rec)
    for bucket in remaining.values():
        missed.extend(bucket)

    hallucinated: list[Finding] = []
    for fp_row in doc.get("false_positives", []):
        if fp_row.get("source") not in (None, "llm_feedback"):
            continue
        finding = Finding(
            category="invalid_relationship",
            focal=str(fp_row.get("claim_phrase", ""))[:80] or "-",
            polarity="error_found",
            explanation=str(fp_row.get("claim_phrase", "")),
            evidence=str(fp_row.get("why_incorrect", "")),
        )
        findings.append(finding)
        hallucinated.append(finding)

    report = DiagnosticReport(
        findings=tuple(findings),
        matched=tuple(matched),
        missed=tuple(missed),
        hallucinated=tuple(hallucinated),
    )
    claimed = doc.get("summary_metrics", {})
    claims = (
        claimed.get("TP_llm_feedback"), claimed.get("FN_llm_feedback"),
        claimed.get("FP_llm_feedback"),
    )
    if claims != (None, None, None) and claims != (report.tp, report.fn, report.fp):
        log.warning(
            "judge summary_metrics %s disagree with local recount (tp=%d fn=%d fp=%d); "
            "using local counts", claims, report.tp, report.fn, report.fp,
        )
    return report


__all__ = [
    "Finding", "DiagnosticReport", "MetricSummary", "EmptyInput",
    "MalformedJudgeOutput", "precision_recall_f1", "diff_schemas",
    "match_findings", "summarize", "format_category_table", "judge_with_llm",
]

"""Iterative trace refinement: a factual audit loop and a style polish loop.

Both loops are deterministic state machines over pluggable editor and scorer
ports.  The factual audit removes hallucinated claims and inserts omitted
ones until the F1 against ground truth stabilizes; the style polish improves
a reward score while a factuality checkpoint guards against regressions.

Traces carry structured claims as inline markup so free text stays scoreable
without a model in the loop:

    [[claim cat=total_participation focal=test_log polarity=err]]...[[/claim]]
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Protocol

from .forge import MISTAKE_CATEGORIES, MistakeRecord
from .model import normalize_name
from .oracle import Finding, match_findings, precision_recall_f1
from .rubrics import RubricPackage


class MarkupError(Exception):
    pass


class EditorFailure(Exception):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"editor failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


class ScorerFailure(Exception):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"scorer failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class Claim:
    category: str
    focal: str
    polarity: str  # error_found | confirmed_correct
    span: tuple[int, int]  # character range of the claim body within the text

    def key(self) -> tuple[str, str, str]:
        return (self.category, normalize_name(self.focal), self.polarity)


@dataclass(frozen=True)
class Trace:
    text: str
    claims: tuple[Claim, ...]
    kind: str = "reasoning"  # reasoning | feedback

    @classmethod
    def from_text(cls, text: str, kind: str = "reasoning") -> "Trace":
        return cls(text=text, claims=tuple(extract_claims(text)), kind=kind)


_CLAIM_OPEN = re.compile(
    r"\[\[claim cat=(?P<cat>[a-z_]+) focal=(?P<focal>[^\]\s]+) polarity=(?P<pol>err|ok)\]\]"
)
_CLAIM_BLOCK = re.compile(
    r"\[\[claim cat=(?P<cat>[a-z_]+) focal=(?P<focal>[^\]\s]+) polarity=(?P<pol>err|ok)\]\]"
    r"(?P<body>.*?)\[\[/claim\]\]",
    re.DOTALL,
)
_POLARITY = {"err": "error_found", "ok": "confirmed_correct"}
_POLARITY_INV = {v: k for k, v in _POLARITY.items()}


def extract_claims(text: str, extractor: str = "tagged", **llm_kwargs) -> list[Claim]:
    """Pull structured claims out of trace text.

    Tagged mode parses the inline markup exactly and purely.  Untagged free
    text yields an empty list with a warning.  ``llm`` mode asks a model to
    tag the text first, then parses its reply.
    """
    if extractor == "llm":
        from .gateway import complete
        from .prompts import TEMPLATES

        handle = llm_kwargs.pop("handle")
        tagged = complete(handle, TEMPLATES["audit"], llm_kwargs.pop("fills"), **llm_kwargs)
        return extract_claims(tagged, extractor="tagged")
    if extractor != "tagged":
        raise ValueError(f"unknown extractor {extractor!r}")

    opens = len(_CLAIM_OPEN.findall(text))
    closes = text.count("[[/claim]]")
    blocks = list(_CLAIM_BLOCK.finditer(text))
    if opens != len(blocks) or closes != len(blocks):
        raise MarkupError(
            f"unbalanced claim markup: {opens} open tag(s), {closes} close tag(s), "
            f"{len(blocks)} well-formed block(s)"
        )
    if not blocks and ("[[claim" in text):
        raise MarkupError("malformed claim tag")
    if not blocks and text.strip():
        warnings.warn("no tagged claims found in trace text", stacklevel=2)
        return []
    claims = []
    for m in blocks:
        cat = m.group("cat")
        if cat not in MISTAKE_CATEGORIES:
            raise MarkupError(f"unknown claim category {cat!r}")
        claims.append(
            Claim(
                category=cat,
                focal=m.group("focal"),
                polarity=_POLARITY[m.group("pol")],
                span=m.span("body"),
            )
        )
    return claims


def claim_markup(category: str, focal: str, polarity: str, body: str) -> str:
    return (
        f"[[claim cat={category} focal={focal} polarity={_POLARITY_INV[polarity]}]]"
        f"{body}[[/claim]]"
    )


def claims_to_findings(claims: tuple[Claim, ...] | list[Claim]) -> list[Finding]:
    return [
        Finding(category=c.category, focal=c.focal, polarity=c.polarity)
        for c in claims
    ]


@dataclass(frozen=True)
class AuditConfig:
    max_iterations: int = 5
    epsilon: float = 0.05
    saturation_needed: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class RefinementRun:
    initial: Trace
    final: Trace
    f1_history: tuple[float, ...]
    reward_history: tuple[float, ...]
    f1_optimal: float
    halt_reason: str  # converged | max_iter | f1_drop | reward_drop


class EditorPort(Protocol):
    def audit(self, trace: Trace, rubrics: RubricPackage, truth: list[MistakeRecord]) -> Trace: ...
    def polish(self, trace: Trace) -> Trace: ...


class ScorerPort(Protocol):
    def f1(self, trace: Trace, truth: list[MistakeRecord], rubrics: RubricPackage) -> float: ...
    def reward(self, trace: Trace) -> float: ...


def factual_audit(
    trace: Trace,
    truth: list[MistakeRecord],
    rubrics: RubricPackage,
    editor: EditorPort,
    scorer: ScorerPort,
    cfg: AuditConfig,
    halt_policy: str = "stability",
) -> RefinementRun:
    """Edit-and-score loop that halts once F1 saturates.

    Per iteration: edit, score; a score change below epsilon bumps the
    saturation counter (halting at two), any larger change resets it.  The
    ``perfect_score`` policy instead halts as soon as F1 reaches 1.0.
    """
    if halt_policy not in ("stability", "perfect_score"):
        raise ValueError(f"unknown halt policy {halt_policy!r}")
    current = trace
    f1_prev = 0.0
    sat_count = 0
    f1_history: list[float] = []
    reward_history: list[float] = []
    halt = "max_iter"
    for i in range(1, cfg.max_iterations + 1):
        try:
            current = editor.audit(current, rubrics, truth)
        except Exception as exc:  # noqa: BLE001 - port boundary
            raise EditorFailure(i, exc) from exc
        try:
            f1_curr = scorer.f1(current, truth, rubrics)
            reward_history.append(scorer.reward(current))
        except Exception as exc:  # noqa: BLE001
            raise ScorerFailure(i, exc) from exc
        f1_history.append(f1_curr)
        diff = abs(f1_curr - f1_prev)
        f1_prev = f1_curr
        if halt_policy == "perfect_score":
            if f1_curr == 1.0:
                halt = "converged"
                break
            continue
        if diff < cfg.epsilon:
            sat_count += 1
            if sat_count >= cfg.saturation_needed:
                halt = "converged"
                break
        else:
            sat_count = 0
    return RefinementRun(
        initial=trace,
        final=current,
        f1_history=tuple(f1_history),
        reward_history=tuple(reward_history),
        f1_optimal=f1_prev,
        halt_reason=halt,
    )


def style_polish(
    trace: Trace,
    f1_init: float,
    truth: list[MistakeRecord],
    rubrics: RubricPackage,
    editor: EditorPort,
    scorer: ScorerPort,
    cfg: AuditConfig,
) -> RefinementRun:
    """Polish loop guarded by a factuality checkpoint.

    A candidate is accepted only if its F1 stays at or above ``f1_init`` and
    its reward strictly exceeds the best accepted reward so far.  The first
    rejection halts immediately (f1_drop or reward_drop) so the trace can
    never degrade below its audited state.
    """
    current = trace
    try:
        reward_prev = scorer.reward(trace)
        f1_history = [scorer.f1(trace, truth, rubrics)]
    except Exception as exc:  # noqa: BLE001
        raise ScorerFailure(0, exc) from exc
    reward_history = [reward_prev]
    f1_last_accepted = f1_init
    halt = "max_iter"
    for i in range(1, cfg.max_iterations + 1):
        try:
            candidate = editor.polish(current)
        except Exception as exc:  # noqa: BLE001
            raise EditorFailure(i, exc) from exc
        try:
            f1_cand = scorer.f1(candidate, truth, rubrics)
            reward_cand = scorer.reward(candidate)
        except Exception as exc:  # noqa: BLE001
            raise ScorerFailure(i, exc) from exc
        f1_history.append(f1_cand)
        reward_history.append(reward_cand)
        if f1_cand < f1_init:
            halt = "f1_drop"
            break
        if reward_cand <= reward_prev:
            halt = "reward_drop"
            break
        current = candidate
        reward_prev = reward_cand
        f1_last_accepted = f1_cand
    return RefinementRun(
        initial=trace,
        final=current,
        f1_history=tuple(f1_history),
        reward_history=tuple(reward_history),
        f1_optimal=f1_last_accepted,
        halt_reason=halt,
    )


# ---------------------------------------------------------------------------
# deterministic default ports

class ClaimAuditor:
    """Editor that converges a tagged trace onto the ground truth.

    Hallucinated claim blocks are deleted span-by-span; each missing mistake
    gets one appended explanation sentence.  ``fixes_per_round`` throttles the
    edits so multi-iteration convergence can be exercised; the default fixes
    everything it can each round.
    """

    def __init__(self, fixes_per_round: int | None = None):
        self.fixes_per_round = fixes_per_round

    def audit(self, trace: Trace, rubrics: RubricPackage, truth: list[MistakeRecord]) -> Trace:
        budget = self.fixes_per_round if self.fixes_per_round is not None else len(trace.text)
        report = match_findings(claims_to_findings(trace.claims), list(truth), mode="strict")

        text = trace.text
        hallucinated_keys = {
            (f.category, normalize_name(f.focal)) for f in report.hallucinated
        }
        kept_blocks: list[str] = []
        removed = 0
        pieces: list[str] = []
        last = 0
        for m in _CLAIM_BLOCK.finditer(text):
            key = (m.group("cat"), normalize_name(m.group("focal")))
            is_error = m.group("pol") == "err"
            if is_error and key in hallucinated_keys and removed < budget:
                pieces.append(text[last:m.start()])
                last = m.end()
                removed += 1
                hallucinated_keys.discard(key)
        pieces.append(text[last:])
        text = "".join(pieces)

        inserted = 0
        additions: list[str] = []
        for rec in report.missed:
            if removed + inserted >= budget:
                break
            body = (
                f"The {rec.category} around {rec.focal!r} is incorrect: "
                f"{rec.description or 'the submission deviates from the design.'}"
            )
            additions.append(claim_markup(rec.category, rec.focal, "error_found", body))
            inserted += 1
        if additions:
            sep = " " if text and not text.endswith((" ", "\n")) else ""
            text = text + sep + " ".join(additions)
        return Trace.from_text(text, kind=trace.kind)

    def polish(self, trace: Trace) -> Trace:
        """Reorder claim blocks to a stable order and drop duplicate claims."""
        blocks = list(_CLAIM_BLOCK.finditer(trace.text))
        if not blocks:
            return trace
        seen: set[tuple] = set()
        unique = []
        for m in blocks:
            key = (m.group("cat"), normalize_name(m.group("focal")), m.group("pol"))
            if key in seen:
                continue
            seen.add(key)
            unique.append(m)
        unique.sort(key=lambda m: (normalize_name(m.group("focal")), m.group("cat")))
        prefix = trace.text[: blocks[0].start()].rstrip()
        body = " ".join(m.group(0) for m in unique)
        text = (prefix + " " + body).strip() if prefix else body
        return Trace.from_text(text, kind=trace.kind)


class OracleScorer:
    """Deterministic scorer: F1 from tagged claims, reward from text shape.

    The reward is the mean of two normalized proxies: agreement of claim
    order with the rubric statement order, and non-redundancy (one minus the
    repeated-claim ratio).
    """

    def __init__(self, match_mode: str = "strict"):
        self.match_mode = match_mode

    def f1(self, trace: Trace, truth: list[MistakeRecord], rubrics: RubricPackage) -> float:
        report = match_findings(claims_to_findings(trace.claims), list(truth), mode=self.match_mode)
        _, _, f1 = precision_recall_f1(report.tp, report.fp, report.fn)
        return f1

    def reward(self, trace: Trace, rubrics: RubricPackage | None = None) -> float:
        claims = trace.claims
        if not claims:
            return 0.0
        order = [normalize_name(c.focal) for c in claims]
        if len(order) > 1:
            in_order = sum(1 for a, b in zip(order, order[1:]) if a <= b)
            order_score = in_order / (len(order) - 1)
        else:
            order_score = 1.0
        unique = len({c.key() for c in claims})
        non_redundancy = unique / len(claims)
        return (order_score + non_redundancy) / 2


__all__ = [
    "Claim", "Trace", "AuditConfig", "RefinementRun",
    "EditorPort", "ScorerPort", "MarkupError", "EditorFailure", "ScorerFailure",
    "extract_claims", "claim_markup", "claims_to_findings",
    "factual_audit", "style_polish", "ClaimAuditor", "OracleScorer",
]

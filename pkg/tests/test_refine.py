from random import Random

import pytest

from eerdkit.forge import MistakeRecord
from eerdkit.refine import (
    AuditConfig,
    Claim,
    ClaimAuditor,
    MarkupError,
    OracleScorer,
    ScorerFailure,
    Trace,
    claim_markup,
    extract_claims,
    factual_audit,
    style_polish,
)


def _rec(category, focal, description="deviates from the design"):
    return MistakeRecord(category=category, focal=focal, original="a", modified="b",
                         description=description)


# --- claim markup -------------------------------------------------------------

def test_single_tagged_claim():
    text = "Intro. " + claim_markup("cardinality", "works_on", "error_found", "N is wrong.")
    claims = extract_claims(text)
    assert len(claims) == 1
    c = claims[0]
    assert (c.category, c.focal, c.polarity) == ("cardinality", "works_on", "error_found")
    assert text[c.span[0]:c.span[1]] == "N is wrong."


def test_untagged_text_warns_and_yields_nothing():
    with pytest.warns(UserWarning):
        assert extract_claims("Plain prose with no annotations.") == []


def test_unbalanced_markup_rejected():
    with pytest.raises(MarkupError):
        extract_claims("[[claim cat=cardinality focal=r polarity=err]]no close tag")


def test_unknown_category_rejected():
    with pytest.raises(MarkupError):
        extract_claims("[[claim cat=bogus focal=r polarity=err]]x[[/claim]]")


def test_confirmed_correct_polarity():
    text = claim_markup("total_participation", "test_log", "confirmed_correct", "Looks right.")
    assert extract_claims(text)[0].polarity == "confirmed_correct"


# --- scripted ports -------------------------------------------------------------

class SeqEditor:
    """Audit/polish editor that emits a fresh placeholder trace each call."""

    def __init__(self):
        self.calls = 0

    def audit(self, trace, rubrics, truth):
        self.calls += 1
        return Trace(text=f"v{self.calls}", claims=(), kind=trace.kind)

    def polish(self, trace):
        self.calls += 1
        return Trace(text=f"v{self.calls}", claims=(), kind=trace.kind)


class SeqScorer:
    """Scores traces by name: vN gets the Nth scripted value."""

    def __init__(self, f1_seq, reward_seq=None, f1_init=0.0, reward_init=0.0):
        self.f1_seq = list(f1_seq)
        self.reward_seq = list(reward_seq or [0.0] * len(self.f1_seq))
        self.f1_init = f1_init
        self.reward_init = reward_init

    def _index(self, trace):
        return None if not trace.text.startswith("v") else int(trace.text[1:]) - 1

    def f1(self, trace, truth, rubrics):
        i = self._index(trace)
        return self.f1_init if i is None else self.f1_seq[i]

    def reward(self, trace):
        i = self._index(trace)
        return self.reward_init if i is None else self.reward_seq[i]


def transcribe_audit(seq, eps, max_iter, sat_needed=2):
    """Independent rendering of the audit loop's control flow."""
    f1_prev = 0.0
    sat = 0
    halt = "max_iter"
    iterations = 0
    for f1 in seq[:max_iter]:
        iterations += 1
        diff = abs(f1 - f1_prev)
        f1_prev = f1
        if diff < eps:
            sat += 1
            if sat >= sat_needed:
                halt = "converged"
                break
        else:
            sat = 0
    return iterations, f1_prev, halt


def transcribe_polish(f1_init, reward_init, cands, max_iter):
    """Independent rendering of the polish loop's accept/halt rule."""
    reward_prev = reward_init
    f1_last = f1_init
    halt = "max_iter"
    accepted = 0
    for f1, reward in cands[:max_iter]:
        if f1 < f1_init:
            halt = "f1_drop"
            break
        if reward <= reward_prev:
            halt = "reward_drop"
            break
        reward_prev = reward
        f1_last = f1
        accepted += 1
    return halt, reward_prev, f1_last, accepted


EMPTY = Trace(text="seed", claims=(), kind="reasoning")
CFG = AuditConfig(max_iterations=5, epsilon=0.05)


def test_audit_saturates_on_documented_sequence():
    scorer = SeqScorer([0.5, 0.8, 0.82, 0.83])
    run = factual_audit(EMPTY, [], None, SeqEditor(), scorer, CFG)
    assert len(run.f1_history) == 4
    assert run.halt_reason == "converged"
    assert run.f1_optimal == 0.83


def test_audit_constant_sequence_halts_at_three():
    scorer = SeqScorer([0.6, 0.6, 0.6, 0.6, 0.6])
    run = factual_audit(EMPTY, [], None, SeqEditor(), scorer, CFG)
    assert len(run.f1_history) == 3
    assert run.halt_reason == "converged"
    assert run.f1_optimal == 0.6


def test_audit_max_iterations_cap():
    scorer = SeqScorer([0.1, 0.3, 0.5, 0.7, 0.9])
    run = factual_audit(EMPTY, [], None, SeqEditor(), scorer, CFG)
    assert len(run.f1_history) == 5
    assert run.halt_reason == "max_iter"
    assert run.f1_optimal == 0.9


def test_audit_matches_transcription_on_random_sequences():
    rng = Random(17)
    for _ in range(200):
        eps = rng.choice([0.01, 0.05, 0.2])
        max_iter = rng.randint(1, 5)
        seq = [round(rng.random(), 3) for _ in range(5)]
        cfg = AuditConfig(max_iterations=max_iter, epsilon=eps)
        run = factual_audit(EMPTY, [], None, SeqEditor(), SeqScorer(seq), cfg)
        iters, optimal, halt = transcribe_audit(seq, eps, max_iter)
        assert len(run.f1_history) == iters
        assert run.f1_optimal == optimal
        assert run.halt_reason == halt


def test_audit_perfect_score_policy():
    scorer = SeqScorer([0.5, 1.0, 1.0])
    run = factual_audit(EMPTY, [], None, SeqEditor(), scorer, CFG,
                        halt_policy="perfect_score")
    assert len(run.f1_history) == 2
    assert run.halt_reason == "converged"
    assert run.f1_optimal == 1.0


def test_audit_wraps_scorer_failures():
    class Boom(SeqScorer):
        def f1(self, trace, truth, rubrics):
            raise RuntimeError("no score")

    with pytest.raises(ScorerFailure) as excinfo:
        factual_audit(EMPTY, [], None, SeqEditor(), Boom([0.5]), CFG)
    assert excinfo.value.iteration == 1


def test_polish_halts_on_f1_drop():
    scorer = SeqScorer([0.3], [0.9], f1_init=0.8, reward_init=0.1)
    run = style_polish(EMPTY, 0.8, [], None, SeqEditor(), scorer, CFG)
    assert run.halt_reason == "f1_drop"
    assert run.final == EMPTY
    assert run.f1_optimal == 0.8


def test_polish_accepts_then_halts_on_reward_drop():
    scorer = SeqScorer([0.8, 0.8, 0.8], [0.4, 0.6, 0.55], f1_init=0.8, reward_init=0.1)
    run = style_polish(EMPTY, 0.8, [], None, SeqEditor(), scorer, CFG)
    assert run.halt_reason == "reward_drop"
    assert run.final.text == "v2"
    assert run.reward_history[0] == 0.1
    assert max(run.reward_history[1:]) == 0.6


def test_polish_identity_editor_halts_immediately():
    class Identity:
        def polish(self, trace):
            return trace

    scorer = SeqScorer([], [], f1_init=0.7, reward_init=0.5)
    run = style_polish(EMPTY, 0.7, [], None, Identity(), scorer, CFG)
    assert run.halt_reason == "reward_drop"
    assert run.final == EMPTY


def test_polish_matches_transcription_and_never_degrades():
    rng = Random(23)
    for _ in range(200):
        max_iter = rng.randint(1, 5)
        f1_init = round(rng.random(), 3)
        reward_init = round(rng.random(), 3)
        cands = [(round(rng.random(), 3), round(rng.random(), 3)) for _ in range(max_iter)]
        cfg = AuditConfig(max_iterations=max_iter, epsilon=0.05)
        scorer = SeqScorer([f for f, _ in cands], [r for _, r in cands],
                           f1_init=f1_init, reward_init=reward_init)
        run = style_polish(EMPTY, f1_init, [], None, SeqEditor(), scorer, cfg)
        halt, reward_prev, f1_last, accepted = transcribe_polish(
            f1_init, reward_init, cands, max_iter)
        assert run.halt_reason == halt
        assert run.f1_optimal == f1_last
        # no-degradation contract
        assert scorer.f1(run.final, [], None) >= f1_init or run.final == EMPTY
        assert scorer.reward(run.final) >= reward_init
        assert run.final.text == (f"v{accepted}" if accepted else "seed")


def test_both_loops_respect_editor_budget():
    editor = SeqEditor()
    factual_audit(EMPTY, [], None, editor, SeqScorer([0.1, 0.3, 0.5, 0.7, 0.9]), CFG)
    assert editor.calls <= 5
    editor = SeqEditor()
    style_polish(EMPTY, 0.0, [], None, editor,
                 SeqScorer([1] * 5, [i / 10 for i in range(1, 6)]), CFG)
    assert editor.calls <= 5


# --- deterministic default ports ------------------------------------------------

def _truth():
    return [
        _rec("total_participation", "test_log"),
        _rec("key_attribute", "test"),
    ]


def test_claim_auditor_reaches_perfect_f1(hospital_rubrics):
    noisy = " ".join([
        "Draft analysis.",
        claim_markup("cardinality", "Dr_Patient", "error_found", "Invented problem."),
    ])
    trace = Trace.from_text(noisy)
    run = factual_audit(trace, _truth(), hospital_rubrics, ClaimAuditor(),
                        OracleScorer(), CFG)
    assert run.f1_optimal == 1.0
    assert run.halt_reason == "converged"
    final_keys = {(c.category, c.focal) for c in run.final.claims}
    assert final_keys == {("total_participation", "test_log"), ("key_attribute", "test")}


def test_claim_auditor_f1_history_is_non_decreasing(hospital_rubrics):
    noisy = " ".join([
        claim_markup("cardinality", "Dr_Patient", "error_found", "x"),
        claim_markup("attribute", "doctors", "error_found", "y"),
    ])
    run = factual_audit(Trace.from_text(noisy), _truth(), hospital_rubrics,
                        ClaimAuditor(fixes_per_round=1), OracleScorer(), CFG)
    assert list(run.f1_history) == sorted(run.f1_history)


def test_oracle_scorer_reward_rewards_order_and_uniqueness():
    scorer = OracleScorer()
    dup = Trace.from_text(" ".join([
        claim_markup("cardinality", "zeta", "error_found", "a"),
        claim_markup("cardinality", "alpha", "error_found", "b"),
        claim_markup("cardinality", "alpha", "error_found", "b"),
    ]))
    tidy = ClaimAuditor().polish(dup)
    assert scorer.reward(tidy) > scorer.reward(dup)
    assert len(tidy.claims) == 2


def test_polish_with_claim_auditor_keeps_f1(hospital_rubrics):
    truth = _truth()
    messy = " ".join([
        claim_markup("total_participation", "test_log", "error_found", "p"),
        claim_markup("key_attribute", "test", "error_found", "k"),
        claim_markup("key_attribute", "test", "error_found", "k"),
    ])
    trace = Trace.from_text(messy)
    scorer = OracleScorer()
    f1_init = scorer.f1(trace, truth, hospital_rubrics)
    run = style_polish(trace, f1_init, truth, hospital_rubrics, ClaimAuditor(), scorer, CFG)
    assert scorer.f1(run.final, truth, hospital_rubrics) >= f1_init
    assert scorer.reward(run.final) >= scorer.reward(trace)


def test_runs_are_reproducible(hospital_rubrics):
    trace = Trace.from_text(claim_markup("attribute", "doctors", "error_found", "x"))
    a = factual_audit(trace, _truth(), hospital_rubrics, ClaimAuditor(), OracleScorer(), CFG)
    b = factual_audit(trace, _truth(), hospital_rubrics, ClaimAuditor(), OracleScorer(), CFG)
    assert a == b

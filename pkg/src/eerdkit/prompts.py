"""Canonical prompt templates for the guide/base/judge models.

Bodies are the checked-in canonical texts; a golden test pins their SHA-256
hashes so accidental edits are caught.  Placeholders are replaced literally
by name, never via str.format, because most bodies are JSON and full of
braces that must survive untouched.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    placeholders: tuple[str, ...]

    def fill(self, fills: dict[str, str]) -> str:
        text = self.body
        for token in self.placeholders:
            if token not in fills:
                raise TemplateError(f"template {self.id!r}: missing placeholder {token!r}")
            literal = token if token.startswith("[") else "{" + token + "}"
            if literal not in text:
                raise TemplateError(f"template {self.id!r}: body lost placeholder {token!r}")
            text = text.replace(literal, str(fills[token]))
        return text


_RELEVANT_STATEMENTS = """\
{
    "task": "select the relevant items from the problem statements for explaning the given entity-relationships. make sure the output is a valid json",
    "entity-relationships": {erd},
    "problem-statements": {problem_statements},
    "relevant-statements": [ {"description": "Description from problem-statements.", "rubrics":..., "questions": ...}, ... ]
}
"""

_INFERENCE_FEEDBACK = """\
{
  "task": "Provide feedback based on the submitted relationship and participating entities, and their attributes based on the provided solution and problem statements. Each submission only contains one relationship. Do not comment on the missing relationships. Exactly follow the output JSON format.",
  "instructions": [{
    "note": "Only refer to the problem statement to discuss the submission and do not refer to the solution. List all of the entity and attributes discussed in the feedback. Check the submission againts the verifies section in the problem statements",
  }, { "note": "Check the correctness of entity types: Weak and Strong" },{ "note" : "Check the correctness of relationship types: Indentyfying or not identifying"}, { "note" : "Check the total participation has been identified correctly"}, {"note": "Do not comment on the missing relationships"}],
  "context": {
    "statement": "{relevant_statements}",
    "submission": "{submitted_erd}"
  },
  "output": {
    "feedback": "..."
    "entities": [...]
    "attributes": [...]
  }
}
"""

_INFERENCE_REASONING = """\
{
  "task": "Provide feedback based on the submitted relationship and participating entities, and their attributes based on the provided solution and problem statements. Each submission only contains one relationship. Do not comment on the missing relationships. Exactly follow the output JSON format.",
  "instructions": [{
    "note": "Only refer to the problem statement to discuss the submission and do not refer to the solution. List all of the entity and attributes discussed in the feedback. Check the submission againts the verifies section in the problem statements",
  }, { "note": "Evaluate entity types: Is each entity in the relationship correctly modeled as strong or weak?" },{ "note" : "Check the correctness of relationship types: Indentyfying or not identifying?"}, { "note" : "Check the total participation has been identified correctly"}, {"note": "Do not comment on the missing relationships"}],
  "context": {
    "statement": "{relevant_statements}",
    "submission": "{submitted_erd}"
  },
  "output": {
    "output": {
    "reasoning": "<think>"
  }
}
"""

_INFERENCE_FEEDBACK_WITH_REASONING = """\
{
  "task": "Provide feedback based on the submitted relationship and participating entities, and their attributes based on the provided solution and problem statements. Each submission only contains one relationship. Do not comment on the missing relationships. Exactly follow the output JSON format.",
  "instructions": [{
    "note": "Only refer to the problem statement to discuss the submission and do not refer to the solution. List all of the entity and attributes discussed in the feedback. Check the submission againts the verifies section in the problem statements",
  }, { "note": "Evaluate entity types: Is each entity in the relationship correctly modeled as strong or weak?" },{ "note" : "Check the correctness of relationship types: Indentyfying or not identifying?"}, { "note" : "Check the total participation has been identified correctly"}, {"note": "Do not comment on the missing relationships"}],
  "context": {
    "statement": "{relevant_statements}",
    "submission": "{submitted_erd}",
    "reasoning": "<think>{reasoning}</think>"
  },
  "output": {
    "feedback": {
}
"""

_EVALUATION = """\
{
  "task": "Evaluate the LLM's detection of known ERD modeling mistakes. For each known mistake type, analyze whether the LLM's feedback or deepseek feedback successfully caught the mistake, even partially. If it missed it, extract any related but incorrect or incomplete explanation. If nothing related exists, leave the field empty. Also suggest what an ideal explanation could have looked like.",
  "instructions": [
    {"note": "The input contains a semicolon-separated list of ground-truth mistake types. These are the actual mistakes in the ERD submission."},
    {"note": "Evaluate both the LLM feedback and deepseek feedback for each mistake type."},
    {"note": "If the mistake is correctly detected, return the relevant sentences from each source that supports detection."},
    {"note": "If the mistake is NOT correctly detected, try to find the relevant sentences from the LLM feedback or deepseek feedback that discusses a related aspect, even if it's incorrect or misapplied."},
    {"note": "If no related discussion exists, return an empty string for that source."},
    {"note": "For each mistake type, add an 'ideal_feedback' field or a short (2 or 3 sentences) example of what a strong, correct conceptual explanation would look like for that mistake in this ERD context."},
    {"note": "Also extract hallucinated mistake claims (false positives) with their relevant sentences, source (LLM feedback or deepseek feedback), and a short explanation."},
    {"note": "Your output MUST be strictly minified JSON without line breaks or indentation. Do not include any escaped characters (\\n, \\t) or unnecessary whitespace within JSON string values. All string values should be plain text without formatting."}
  ],
  "inputs": {
    "focal_relation/entity": "{row['focal_relation']}",
    "mistake_types": "{row['mistake_type']}",
    "num_mistakes": {row['num_mistakes']},
    "problem_statement": "{relevant_statements}",
    "correct_erd": "{correct_erd}",
    "submitted_erd": "{row['mistaken_erd']}",
    "llm_feedback": "{response}",
    "deepseek_feedback": "{deepseek_feedback}"
  },
  "output_format": {
    "mistake_evaluation": [
      {
        "mistake_type": "string",
        "llm_feedback_detected": true,
        "deepseek_feedback_detected": true,
        "llm_feedback_phrase": "phrase from LLM feedback that discusses or detects this mistake (or closest related logic)",
        "deepseek_feedback_phrase": "phrase from deepseek feedback that discusses or detects this mistake (or closest related logic)",
        "ideal_feedback": "a short, ideal feedback sentence that would correctly explain this mistake in this context"
      }
    ],
    "false_positives": [
      {
        "claim_phrase": "string",
        "source": "llm_feedback or deepseek_feedback",
        "why_incorrect": "short explanation"
      }
    ],
    "summary_metrics": {
      "TP_llm_feedback": "int",
      "FN_llm_feedback": "int",
      "FP_llm_feedback": "int",
      "TP_deepseek_feedback": "int",
      "FN_deepseek_feedback": "int",
      "FP_deepseek_feedback": "int",
      "precision_llm_feedback": "float (3 decimals)",
      "recall_llm_feedback": "float (3 decimals)",
      "f1_score_llm_feedback": "float (3 decimals)",
      "precision_deepseek_feedback": "float (3 decimals)",
      "recall_deepseek_feedback": "float (3 decimals)",
      "f1_score_deepseek_feedback": "float (3 decimals)"
    }
  }
}
"""

_DATA_GENERATION = """\
You will create multiple incorrect versions of a correct Entity-Relationship Diagram (ERD) by introducing realistic student mistakes while maintaining syntactic validity (based on ERD Grammar).

Task Requirements:
- Focus on ONE relation or entity per mistaken ERD from the provided correct ERD.
- Introduce 2 realistic, student-like errors in the chosen relation/entity.
- IMPORTANT: DO NOT create new entities or relationships that does not exist in the correct ERD.
- ONLY modify the provided ERD by introducing errors to EXISTING entities and relationships.
- First analyze the ERD structure to understand what elements are present (entities, relationships, specializations, etc.).
- Only introduce error types that are applicable to the structures that actually exist in the diagram.
- For example, only apply ternary relationship errors if the ERD contains ternary relationships.
- Maintain valid ERD grammar (no syntax violations).
- Ensure mistakes are semantically incorrect but syntactically valid.
- The complete ERD should be identical to the correct ERD except for the specific errors introduced.
- Output in the specified JSON format.

[ERD Grammar]

Correct ERD:
[Correct ERD]

For this batch, focus on creating mistakes primarily from these categories:

- {category1}: {description1}. Specific error types to consider: {subtypes1}
- {category2}: {description2}. Specific error types to consider: {subtypes2}
- {category3}: {description3}. Specific error types to consider: {subtypes3}

IMPORTANT: First analyze the ERD to determine which error types are applicable. Only use error types that make sense for the given ERD structure. For example, only apply ternary relationship errors if the ERD actually contains ternary relationships.

You MUST create {batch_size} different mistaken ERDs by introducing EXACTLY {number_of_errors} errors into the EXISTING entities and relationships in the correct ERD. Each mistaken ERD should have EXACTLY {number_of_errors} mistakes, no more and no fewer. DO NOT create new entities or relationships. Start the mistake_id numbering at {start_index}.

Output Format:

{
  "mistaken_erds": [
    {
      "mistake_id": 1,
      "focal_relation": "RelationName",
      "description": "Brief description of the mistake(s)",
      "mistakes": [
        {
          "type": "error_type_1",
          "original": "Original correct structure",
          "modified": "Modified incorrect structure"
        },
        {
          "type": "error_type_2",
          "original": "Original correct structure",
          "modified": "Modified incorrect structure"
        }
      ],
      "mistaken_erd": "The complete ERD in textual syntax format, identical to the 'Correct ERD' except with the specified mistake(s) applied. The structure must include ALL entities, relationships, specializations, and unions from the original correct ERD, with only the specific modifications for the mistakes."
    }
  ]
}
"""

_AUDIT = """\
{
  "task": "Audit the draft analysis below against the ground-truth mistake list and the problem statements. Remove every claim that asserts a mistake not present in the ground truth (hallucination) by deleting the erroneous phrase. For every ground-truth mistake the draft omits, insert one concise explanation sentence. Keep all correct claims verbatim. Return only the corrected analysis text.",
  "context": {
    "problem_statements": "{relevant_statements}",
    "ground_truth_mistakes": "{ground_truth}",
    "draft": "{trace}"
  },
  "output": {
    "corrected": "..."
  }
}
"""

_POLISH = """\
{
  "task": "Rewrite the analysis below for coherence and readability without adding, removing, or altering any factual claim. Order points to follow the problem statements, merge redundant sentences, and keep the wording concise. Return only the rewritten text.",
  "context": {
    "draft": "{trace}"
  },
  "output": {
    "polished": "..."
  }
}
"""


TEMPLATES: dict[str, PromptTemplate] = {
    t.id: t
    for t in (
        PromptTemplate(
            "relevant_statements", _RELEVANT_STATEMENTS, ("erd", "problem_statements")
        ),
        PromptTemplate(
            "inference_feedback", _INFERENCE_FEEDBACK, ("relevant_statements", "submitted_erd")
        ),
        PromptTemplate(
            "inference_reasoning", _INFERENCE_REASONING, ("relevant_statements", "submitted_erd")
        ),
        PromptTemplate(
            "inference_feedback_with_reasoning",
            _INFERENCE_FEEDBACK_WITH_REASONING,
            ("relevant_statements", "submitted_erd", "reasoning"),
        ),
        PromptTemplate(
            "evaluation",
            _EVALUATION,
            (
                "row['focal_relation']", "row['mistake_type']", "row['num_mistakes']",
                "relevant_statements", "correct_erd", "row['mistaken_erd']",
                "response", "deepseek_feedback",
            ),
        ),
        PromptTemplate(
            "data_generation",
            _DATA_GENERATION,
            (
                "[ERD Grammar]", "[Correct ERD]",
                "category1", "description1", "subtypes1",
                "category2", "description2", "subtypes2",
                "category3", "description3", "subtypes3",
                "batch_size", "number_of_errors", "start_index",
            ),
        ),
        PromptTemplate("audit", _AUDIT, ("relevant_statements", "ground_truth", "trace")),
        PromptTemplate("polish", _POLISH, ("trace",)),
    )
}


def template_hashes() -> dict[str, str]:
    return {
        tid: hashlib.sha256(t.body.encode("utf-8")).hexdigest() for tid, t in TEMPLATES.items()
    }


# golden hashes of the canonical bodies above; regenerate only on a deliberate
# template change (tests/test_gateway.py::test_template_bodies_unchanged)
EXPECTED_TEMPLATE_SHA256 = {
    "relevant_statements": "867e6be0c2c59db3409afcad4c316cdf933545606a46c1a382665e756187a5c6",
    "inference_feedback": "1cd18c39f9351d043a656d45cd29fe5ac8c56d3151f2031f544deaaf5ef92c43",
    "inference_reasoning": "aa45b87414e52a75b76a2e42389e32a9c34308e26f082e5c435700300a73867c",
    "inference_feedback_with_reasoning": "e96b82a96d8e852c1d3d54f1cef25f3387de71ac543fb829028672fffa77a768",
    "evaluation": "b6c8453b84f715c6756517e9baae3e3a54d4e9b0b764b698ff53a13268a144ab",
    "data_generation": "a53c78685919965ce235e9dca13d11c779c2df427eb63bea0a9976a341ae5a1a",
    "audit": "b0b7158dd9fb6dcde9eb2f7ed2228ed2267879bb440e5ea7351180c0c614308c",
    "polish": "5e871c1140afc7e50e912bda6c9b296e4f2b7db7f367994c27405c16c0adabe0",
}


__all__ = ["PromptTemplate", "TemplateError", "TEMPLATES", "template_hashes",
           "EXPECTED_TEMPLATE_SHA256"]

"""eerdkit: EERD diagnostics, mistake injection, trace refinement, and
alignment-dataset export."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Attribute,
    EerdSchema,
    Entity,
    Participant,
    Relationship,
    Specialization,
    StructureViolation,
    UnionCategory,
    parse_schema,
    serialize_schema,
    validate_structure,
)
from .rubrics import ProblemStatement, RubricPackage, load_rubrics, relevant_statements  # noqa: F401
from .forge import (  # noqa: F401
    MISTAKE_CATEGORIES,
    CorpusPlan,
    MistakeRecord,
    MistakenVariant,
    applicable_categories,
    generate_corpus,
    inject,
)
from .oracle import (  # noqa: F401
    DiagnosticReport,
    Finding,
    MetricSummary,
    diff_schemas,
    match_findings,
    precision_recall_f1,
    summarize,
)
from .refine import (  # noqa: F401
    AuditConfig,
    Claim,
    ClaimAuditor,
    OracleScorer,
    RefinementRun,
    Trace,
    extract_claims,
    factual_audit,
    style_polish,
)
from .exporter import (  # noqa: F401
    PreferencePair,
    PromptContext,
    SftExample,
    TaskInput,
    TrainPlan,
    build_feedback_train,
    build_preference_pairs,
    build_reasoning_sft,
    export_jsonl,
    load_jsonl,
)

"""GPT-assisted postprocessing: enriched captions -> categorized QA pairs.

One LLM call per requested category, a tolerant-outside/strict-inside JSON
parser, and validation that never fabricates: if the model under-produces,
the shortfall is reported, not padded.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

from . import assets
from .errors import (GenerationError, ParseError, ServiceError,
                     ValidationError)
from .gateway import LlmRequest

log = logging.getLogger(__name__)


class Category(str, Enum):
    DETAILED_DESCRIPTION = "detailed_description"
    SUMMARIZATION = "summarization"
    QUESTION_ANSWER = "question_answer"
    CREATIVE_GENERATIVE = "creative_generative"
    CONVERSATIONAL = "conversational"


TEMPLATE_BY_CATEGORY = {
    Category.DETAILED_DESCRIPTION: "qa_detailed_description_v1.txt",
    Category.SUMMARIZATION: "qa_summarization_v1.txt",
    Category.QUESTION_ANSWER: "qa_question_answer_v1.txt",
    Category.CREATIVE_GENERATIVE: "qa_creative_generative_v1.txt",
    Category.CONVERSATIONAL: "qa_conversational_v1.txt",
}


@dataclass(frozen=True)
class InstructionPair:
    video_id: str
    question: str
    answer: str
    category: Category

    def __post_init__(self):
        if not self.question or not self.answer:
            raise ValidationError("question and answer must be non-empty")
        if self.question == self.answer:
            raise ValidationError("question must differ from answer")
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category(self.category))

    def to_json_dict(self) -> dict:
        return {"video_id": self.video_id, "question": self.question,
                "answer": self.answer, "category": self.category.value,
                "source": "gpt_assisted"}


@dataclass
class GenerationSpec:
    pairs_per_category: dict = field(default_factory=lambda: {
        Category.DETAILED_DESCRIPTION: 2,
        Category.SUMMARIZATION: 2,
        Category.QUESTION_ANSWER: 3,
        Category.CREATIVE_GENERATIVE: 2,
        Category.CONVERSATIONAL: 1,
    })
    temperature: float = 0.0
    seed: int = 0
    max_tokens: int = 1024

    def __post_init__(self):
        self.pairs_per_category = {
            Category(k): int(v) for k, v in self.pairs_per_category.items()}
        if not any(v > 0 for v in self.pairs_per_category.values()):
            raise ValidationError("at least one category must request pairs")


def find_json_array(raw: str):
    """Locate the outermost JSON array in text that may carry prose around it."""
    depth = 0
    start = None
    in_string = False
    escape = False
    for i, ch in enumerate(raw):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(raw[start:i + 1])
                    except ValueError:
                        start = None
                        continue
                    if isinstance(parsed, list):
                        return parsed
                    start = None
    return None


@dataclass(frozen=True)
class ParsedPairs:
    pairs: tuple  # (question, answer) tuples
    malformed: int


def parse_llm_pairs(raw: str) -> ParsedPairs:
    """Extract [{"q": ..., "a": ...}] pairs, skipping malformed elements."""
    array = find_json_array(raw)
    if array is None:
        raise ParseError("no JSON array found in LLM output", raw=raw)
    pairs = []
    malformed = 0
    for element in array:
        if (isinstance(element, dict)
                and isinstance(element.get("q"), str) and element["q"].strip()
                and isinstance(element.get("a"), str) and element["a"].strip()):
            pairs.append((element["q"].strip(), element["a"].strip()))
        else:
            malformed += 1
    return ParsedPairs(pairs=tuple(pairs), malformed=malformed)


@dataclass(frozen=True)
class PairValidation:
    errors: tuple
    warnings: tuple

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_pair(pair: InstructionPair, max_answer_chars: int = 4000,
                  lint_questions: bool = True) -> PairValidation:
    """Structural checks plus warning-level lints (never blocking)."""
    errors = []
    warnings = []
    if not pair.question.strip():
        errors.append("empty question")
    if not pair.answer.strip():
        errors.append("empty answer")
    if len(pair.answer) > max_answer_chars:
        errors.append(f"answer longer than {max_answer_chars} chars")
    if lint_questions and pair.category != Category.CREATIVE_GENERATIVE:
        if not pair.question.rstrip().endswith("?"):
            warnings.append("question does not end with a question mark")
    return PairValidation(errors=tuple(errors), warnings=tuple(warnings))


@dataclass
class GenerationResult:
    pairs: tuple
    shortfalls: dict  # category value -> missing count
    errors: dict      # category value -> error string

    @property
    def total(self) -> int:
        return len(self.pairs)


def build_generation_prompt(category: Category, caption: str, count: int) -> str:
    return assets.render(TEMPLATE_BY_CATEGORY[category],
                         caption=caption, count=count)


def generate_instruction_pairs(llm, enriched, spec: GenerationSpec
                               ) -> GenerationResult:
    """Generate pairs per requested category from one enriched caption.

    Per-category LLM failures skip that category with an error record; an
    entirely empty harvest is a GenerationError.
    """
    pairs = []
    shortfalls = {}
    errors = {}
    for category in Category:
        requested = spec.pairs_per_category.get(category, 0)
        if requested <= 0:
            continue
        prompt = build_generation_prompt(category, enriched.enriched_text,
                                         requested)
        try:
            resp = llm.complete(LlmRequest(prompt=prompt,
                                           max_tokens=spec.max_tokens,
                                           temperature=spec.temperature,
                                           seed=spec.seed))
            parsed = parse_llm_pairs(resp.text)
        except (ServiceError, ParseError) as exc:
            log.warning("category %s failed for %s: %s",
                        category.value, enriched.video_id, exc)
            errors[category.value] = str(exc)
            shortfalls[category.value] = requested
            continue
        accepted = 0
        for question, answer in parsed.pairs[:requested]:
            try:
                pair = InstructionPair(video_id=enriched.video_id,
                                       question=question, answer=answer,
                                       category=category)
            except ValidationError:
                continue
            if validate_pair(pair).ok:
                pairs.append(pair)
                accepted += 1
        if accepted < requested:
            shortfalls[category.value] = requested - accepted
    if not pairs:
        raise GenerationError(
            f"no instruction pairs produced for {enriched.video_id}")
    return GenerationResult(pairs=tuple(pairs), shortfalls=shortfalls,
                            errors=errors)

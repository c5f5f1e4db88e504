"""Quantitative evaluation: five-aspect generative bench and zero-shot QA.

A judge LLM scores predictions on a 1-5 integer scale. Out-of-range or
unparsable judgments are protocol errors, never clamped: one re-ask, then the
sample is excluded with the exclusion counted, so denominators are always
explicit (judged + excluded = total). Aggregation folds over a stable sample
order and rounds half-up from exact integer sums, so a scripted judge makes
the whole run deterministic.
"""

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

from . import assets
from .errors import EvaluationError, JudgeProtocolError, ValidationError
from .gateway import LlmRequest

log = logging.getLogger(__name__)


class Aspect(str, Enum):
    CORRECTNESS = "correctness"
    DETAIL_ORIENTATION = "detail_orientation"
    CONTEXTUAL_UNDERSTANDING = "contextual_understanding"
    TEMPORAL_UNDERSTANDING = "temporal_understanding"
    CONSISTENCY = "consistency"


PER_SAMPLE_ASPECTS = (Aspect.CORRECTNESS, Aspect.DETAIL_ORIENTATION,
                      Aspect.CONTEXTUAL_UNDERSTANDING,
                      Aspect.TEMPORAL_UNDERSTANDING)

ASPECT_TITLES = {
    Aspect.CORRECTNESS: "Correctness of Information",
    Aspect.DETAIL_ORIENTATION: "Detail Orientation",
    Aspect.CONTEXTUAL_UNDERSTANDING: "Contextual Understanding",
    Aspect.TEMPORAL_UNDERSTANDING: "Temporal Understanding",
    Aspect.CONSISTENCY: "Consistency",
}

ASPECT_TEMPLATES = {
    Aspect.CORRECTNESS: "judge_correctness_v1.txt",
    Aspect.DETAIL_ORIENTATION: "judge_detail_orientation_v1.txt",
    Aspect.CONTEXTUAL_UNDERSTANDING: "judge_contextual_understanding_v1.txt",
    Aspect.TEMPORAL_UNDERSTANDING: "judge_temporal_understanding_v1.txt",
}


@dataclass(frozen=True)
class GenerativeSample:
    video_id: str
    question: str
    reference_answer: str
    prediction: str  # may be empty; empty predictions are scored, not skipped
    pair_id: str
    consistency_group: str | None = None


@dataclass(frozen=True)
class AspectScore:
    aspect: Aspect
    score: int
    judge_rationale: str = ""

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValidationError(f"score {self.score} outside 1..5")


@dataclass(frozen=True)
class QAJudgment:
    match: bool
    score: int

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValidationError(f"score {self.score} outside 1..5")


@dataclass
class BenchmarkReport:
    kind: str  # generative | zeroshot_qa
    model_tag: str
    sample_count: int
    per_aspect_means: dict = field(default_factory=dict)  # aspect value -> float
    judged: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    accuracy: float | None = None   # fraction in [0, 1]
    accuracy_pct: float | None = None  # half-up to 1 decimal
    mean_score: float | None = None    # half-up to 1 decimal
    unpaired_consistency_samples: int = 0

    def __post_init__(self):
        for value in self.per_aspect_means.values():
            if not 1.0 <= value <= 5.0:
                raise ValidationError(f"aspect mean {value} outside [1, 5]")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError(f"accuracy {self.accuracy} outside [0, 1]")


def round_half_up(numerator: int, denominator: int, places: int,
                  scale: int = 1) -> float:
    """Exact-rational rounding: scale*numerator/denominator, half-up."""
    quantum = Decimal(1).scaleb(-places)
    value = Decimal(numerator) * scale / Decimal(denominator)
    return float(value.quantize(quantum, rounding=ROUND_HALF_UP))


def extract_json_object(raw: str):
    """First balanced {...} block that parses as a JSON object, else None."""
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
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(raw[start:i + 1])
                    except ValueError:
                        start = None
                        continue
                    if isinstance(parsed, dict):
                        return parsed
                    start = None
    return None


def _ask_judge(judge, prompt: str, parse):
    """One ask plus one re-ask; raises JudgeProtocolError when both unusable."""
    last_raw = None
    for _ in range(2):
        resp = judge.complete(LlmRequest(prompt=prompt, max_tokens=256,
                                         temperature=0.0, seed=0))
        last_raw = resp.text
        obj = extract_json_object(resp.text)
        if obj is not None:
            try:
                return parse(obj)
            except (KeyError, TypeError, ValidationError):
                pass
        log.debug("unusable judgment, re-asking: %r", resp.text[:200])
    raise JudgeProtocolError("judge reply unusable after re-ask", raw=last_raw)


def _parse_score(obj) -> tuple:
    score = obj["score"]
    if isinstance(score, bool) or not isinstance(score, int):
        raise ValidationError("score must be an integer")
    if score not in (1, 2, 3, 4, 5):
        raise ValidationError(f"score {score} outside 1..5")
    return score, str(obj.get("reason", ""))


def score_aspect(judge, sample: GenerativeSample, aspect: Aspect) -> AspectScore:
    """Judge one per-sample aspect (consistency needs a pair of samples)."""
    if aspect == Aspect.CONSISTENCY:
        raise ValidationError("consistency is scored over a sample pair")
    prompt = assets.render(ASPECT_TEMPLATES[aspect],
                           pair_id=sample.pair_id, question=sample.question,
                           reference=sample.reference_answer,
                           prediction=sample.prediction)
    score, reason = _ask_judge(judge, prompt, _parse_score)
    return AspectScore(aspect=aspect, score=score, judge_rationale=reason)


def score_consistency(judge, a: GenerativeSample, b: GenerativeSample
                      ) -> AspectScore:
    """One judge call holding both question/prediction pairs, one 1-5 score."""
    if a.pair_id == b.pair_id:
        raise ValidationError("consistency needs two distinct samples")
    if a.consistency_group is None or a.consistency_group != b.consistency_group:
        raise ValidationError("samples must share a consistency group")
    prompt = assets.render("judge_consistency_v1.txt",
                           group_id=a.consistency_group,
                           reference=a.reference_answer,
                           question_a=a.question, prediction_a=a.prediction,
                           question_b=b.question, prediction_b=b.prediction)
    score, reason = _ask_judge(judge, prompt, _parse_score)
    return AspectScore(aspect=Aspect.CONSISTENCY, score=score,
                       judge_rationale=reason)


def consistency_pairs(samples):
    """Disjoint in-group pairs: group members sorted by pair_id, paired (0,1),
    (2,3), ...; a leftover odd member goes unpaired (counted in the report)."""
    groups = {}
    for sample in samples:
        if sample.consistency_group is not None:
            groups.setdefault(sample.consistency_group, []).append(sample)
    pairs = []
    unpaired = 0
    for group_id in sorted(groups):
        members = sorted(groups[group_id], key=lambda s: s.pair_id)
        for i in range(0, len(members) - 1, 2):
            pairs.append((members[i], members[i + 1]))
        if len(members) % 2:
            unpaired += 1
    return pairs, unpaired


def evaluate_generative(judge, samples, model_tag: str = "model"
                        ) -> BenchmarkReport:
    """Score every sample on four aspects plus consistency per group pair.

    Per-aspect means are computed from exact integer sums and rounded half-up
    to 2 decimals. Aspects with zero judged samples are omitted from the means
    but keep their judged/excluded counters.
    """
    samples = list(samples)
    if not samples:
        raise EvaluationError("no samples to evaluate")
    sums = {aspect: 0 for aspect in Aspect}
    judged = {aspect: 0 for aspect in Aspect}
    excluded = {aspect: 0 for aspect in Aspect}

    for sample in samples:
        for aspect in PER_SAMPLE_ASPECTS:
            try:
                result = score_aspect(judge, sample, aspect)
            except JudgeProtocolError:
                excluded[aspect] += 1
                continue
            sums[aspect] += result.score
            judged[aspect] += 1

    pairs, unpaired = consistency_pairs(samples)
    for a, b in pairs:
        try:
            result = score_consistency(judge, a, b)
        except JudgeProtocolError:
            excluded[Aspect.CONSISTENCY] += 1
            continue
        sums[Aspect.CONSISTENCY] += result.score
        judged[Aspect.CONSISTENCY] += 1

    means = {aspect.value: round_half_up(sums[aspect], judged[aspect], 2)
             for aspect in Aspect if judged[aspect] > 0}
    return BenchmarkReport(
        kind="generative", model_tag=model_tag, sample_count=len(samples),
        per_aspect_means=means,
        judged={a.value: judged[a] for a in Aspect},
        excluded={a.value: excluded[a] for a in Aspect},
        unpaired_consistency_samples=unpaired)


def _parse_qa(obj) -> QAJudgment:
    match = obj["match"]
    if isinstance(match, str):
        lowered = match.strip().lower()
        if lowered not in ("yes", "no"):
            raise ValidationError(f"match {match!r} not yes/no")
        match = lowered == "yes"
    elif not isinstance(match, bool):
        raise ValidationError("match must be yes/no")
    score, _ = _parse_score(obj)
    return QAJudgment(match=match, score=score)


def judge_qa(judge, question: str, ground_truth: str, prediction: str,
             record_id: str = "") -> QAJudgment:
    prompt = assets.render("judge_zeroshot_v1.txt", record_id=record_id,
                           question=question, ground_truth=ground_truth,
                           prediction=prediction)
    return _ask_judge(judge, prompt, _parse_qa)


def evaluate_zeroshot(judge, records, model_tag: str = "model"
                      ) -> BenchmarkReport:
    """Accuracy = judge matches / judged; mean score over all judged records.

    Reported as a percentage to 1 decimal and a 1-decimal score, both half-up
    from exact integer counts.
    """
    records = list(records)
    if not records:
        raise EvaluationError("no records to evaluate")
    matches = 0
    score_sum = 0
    judged = 0
    excluded = 0
    for i, record in enumerate(records):
        record_id = str(record.get("id", i))
        try:
            judgment = judge_qa(judge, record["question"],
                                record["ground_truth"], record["prediction"],
                                record_id=record_id)
        except JudgeProtocolError:
            excluded += 1
            continue
        judged += 1
        matches += int(judgment.match)
        score_sum += judgment.score
    if judged == 0:
        raise EvaluationError("every record was excluded; nothing judged")
    return BenchmarkReport(
        kind="zeroshot_qa", model_tag=model_tag, sample_count=len(records),
        judged={"qa": judged}, excluded={"qa": excluded},
        accuracy=matches / judged,
        accuracy_pct=round_half_up(matches, judged, 1, scale=100),
        mean_score=round_half_up(score_sum, judged, 1))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def report_to_json(report: BenchmarkReport) -> str:
    body = {
        "schema": "vidinstruct-report-v1",
        "kind": report.kind,
        "model_tag": report.model_tag,
        "sample_count": report.sample_count,
        "per_aspect_means": report.per_aspect_means,
        "judged": report.judged,
        "excluded": report.excluded,
        "accuracy": report.accuracy,
        "accuracy_pct": report.accuracy_pct,
        "mean_score": report.mean_score,
        "unpaired_consistency_samples": report.unpaired_consistency_samples,
    }
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> BenchmarkReport:
    data = json.loads(text)
    return BenchmarkReport(
        kind=data["kind"], model_tag=data["model_tag"],
        sample_count=data["sample_count"],
        per_aspect_means=data.get("per_aspect_means", {}),
        judged=data.get("judged", {}), excluded=data.get("excluded", {}),
        accuracy=data.get("accuracy"), accuracy_pct=data.get("accuracy_pct"),
        mean_score=data.get("mean_score"),
        unpaired_consistency_samples=data.get("unpaired_consistency_samples", 0))


def render_report(report: BenchmarkReport, fmt: str = "table_text") -> str:
    if fmt == "json":
        return report_to_json(report)
    if fmt != "table_text":
        raise ValidationError(f"unknown report format {fmt!r}")
    if report.kind == "generative":
        width = max(len(t) for t in ASPECT_TITLES.values()) + 2
        lines = [f"{'Evaluation Aspect':<{width}}{report.model_tag}",
                 "-" * (width + max(len(report.model_tag), 5))]
        for aspect in Aspect:
            mean = report.per_aspect_means.get(aspect.value)
            shown = f"{mean:.2f}" if mean is not None else "-"
            lines.append(f"{ASPECT_TITLES[aspect]:<{width}}{shown}")
        return "\n".join(lines) + "\n"
    return render_zeroshot_table([("results", report)])


def render_zeroshot_table(named_reports) -> str:
    """Dataset-per-column layout for one or more zero-shot reports."""
    named_reports = list(named_reports)
    model = named_reports[0][1].model_tag if named_reports else "model"
    header1 = f"{'Model':<16}"
    header2 = f"{'':<16}"
    row = f"{model:<16}"
    for name, report in named_reports:
        header1 += f"{name:<20}"
        header2 += f"{'Accuracy':<10}{'Score':<10}"
        acc = f"{report.accuracy_pct:.1f}" if report.accuracy_pct is not None else "-"
        score = f"{report.mean_score:.1f}" if report.mean_score is not None else "-"
        row += f"{acc:<10}{score:<10}"
    return "\n".join([header1.rstrip() + "\n" + header2.rstrip(),
                      row.rstrip()]) + "\n"

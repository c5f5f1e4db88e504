"""Semi-automatic annotation core: noise filters and LLM-assisted merging.

Three stages turn raw per-keyframe model output into one enriched video-level
caption: a confidence threshold (default 0.7 everywhere, the tagger's
documented operating point), a tag-vocabulary filter that drops any machine
caption containing a content word absent from the frame's own tags, and a
single LLM merge over whatever survives. Filters only ever remove items; no
stage edits caption text.
"""

import logging
import re
from dataclasses import dataclass, field, replace

from . import assets
from .errors import (ConfigError, PipelineWiringError, ServiceError,
                     ValidationError)
from .gateway import (FrameCaption, LlmRequest, TagSet, caption_frame,
                      dense_caption_frame, tag_frame)

log = logging.getLogger(__name__)

WORD_RE = re.compile(r"[a-z0-9]+")
MERGE_TEMPLATE = "merge_prompt_v1.txt"


@dataclass(frozen=True)
class StopwordPolicy:
    """Shipped, versioned stopword set plus the plural-folding switch."""

    stopwords: frozenset
    plural_fold: bool = True

    def __post_init__(self):
        if not self.stopwords:
            raise ConfigError("stopword set must be non-empty")


def default_policy() -> StopwordPolicy:
    return StopwordPolicy(stopwords=assets.stopwords())


@dataclass(frozen=True)
class Thresholds:
    caption_min: float = 0.7
    region_min: float = 0.7
    tag_min: float = 0.7

    def __post_init__(self):
        for name, value in (("caption_min", self.caption_min),
                            ("region_min", self.region_min),
                            ("tag_min", self.tag_min)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class FrameAnnotations:
    """Everything the off-the-shelf models said about one keyframe."""

    frame_index: int
    caption: FrameCaption | None
    region_captions: tuple
    tags: TagSet
    degraded: tuple = ()  # capability names that failed for this frame

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError("frame_index must be >= 0")


@dataclass(frozen=True)
class EnrichedCaption:
    video_id: str
    base_caption: str
    enriched_text: str
    provenance: dict
    source: str = "semi_automatic"

    def __post_init__(self):
        if not self.enriched_text:
            raise ValidationError("enriched_text must be non-empty")
        if self.source not in ("semi_automatic", "human"):
            raise ValidationError(f"unknown source {self.source!r}")
        for stage, counts in self.provenance.get("stages", {}).items():
            if counts["kept"] + counts["dropped"] != counts["input"]:
                raise ValidationError(
                    f"stage {stage}: kept+dropped != input in provenance")

    def to_json_dict(self) -> dict:
        return {"video_id": self.video_id, "base_caption": self.base_caption,
                "enriched_text": self.enriched_text,
                "provenance": self.provenance, "source": self.source}

    @classmethod
    def from_json_dict(cls, data: dict) -> "EnrichedCaption":
        return cls(video_id=data["video_id"], base_caption=data["base_caption"],
                   enriched_text=data["enriched_text"],
                   provenance=data.get("provenance", {}),
                   source=data.get("source", "semi_automatic"))


def threshold_filter(ann: FrameAnnotations, thresholds: Thresholds):
    """Drop every item whose confidence is below its threshold (>= keeps).

    Ordering is preserved. Returns (filtered annotations, per-kind counts).
    """
    kept_caption = ann.caption
    if ann.caption is not None and ann.caption.confidence < thresholds.caption_min:
        kept_caption = None
    kept_regions = tuple(r for r in ann.region_captions
                         if r.confidence >= thresholds.region_min)
    kept_tags = TagSet(tags=tuple(t for t in ann.tags.tags
                                  if t.confidence >= thresholds.tag_min))
    counts = {
        "captions": {"input": int(ann.caption is not None),
                     "kept": int(kept_caption is not None)},
        "regions": {"input": len(ann.region_captions), "kept": len(kept_regions)},
        "tags": {"input": len(ann.tags.tags), "kept": len(kept_tags.tags)},
    }
    for c in counts.values():
        c["dropped"] = c["input"] - c["kept"]
    filtered = replace(ann, caption=kept_caption, region_captions=kept_regions,
                       tags=kept_tags)
    return filtered, counts


def _fold(word: str, policy: StopwordPolicy) -> str:
    if (policy.plural_fold and len(word) >= 4 and word.endswith("s")
            and not word.endswith("ss")):
        return word[:-1]
    return word


def content_words(caption_text: str, policy: StopwordPolicy) -> set:
    """Lowercase alphanumeric tokens minus stopwords, plurals folded."""
    words = set()
    for token in WORD_RE.findall(caption_text.lower()):
        if token in policy.stopwords:
            continue
        words.add(_fold(token, policy))
    return words


def tag_words(tags: TagSet, policy: StopwordPolicy) -> set:
    """Tag labels tokenized and plural-folded the same way as caption words."""
    words = set()
    for label in tags.labels():
        for token in WORD_RE.findall(label):
            words.add(_fold(token, policy))
    return words


@dataclass(frozen=True)
class VocabDrop:
    frame_index: int
    text: str
    offending: tuple  # sorted words missing from the frame's tags


@dataclass(frozen=True)
class VocabFilterResult:
    kept: tuple    # (frame_index, text) in input order
    dropped: tuple  # VocabDrop in input order


def tag_vocabulary_filter(captions, tags_by_frame, policy: StopwordPolicy
                          ) -> VocabFilterResult:
    """Keep a caption iff every content word appears in its own frame's tags.

    `captions` is a sequence of (frame_index, text). A caption whose frame is
    missing from `tags_by_frame` is a pipeline wiring bug, not data noise.
    """
    vocab_cache = {}
    kept, dropped = [], []
    for frame_index, text in captions:
        if frame_index not in tags_by_frame:
            raise PipelineWiringError(
                f"caption references frame {frame_index} absent from tag map")
        if frame_index not in vocab_cache:
            vocab_cache[frame_index] = tag_words(tags_by_frame[frame_index], policy)
        offending = content_words(text, policy) - vocab_cache[frame_index]
        if offending:
            dropped.append(VocabDrop(frame_index, text, tuple(sorted(offending))))
        else:
            kept.append((frame_index, text))
    return VocabFilterResult(kept=tuple(kept), dropped=tuple(dropped))


def _frame_blocks(context) -> str:
    blocks = []
    for ann in context:
        lines = [f"Frame {ann.frame_index}:"]
        if ann.caption is not None:
            lines.append(f"  caption: {ann.caption.text}")
        for region in ann.region_captions:
            lines.append(f"  region: {region.text}")
        if ann.tags.tags:
            lines.append(f"  tags: {', '.join(ann.tags.labels())}")
        blocks.append("\n".join(lines))
    if not blocks:
        return "(no per-frame context survived filtering)"
    return "\n\n".join(blocks)


def build_merge_prompt(base_caption: str, context) -> str:
    return assets.render(MERGE_TEMPLATE, base_caption=base_caption,
                         frame_blocks=_frame_blocks(context))


def merge_to_video_caption(llm, video_id: str, base_caption: str,
                           per_frame_context, provenance=None,
                           max_tokens: int = 768) -> EnrichedCaption:
    """One LLM call merging surviving frame context into a video-level caption.

    Truncation triggers a single retry with region captions dropped; if the
    LLM stays unusable the fallback concatenates the base caption with the
    surviving frame captions and flags the record.
    """
    if not base_caption:
        raise ValidationError("base_caption must be non-empty")
    provenance = dict(provenance or {})
    provenance.setdefault("llm_model", getattr(llm, "model_tag", "unknown"))
    provenance["fallback"] = False
    provenance["merge_retried"] = False

    context = list(per_frame_context)
    attempts = [context]
    reduced = [replace(ann, region_captions=()) for ann in context]
    attempts.append(reduced)

    for i, ctx in enumerate(attempts):
        prompt = build_merge_prompt(base_caption, ctx)
        try:
            resp = llm.complete(LlmRequest(prompt=prompt, max_tokens=max_tokens,
                                           temperature=0.0, seed=0))
        except ServiceError as exc:
            log.warning("merge LLM call failed for %s: %s", video_id, exc)
            break
        if resp.finish_reason == "complete":
            provenance["merge_retried"] = i > 0
            return EnrichedCaption(video_id=video_id, base_caption=base_caption,
                                   enriched_text=resp.text,
                                   provenance=provenance)
        provenance["merge_retried"] = True

    provenance["fallback"] = True
    surviving = [ann.caption.text for ann in context if ann.caption is not None]
    fallback = " ".join([base_caption] + surviving)
    return EnrichedCaption(video_id=video_id, base_caption=base_caption,
                           enriched_text=fallback, provenance=provenance)


@dataclass
class EnrichmentConfig:
    thresholds: Thresholds = field(default_factory=Thresholds)
    policy: StopwordPolicy = field(default_factory=default_policy)
    max_merge_tokens: int = 768


def gather_frame_annotations(bundle, video_id: str, frame_index: int, frame
                             ) -> FrameAnnotations:
    """Call captioner, dense captioner, and tagger for one keyframe.

    A failing capability degrades to an empty contribution for that frame and
    is recorded, so one flaky service cannot sink the whole video.
    """
    key = f"{video_id}/{frame_index}"
    degraded = []
    caption = None
    regions = ()
    tags = TagSet(tags=())
    try:
        caption = caption_frame(bundle.captioner, frame, key)
    except ServiceError as exc:
        log.warning("captioner degraded for %s: %s", key, exc)
        degraded.append("caption")
    try:
        regions = tuple(dense_caption_frame(bundle.dense_captioner, frame, key))
    except ServiceError as exc:
        log.warning("dense captioner degraded for %s: %s", key, exc)
        degraded.append("dense_caption")
    try:
        tags = tag_frame(bundle.tagger, frame, key)
    except ServiceError as exc:
        log.warning("tagger degraded for %s: %s", key, exc)
        degraded.append("tags")
    return FrameAnnotations(frame_index=frame_index, caption=caption,
                            region_captions=regions, tags=tags,
                            degraded=tuple(degraded))


def enrich_video(video_id: str, base_caption: str, keyframes, bundle,
                 config: EnrichmentConfig | None = None) -> EnrichedCaption:
    """Full semi-automatic pipeline for one video.

    Gathers annotations per keyframe, applies the threshold filter, runs both
    caption streams through the tag-vocabulary filter, then merges with the
    LLM. Provenance records stage-by-stage kept/dropped counts and any
    degraded frames.
    """
    config = config or EnrichmentConfig()
    annotations = [
        gather_frame_annotations(bundle, video_id, frame_index, frame)
        for frame_index, frame in zip(keyframes.indices, keyframes.frames)
    ]

    threshold_total = {"input": 0, "kept": 0, "dropped": 0}
    filtered = []
    for ann in annotations:
        out, counts = threshold_filter(ann, config.thresholds)
        filtered.append(out)
        for c in counts.values():
            for k in threshold_total:
                threshold_total[k] += c[k]

    tags_by_frame = {ann.frame_index: ann.tags for ann in filtered}
    frame_caps = [(a.frame_index, a.caption.text) for a in filtered
                  if a.caption is not None]
    region_caps = [(a.frame_index, r.text) for a in filtered
                   for r in a.region_captions]
    cap_result = tag_vocabulary_filter(frame_caps, tags_by_frame, config.policy)
    region_result = tag_vocabulary_filter(region_caps, tags_by_frame, config.policy)

    kept_caps = set(cap_result.kept)
    kept_regions = {}
    for frame_index, text in region_result.kept:
        kept_regions.setdefault(frame_index, []).append(text)

    surviving = []
    for ann in filtered:
        caption = ann.caption
        if caption is not None and (ann.frame_index, caption.text) not in kept_caps:
            caption = None
        regions = tuple(r for r in ann.region_captions
                        if r.text in kept_regions.get(ann.frame_index, []))
        surviving.append(replace(ann, caption=caption, region_captions=regions))

    vocab_input = len(frame_caps) + len(region_caps)
    vocab_kept = len(cap_result.kept) + len(region_result.kept)
    provenance = {
        "stages": {
            "threshold": threshold_total,
            "vocabulary": {"input": vocab_input, "kept": vocab_kept,
                           "dropped": vocab_input - vocab_kept},
        },
        "vocabulary_drops": [
            {"frame": d.frame_index, "text": d.text, "offending": list(d.offending)}
            for d in (*cap_result.dropped, *region_result.dropped)
        ],
        "degraded_frames": {str(a.frame_index): list(a.degraded)
                            for a in annotations if a.degraded},
        "keyframes": list(keyframes.indices),
    }
    return merge_to_video_caption(bundle.llm, video_id, base_caption, surviving,
                                  provenance=provenance,
                                  max_tokens=config.max_merge_tokens)

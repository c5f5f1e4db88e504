"""Single entry point wiring all modules into the dataset and eval workflows.

Every subcommand is reproducible given (config, fixtures, seed); only `serve`
and `mock-models` open a listening socket. Exit codes: 0 success, 2 usage or
configuration error, 1 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import adapter, kernels
from .annotation import AnnotationService, AnnotationStore
from .config import PipelineConfig, load_config
from .enrichment import (EnrichedCaption, EnrichmentConfig, Thresholds,
                         enrich_video)
from .errors import ConfigError, VidinstructError
from .evalbench import (GenerativeSample, evaluate_generative,
                        evaluate_zeroshot, render_report, report_to_json)
from .gateway import (EncoderConfig, GatewayBundle, LlmClient, ServiceClient)
from .instructions import (Category, GenerationSpec, generate_instruction_pairs)
from .keyframes import ingest_frames, save_keyframes, select_keyframes
from .mockmodels import MockModelServer, load_fixtures

log = logging.getLogger("vidinstruct")


class _JsonLogFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(),
                           "logger": record.name,
                           "message": record.getMessage()}, sort_keys=True)


def _setup_logging(json_logs: bool):
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(_JsonLogFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)


def _client(url: str, cfg: PipelineConfig) -> ServiceClient:
    if not url:
        raise ConfigError("a required service endpoint is not configured")
    return ServiceClient(url, api_key=cfg.api_key or None,
                         max_attempts=cfg.max_attempts,
                         backoff_base=cfg.backoff_base)


def _bundle(cfg: PipelineConfig) -> GatewayBundle:
    return GatewayBundle(
        captioner=_client(cfg.captioner_url, cfg),
        dense_captioner=_client(cfg.dense_captioner_url, cfg),
        tagger=_client(cfg.tagger_url, cfg),
        llm=LlmClient(_client(cfg.llm_url, cfg)),
        encoder=_client(cfg.encoder_url, cfg) if cfg.encoder_url else None,
        encoder_config=EncoderConfig(endpoint=cfg.encoder_url,
                                     patch_size=cfg.patch_size,
                                     input_side=cfg.input_side,
                                     embed_dim=cfg.embed_dim))


def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for name in ("encoder_url", "captioner_url", "dense_captioner_url",
                 "tagger_url", "llm_url", "judge_url", "keyframe_k",
                 "caption_min", "region_min", "tag_min", "seed",
                 "decoder_template"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    if getattr(args, "endpoint", None):
        for name in ("encoder_url", "captioner_url", "dense_captioner_url",
                     "tagger_url", "llm_url", "judge_url"):
            overrides.setdefault(name, None)
            if overrides[name] is None:
                overrides[name] = args.endpoint
    return load_config(overrides, config_file=getattr(args, "config", None))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    batch = ingest_frames(args.frames, video_id=args.video_id,
                          stride=args.stride, fps=args.fps,
                          decoder_template=cfg.decoder_template or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    files = []
    for i, frame in enumerate(batch.frames):
        name = f"frame_{i:06d}.png"
        Image.fromarray(frame).save(out / name)
        files.append(name)
    manifest = {"video_id": batch.video_id, "files": files,
                "timestamps": batch.timestamps.tolist()}
    (out / "frames.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"ingested {len(batch)} frames -> {out}")
    return 0


def cmd_keyframes(args) -> int:
    cfg = _config_from_args(args)
    batch = ingest_frames(args.frames, video_id=args.video_id,
                          stride=args.stride, fps=args.fps,
                          decoder_template=cfg.decoder_template or None)
    keyframes = select_keyframes(batch, k=args.k or cfg.keyframe_k)
    manifest_path = save_keyframes(keyframes, args.out)
    print(f"selected {len(keyframes.indices)} keyframes -> {manifest_path}")
    return 0


def _load_videos_manifest(path) -> list:
    manifest_path = Path(path)
    videos = json.loads(manifest_path.read_text())
    for entry in videos:
        frames_dir = Path(entry["frames_dir"])
        if not frames_dir.is_absolute():
            entry["frames_dir"] = str(manifest_path.parent / frames_dir)
    return videos


def cmd_enrich(args) -> int:
    cfg = _config_from_args(args)
    bundle = _bundle(cfg)
    enrich_cfg = EnrichmentConfig(thresholds=Thresholds(
        caption_min=cfg.caption_min, region_min=cfg.region_min,
        tag_min=cfg.tag_min))
    videos = _load_videos_manifest(args.videos)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for entry in videos:
            batch = ingest_frames(entry["frames_dir"],
                                  video_id=entry["video_id"])
            keyframes = select_keyframes(batch, k=args.k or cfg.keyframe_k)
            enriched = enrich_video(entry["video_id"], entry["caption"],
                                    keyframes, bundle, enrich_cfg)
            fh.write(json.dumps(enriched.to_json_dict(), sort_keys=True) + "\n")
            log.info("enriched %s (%d keyframes)", entry["video_id"],
                     len(keyframes.indices))
    print(f"wrote {len(videos)} enriched captions -> {out}")
    return 0


def _parse_per_category(spec_text: str) -> dict:
    counts = {}
    for part in spec_text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, count = part.partition("=")
        try:
            counts[Category(name.strip())] = int(count)
        except ValueError:
            raise ConfigError(f"bad per-category spec {part!r}") from None
    if not counts:
        raise ConfigError("per-category spec is empty")
    return counts


def cmd_genqa(args) -> int:
    cfg = _config_from_args(args)
    llm = LlmClient(_client(cfg.llm_url, cfg))
    spec = GenerationSpec(pairs_per_category=_parse_per_category(args.per_category),
                          seed=cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    total = 0
    with open(args.infile) as src, out.open("w") as fh:
        for line in src:
            line = line.strip()
            if not line:
                continue
            enriched = EnrichedCaption.from_json_dict(json.loads(line))
            result = generate_instruction_pairs(llm, enriched, spec)
            for pair in result.pairs:
                fh.write(json.dumps(pair.to_json_dict(), sort_keys=True) + "\n")
            total += result.total
            if result.shortfalls:
                log.warning("shortfalls for %s: %s", enriched.video_id,
                            result.shortfalls)
    print(f"wrote {total} instruction pairs -> {out}")
    return 0


def _judge(cfg: PipelineConfig) -> LlmClient:
    return LlmClient(_client(cfg.judge_url, cfg), model_tag="judge")


def cmd_eval_gen(args) -> int:
    cfg = _config_from_args(args)
    samples = []
    for line in open(args.samples):
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        samples.append(GenerativeSample(
            video_id=row.get("video_id", ""), question=row["question"],
            reference_answer=row.get("reference_answer") or row.get("answer", ""),
            prediction=row.get("prediction", ""),
            pair_id=str(row.get("pair_id", len(samples))),
            consistency_group=row.get("consistency_group")))
    report = evaluate_generative(_judge(cfg), samples,
                                 model_tag=args.model_tag)
    Path(args.out).write_text(report_to_json(report))
    if args.table:
        print(render_report(report, "table_text"), end="")
    else:
        print(f"wrote report -> {args.out}")
    return 0


def cmd_eval_qa(args) -> int:
    cfg = _config_from_args(args)
    records = [json.loads(line) for line in open(args.records)
               if line.strip()]
    report = evaluate_zeroshot(_judge(cfg), records, model_tag=args.model_tag)
    Path(args.out).write_text(report_to_json(report))
    if args.table:
        print(render_report(report, "table_text"), end="")
    else:
        print(f"wrote report -> {args.out}")
    return 0


def _parse_listen(listen: str):
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    host, port = _parse_listen(args.listen)
    store = AnnotationStore(args.store, auto_approve=args.auto_approve)
    service = AnnotationService(store, host=host, port=port)
    print(f"annotation service on {service.base_url} (store: {args.store})",
          flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_export(args) -> int:
    store = AnnotationStore(args.store)
    if args.semi_auto:
        added = 0
        for line in open(args.semi_auto):
            line = line.strip()
            if line:
                added += store.add_semi_automatic(json.loads(line))
        log.info("imported %d semi-automatic records", added)
    include = tuple(part.strip() for part in args.include.split(",") if part.strip())
    count = store.export_dataset(args.out, include=include)
    print(f"exported {count} records -> {args.out}")
    return 0


def cmd_mock_models(args) -> int:
    host, port = _parse_listen(args.listen)
    fixtures = load_fixtures(args.fixtures) if args.fixtures else {}
    server = MockModelServer(fixtures, host=host, port=port)
    print(f"mock model services on {server.base_url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_adapter_demo(args) -> int:
    cfg = _config_from_args(args)
    t, n = args.T or 8, args.N or cfg.tokens_n
    d, k = args.D or cfg.embed_dim, args.K or cfg.output_dim
    kernels.warmup()

    data = np.empty((t, n, d))
    for i in range(t):
        data[i] = float(i)  # echo-mode embeddings, same fill the mock uses
    x = adapter.FrameEmbeddingTensor(data)
    projection = adapter.init_projection(d, k, seed=cfg.seed)
    features = adapter.concat_features(adapter.temporal_pool(x),
                                       adapter.spatial_pool(x))
    tokens = adapter.project(features, projection)

    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(3):
        dims = rng.integers(1, 7, size=4)
        xt = adapter.FrameEmbeddingTensor(rng.normal(size=tuple(dims[:3])))
        proj = adapter.LinearProjection(rng.normal(size=(dims[2], dims[3])),
                                        rng.normal(size=dims[3]))
        upstream = rng.normal(size=(int(dims[0] + dims[1]), int(dims[3])))
        worst = max(worst, _gradient_check(xt, proj, upstream))
    status = "PASS" if worst <= 1e-4 else "FAIL"

    print(f"v: {features.combined.shape[0]}x{features.combined.shape[1]}, "
          f"Q_v: {tokens.shape[0]}x{tokens.shape[1]}, grad-check: {status}")
    prompt = adapter.build_prompt("Describe the video", tokens.shape[0])
    print(f"prompt: {prompt.rendered_text}")
    print(f"backend: {kernels.backend()}")
    return 0 if status == "PASS" else 1


def _gradient_check(x, projection, upstream, eps=1e-5) -> float:
    grads = adapter.adapter_backward(x, projection, upstream)

    def loss(data):
        return float(np.sum(upstream * adapter.adapter_forward(
            adapter.FrameEmbeddingTensor(data), projection)))

    worst = 0.0
    flat = x.data.ravel()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        up = loss(bumped.reshape(x.data.shape))
        bumped[i] -= 2 * eps
        down = loss(bumped.reshape(x.data.shape))
        fd = (up - down) / (2 * eps)
        ana = grads.grad_x.ravel()[i]
        worst = max(worst, abs(ana - fd) / max(1.0, abs(ana), abs(fd)))
    return worst


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidinstruct",
        description="Video-instruction dataset factory and evaluation bench")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--json-logs", action="store_true",
                        help="emit machine-readable JSON log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_ingest_opts(p):
        p.add_argument("--frames", required=True,
                       help="directory of image files or a video file")
        p.add_argument("--video-id", default=None)
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--fps", type=float, default=None)
        p.add_argument("--decoder-template", default=None,
                       help="shell command with {input} and {outdir} slots")

    p = sub.add_parser("ingest", help="normalize frames into a directory")
    add_ingest_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("keyframes", help="select key frames")
    add_ingest_opts(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keyframes)

    p = sub.add_parser("enrich", help="semi-automatic caption enrichment")
    p.add_argument("--videos", required=True,
                   help="JSON manifest: [{video_id, caption, frames_dir}]")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--endpoint", help="one base URL for every model service")
    p.add_argument("--captioner-url", dest="captioner_url")
    p.add_argument("--dense-captioner-url", dest="dense_captioner_url")
    p.add_argument("--tagger-url", dest="tagger_url")
    p.add_argument("--llm-url", dest="llm_url")
    p.add_argument("--caption-min", dest="caption_min", type=float)
    p.add_argument("--region-min", dest="region_min", type=float)
    p.add_argument("--tag-min", dest="tag_min", type=float)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("genqa", help="generate instruction pairs")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-category", dest="per_category",
                   default="detailed_description=2,summarization=2,"
                           "question_answer=3,creative_generative=2,"
                           "conversational=1")
    p.add_argument("--endpoint", help="base URL for the LLM service")
    p.add_argument("--llm-url", dest="llm_url")
    p.set_defaults(func=cmd_genqa)

    p = sub.add_parser("eval-gen", help="five-aspect generative benchmark")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-tag", default="model")
    p.add_argument("--table", action="store_true")
    p.add_argument("--endpoint", help="base URL for the judge service")
    p.add_argument("--judge-url", dest="judge_url")
    p.set_defaults(func=cmd_eval_gen)

    p = sub.add_parser("eval-qa", help="zero-shot QA evaluation")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-tag", default="model")
    p.add_argument("--table", action="store_true")
    p.add_argument("--endpoint", help="base URL for the judge service")
    p.add_argument("--judge-url", dest="judge_url")
    p.set_defaults(func=cmd_eval_qa)

    p = sub.add_parser("serve", help="run the annotation REST service")
    p.add_argument("--store", required=True)
    p.add_argument("--listen", default="127.0.0.1:8600")
    p.add_argument("--auto-approve", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="export the enriched-caption dataset")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include", default="human,semi_automatic")
    p.add_argument("--semi-auto", dest="semi_auto",
                   help="enriched JSONL to import before exporting")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("mock-models", help="serve deterministic model mocks")
    p.add_argument("--fixtures", default=None)
    p.add_argument("--listen", default="127.0.0.1:8601")
    p.set_defaults(func=cmd_mock_models)

    p = sub.add_parser("adapter-demo",
                       help="pool, project, and gradient-check on mock embeddings")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--D", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.set_defaults(func=cmd_adapter_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.json_logs)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except VidinstructError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

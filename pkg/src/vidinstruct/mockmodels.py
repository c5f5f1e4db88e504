"""Deterministic mock servers for every model capability.

Each response is a pure function of (request, fixture set): fixtures pin
captions/regions/tags by frame key and LLM replies by prompt hash, and
anything unpinned falls back to synthesis derived only from the request
bytes. Fault injection is keyed on the client-sent X-Attempt header, so even
"flaky" behaviour is reproducible. This is what makes whole-pipeline runs
against the mocks byte-for-byte repeatable.

Launch standalone with `vidinstruct mock-models --fixtures <dir>` or
in-process with MockModelServer(...).start().
"""

import base64
import hashlib
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .gateway import LlmRequest, LlmResponse

MERGE_MARKER = "MERGE-CAPTIONS-V1"
QA_MARKER = "GENERATE-QA-V1"
JUDGE_ASPECT_MARKER = "JUDGE-ASPECT-V1"
JUDGE_QA_MARKER = "JUDGE-QA-V1"

_QA_STUBS = {
    "detailed_description": "What does the video show in detail",
    "summarization": "How would you summarize the video",
    "question_answer": "What is happening in the video",
    "creative_generative": "What would be a fitting title for the video",
    "conversational": "Could you tell me more about the video",
}


def load_fixtures(fixtures_dir) -> dict:
    """Merge every *.json file in the directory (sorted name order wins last)."""
    merged = {}
    root = Path(fixtures_dir)
    for path in sorted(root.glob("*.json")):
        data = json.loads(path.read_text())
        for key, value in data.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
    return merged


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _hash_int(text: str) -> int:
    return int(_sha(text)[:12], 16)


def synth_embeddings(frames, embed_dim, tokens, mode="echo", cls_token=False):
    """Echo mode fills frame i with the value i; hash mode derives one value
    per frame from its pixel bytes. Optionally prepends a CLS-style token."""
    t = len(frames)
    n = tokens + (1 if cls_token else 0)
    data = np.empty((t, n, embed_dim), dtype=np.float32)
    for i, frame in enumerate(frames):
        if mode == "hash":
            value = (_hash_int(frame["pixels_b64"]) % 1_000_000) / 1_000_000.0
        else:
            value = float(i)
        data[i, :, :] = value
        if cls_token:
            data[i, 0, :] = -1.0
    return data


def _sentences(text: str):
    parts = [p.strip() for p in re.split(r"(?<=[.!?])\s+", text) if p.strip()]
    return parts or [text.strip() or "nothing"]


def synthesize_completion(prompt: str, fixtures: dict) -> dict:
    """Deterministic /complete behaviour shared by server and ScriptedCompleter."""
    scripted = fixtures.get("completions", {}).get(_sha(prompt))
    if scripted is not None:
        return {"text": scripted, "finish_reason": "complete"}
    for rule in fixtures.get("completion_rules", []):
        if rule["contains"] in prompt:
            return {"text": rule["reply"],
                    "finish_reason": rule.get("finish_reason", "complete")}

    header = prompt.splitlines()[0] if prompt else ""
    if header.startswith(MERGE_MARKER):
        base = _extract(prompt, r"Ground-truth caption: (.*)")
        parts = []
        for m in re.finditer(r"^  (?:caption|region): (.*)$", prompt, re.M):
            text = m.group(1).strip().rstrip(".")
            if text and text not in parts:
                parts.append(text)
        if parts:
            text = f"{base} Across the key frames: {'; '.join(parts)}."
        else:
            text = base
        return {"text": text, "finish_reason": "complete"}

    if header.startswith(QA_MARKER):
        category = _extract(header, r"category=(\S+)")
        count = int(_extract(header, r"count=(\d+)"))
        description = prompt.split("Description:", 1)[-1].strip()
        sentences = _sentences(description)
        stub = _QA_STUBS.get(category, "What does the video show")
        pairs = [{"q": f"{stub} (part {i + 1})?",
                  "a": sentences[i % len(sentences)]}
                 for i in range(count)]
        return {"text": json.dumps(pairs), "finish_reason": "complete"}

    if header.startswith(JUDGE_ASPECT_MARKER):
        aspect = _extract(header, r"aspect=(\S+)")
        sample = _extract(prompt, r"Sample: (.*)")
        scripted = fixtures.get("judge_scores", {}).get(f"{aspect}/{sample}")
        if scripted is None:
            score = (_hash_int(prompt) % 5) + 1
            reply = {"score": score, "reason": "hash-derived"}
        elif isinstance(scripted, dict):
            reply = scripted
        else:
            reply = {"score": scripted, "reason": "scripted"}
        return {"text": json.dumps(reply), "finish_reason": "complete"}

    if header.startswith(JUDGE_QA_MARKER):
        record = _extract(prompt, r"Record: (.*)")
        scripted = fixtures.get("qa_judgments", {}).get(record)
        if scripted is None:
            h = _hash_int(prompt)
            scripted = {"match": "yes" if h % 2 else "no", "score": (h % 5) + 1}
        return {"text": json.dumps(scripted), "finish_reason": "complete"}

    return {"text": f"ACK {_sha(prompt)[:8]}", "finish_reason": "complete"}


def _extract(text: str, pattern: str) -> str:
    m = re.search(pattern, text)
    return m.group(1).strip() if m else ""


class ScriptedCompleter:
    """In-process completer: replies from a queue, else fixture synthesis.

    Implements the same `.complete(LlmRequest) -> LlmResponse` protocol as
    gateway.LlmClient, so library code cannot tell it apart from the service.
    """

    def __init__(self, replies=None, fixtures=None, model_tag="scripted"):
        self.replies = list(replies or [])
        self.fixtures = fixtures or {}
        self.model_tag = model_tag
        self.calls = []

    def complete(self, req: LlmRequest) -> LlmResponse:
        self.calls.append(req.prompt)
        if self.replies:
            reply = self.replies.pop(0)
            if isinstance(reply, LlmResponse):
                return reply
            if isinstance(reply, Exception):
                raise reply
            return LlmResponse(text=reply, finish_reason="complete")
        body = synthesize_completion(req.prompt, self.fixtures)
        return LlmResponse(text=body["text"], finish_reason=body["finish_reason"])


class _Stats:
    def __init__(self):
        self.lock = threading.Lock()
        self.requests = {}
        self.keys = {}

    def record(self, route, idempotency_key):
        with self.lock:
            self.requests[route] = self.requests.get(route, 0) + 1
            self.keys.setdefault(route, set())
            if idempotency_key:
                self.keys[route].add(idempotency_key)

    def snapshot(self):
        with self.lock:
            return {
                "requests": dict(self.requests),
                "unique_idempotency_keys": {r: len(k) for r, k in self.keys.items()},
            }


class MockModelServer:
    """Loopback HTTP server exposing all five capabilities from one port."""

    def __init__(self, fixtures=None, host="127.0.0.1", port=0):
        self.fixtures = dict(fixtures or {})
        self.stats = _Stats()
        handler = _make_handler(self.fixtures, self.stats)
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def _make_handler(fixtures, stats):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _send(self, status, body):
            raw = json.dumps(body, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _fail(self, status, code, message):
            self._send(status, {"code": code, "message": message})

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"ok": True})
            elif self.path == "/stats":
                self._send(200, stats.snapshot())
            else:
                self._fail(404, "not_found", self.path)

        def do_POST(self):
            route = self.path
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length) or b"{}")
            except ValueError:
                self._fail(400, "bad_json", "request body is not JSON")
                return
            stats.record(route, self.headers.get("X-Idempotency-Key"))
            attempt = int(self.headers.get("X-Attempt", "1"))
            faults = fixtures.get("faults", {})

            limit = faults.get("rate_limit", {}).get(route.lstrip("/"), 0)
            if attempt <= limit:
                self._fail(429, "rate_limited", f"attempt {attempt} throttled")
                return

            if route == "/encode":
                self._encode(payload)
            elif route in ("/caption", "/dense_caption", "/tags"):
                self._lookup(route.lstrip("/"), payload, faults)
            elif route == "/complete":
                self._complete(payload)
            else:
                self._fail(404, "not_found", route)

        def _encode(self, payload):
            cfg = fixtures.get("encoder", {})
            side = payload["input_side"] // payload["patch_size"]
            data = synth_embeddings(payload["frames"], payload["embed_dim"],
                                    side * side, mode=cfg.get("mode", "echo"),
                                    cls_token=cfg.get("cls_token", False))
            self._send(200, {
                "shape": list(data.shape), "dtype": "float32",
                "data_b64": base64.b64encode(data.tobytes()).decode("ascii"),
            })

        def _lookup(self, capability, payload, faults):
            key = payload.get("key", "")
            if key in faults.get("fail_keys", {}).get(capability, []):
                self._fail(503, "unavailable", f"{capability} down for {key}")
                return
            table = {"caption": "captions", "dense_caption": "dense_captions",
                     "tags": "tags"}[capability]
            entry = fixtures.get(table, {}).get(key)
            if entry is None:
                self._fail(404, "unknown_key", f"no fixture for {key!r} in {table}")
                return
            if capability == "caption":
                self._send(200, entry)
            elif capability == "dense_caption":
                self._send(200, {"regions": entry})
            else:
                self._send(200, {"tags": entry})

        def _complete(self, payload):
            prompt = payload.get("prompt", "")
            if not prompt:
                self._fail(400, "empty_prompt", "prompt required")
                return
            faults = fixtures.get("faults", {})
            for marker in faults.get("truncate_containing", []):
                if marker in prompt:
                    self._send(200, {"text": prompt[:40],
                                     "finish_reason": "length"})
                    return
            self._send(200, synthesize_completion(prompt, fixtures))

    return Handler

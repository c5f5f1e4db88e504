"""Human-assisted annotation as a system: durable task store plus REST API.

Persistence is an append-only JSONL journal with an in-memory index rebuilt on
startup; every append is flushed and fsynced before the call returns, so a
killed process never loses an acknowledged write. Compaction rewrites the
journal from the live index via an atomic replace. No external storage
dependency.

Status machine: open -> submitted -> approved, never backwards. Approved
tasks are immutable. With auto_approve=True a submission lands directly in
the approved state (single-step annotation).
"""

import hashlib
import json
import os
import shutil
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .enrichment import EnrichedCaption
from .errors import (ImmutableTaskError, NotFoundError, StatusTransitionError,
                     ValidationError)

STATUSES = ("open", "submitted", "approved")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _task_id(video_id: str, base_caption: str) -> str:
    digest = hashlib.sha256(
        f"{video_id}\x00{base_caption}".encode("utf-8")).hexdigest()
    return f"t{digest[:16]}"


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    video_id: str
    base_caption: str
    keyframe_refs: tuple = ()
    auto_context: dict | None = None
    status: str = "open"
    created_at: str = ""
    updated_at: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")

    def to_json_dict(self) -> dict:
        return {"task_id": self.task_id, "video_id": self.video_id,
                "base_caption": self.base_caption,
                "keyframe_refs": list(self.keyframe_refs),
                "auto_context": self.auto_context, "status": self.status,
                "created_at": self.created_at, "updated_at": self.updated_at}

    @classmethod
    def from_json_dict(cls, data: dict) -> "AnnotationTask":
        return cls(task_id=data["task_id"], video_id=data["video_id"],
                   base_caption=data["base_caption"],
                   keyframe_refs=tuple(data.get("keyframe_refs", ())),
                   auto_context=data.get("auto_context"),
                   status=data.get("status", "open"),
                   created_at=data.get("created_at", ""),
                   updated_at=data.get("updated_at", ""))


@dataclass(frozen=True)
class EnrichmentSubmission:
    task_id: str
    annotator_id: str
    enriched_text: str
    submitted_at: str = ""
    shorter_than_base: bool = False  # warning-level flag, never an error

    def to_json_dict(self) -> dict:
        return {"task_id": self.task_id, "annotator_id": self.annotator_id,
                "enriched_text": self.enriched_text,
                "submitted_at": self.submitted_at,
                "shorter_than_base": self.shorter_than_base}


@dataclass
class TaskPage:
    tasks: list
    total: int
    page: int
    page_size: int


class AnnotationStore:
    """File-backed task store; all writes are serialized and fsynced."""

    def __init__(self, root, auto_approve: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.frames_dir = self.root / "frames"
        self.frames_dir.mkdir(exist_ok=True)
        self.journal_path = self.root / "journal.jsonl"
        self.auto_approve = auto_approve
        self._lock = threading.RLock()
        self._tasks = {}
        self._history = {}  # task_id -> [submission dict, ...]
        self._submission_keys = {}  # (task_id, idempotency_key) -> submission dict
        self._semi_auto = {}  # dedupe key -> record dict
        self._replay()

    # -- journal ------------------------------------------------------------

    def _replay(self):
        if not self.journal_path.exists():
            return
        with self.journal_path.open() as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict):
        kind = event["event"]
        if kind == "create_task":
            task = AnnotationTask.from_json_dict(event["task"])
            self._tasks[task.task_id] = task
        elif kind == "submission":
            record = event["record"]
            task_id = record["task_id"]
            self._history.setdefault(task_id, []).append(record)
            key = event.get("idempotency_key")
            if key:
                self._submission_keys[(task_id, key)] = record
            task = self._tasks[task_id]
            status = "approved" if event.get("auto_approved") else "submitted"
            self._tasks[task_id] = replace(task, status=status,
                                           updated_at=record["submitted_at"])
        elif kind == "approve":
            task = self._tasks[event["task_id"]]
            self._tasks[task.task_id] = replace(task, status="approved",
                                                updated_at=event["at"])
        elif kind == "semi_automatic":
            record = event["record"]
            self._semi_auto[self._semi_key(record)] = record

    def _append(self, event: dict):
        with self.journal_path.open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self):
        """Rewrite the journal from the live index (atomic replace)."""
        with self._lock:
            tmp = self.journal_path.with_suffix(".tmp")
            with tmp.open("w") as fh:
                for task in self._tasks.values():
                    fh.write(json.dumps({"event": "create_task",
                                         "task": task.to_json_dict()},
                                        sort_keys=True) + "\n")
                    for record in self._history.get(task.task_id, []):
                        fh.write(json.dumps(
                            {"event": "submission", "record": record,
                             "auto_approved": task.status == "approved"},
                            sort_keys=True) + "\n")
                for record in self._semi_auto.values():
                    fh.write(json.dumps({"event": "semi_automatic",
                                         "record": record},
                                        sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.journal_path)

    # -- frames ---------------------------------------------------------------

    def store_frame(self, path) -> str:
        """Copy a keyframe into content-addressed storage; returns its ref."""
        src = Path(path)
        digest = hashlib.sha256(src.read_bytes()).hexdigest()
        name = f"{digest}{src.suffix.lower() or '.png'}"
        dest = self.frames_dir / name
        if not dest.exists():
            shutil.copyfile(src, dest)
        return name

    # -- tasks ----------------------------------------------------------------

    def create_task(self, video_id: str, base_caption: str,
                    keyframe_files=(), auto_context=None) -> str:
        """Idempotent on (video_id, base_caption): the same pair returns the
        same task id without duplicating anything."""
        if not base_caption or not base_caption.strip():
            raise ValidationError("base_caption must be non-empty")
        if not video_id:
            raise ValidationError("video_id must be non-empty")
        task_id = _task_id(video_id, base_caption)
        with self._lock:
            if task_id in self._tasks:
                return task_id
            refs = tuple(self.store_frame(p) for p in keyframe_files)
            if isinstance(auto_context, EnrichedCaption):
                auto_context = auto_context.to_json_dict()
            now = _now()
            task = AnnotationTask(task_id=task_id, video_id=video_id,
                                  base_caption=base_caption,
                                  keyframe_refs=refs, auto_context=auto_context,
                                  status="open", created_at=now, updated_at=now)
            self._append({"event": "create_task", "task": task.to_json_dict()})
            self._tasks[task_id] = task
            return task_id

    def get_task(self, task_id: str) -> AnnotationTask:
        with self._lock:
            try:
                return self._tasks[task_id]
            except KeyError:
                raise NotFoundError(f"no task {task_id!r}") from None

    def list_tasks(self, status=None, video_id=None, page=1,
                   page_size=50) -> TaskPage:
        if status is not None and status not in STATUSES:
            raise ValidationError(f"unknown status filter {status!r}")
        with self._lock:
            rows = [t for t in self._tasks.values()
                    if (status is None or t.status == status)
                    and (video_id is None or t.video_id == video_id)]
        rows.sort(key=lambda t: (t.created_at, t.task_id))
        start = (page - 1) * page_size
        return TaskPage(tasks=rows[start:start + page_size], total=len(rows),
                        page=page, page_size=page_size)

    def submit_enrichment(self, task_id: str, annotator_id: str,
                          enriched_text: str,
                          idempotency_key=None) -> EnrichmentSubmission:
        """Persist a submission; resubmission before approval replaces the
        draft (history kept). Retries carrying the same idempotency key return
        the original record without growing history."""
        if not enriched_text or not enriched_text.strip():
            raise ValidationError("enriched_text must be non-empty")
        with self._lock:
            task = self.get_task(task_id)
            if idempotency_key and (task_id, idempotency_key) in self._submission_keys:
                return EnrichmentSubmission(
                    **self._submission_keys[(task_id, idempotency_key)])
            if task.status == "approved":
                raise ImmutableTaskError(f"task {task_id} already approved")
            record = EnrichmentSubmission(
                task_id=task_id, annotator_id=annotator_id,
                enriched_text=enriched_text, submitted_at=_now(),
                shorter_than_base=len(enriched_text) < len(task.base_caption))
            event = {"event": "submission", "record": record.to_json_dict(),
                     "auto_approved": self.auto_approve}
            if idempotency_key:
                event["idempotency_key"] = idempotency_key
            self._append(event)
            self._apply(event)
            return record

    def approve_task(self, task_id: str) -> AnnotationTask:
        with self._lock:
            task = self.get_task(task_id)
            if task.status == "approved":
                return task
            if task.status != "submitted":
                raise StatusTransitionError(
                    f"cannot approve task in status {task.status!r}")
            event = {"event": "approve", "task_id": task_id, "at": _now()}
            self._append(event)
            self._apply(event)
            return self.get_task(task_id)

    def submission_history(self, task_id: str) -> list:
        with self._lock:
            self.get_task(task_id)
            return list(self._history.get(task_id, []))

    # -- semi-automatic records and export -------------------------------------

    @staticmethod
    def _semi_key(record: dict) -> str:
        digest = hashlib.sha256(
            f"{record['video_id']}\x00{record['enriched_text']}".encode()).hexdigest()
        return digest

    def add_semi_automatic(self, record) -> bool:
        """Register one semi-automatic EnrichedCaption; duplicates are no-ops."""
        if isinstance(record, EnrichedCaption):
            record = record.to_json_dict()
        record = dict(record, source="semi_automatic")
        key = self._semi_key(record)
        with self._lock:
            if key in self._semi_auto:
                return False
            self._append({"event": "semi_automatic", "record": record})
            self._semi_auto[key] = record
            return True

    def export_records(self, include=("human", "semi_automatic")) -> list:
        """Exactly-once export rows in deterministic (video_id, source) order."""
        rows = []
        with self._lock:
            if "human" in include:
                for task in self._tasks.values():
                    if task.status != "approved":
                        continue
                    history = self._history.get(task.task_id, [])
                    if not history:
                        continue
                    latest = history[-1]
                    rows.append({
                        "video_id": task.video_id,
                        "base_caption": task.base_caption,
                        "enriched_text": latest["enriched_text"],
                        "provenance": {"task_id": task.task_id,
                                       "annotator_id": latest["annotator_id"],
                                       "history_length": len(history)},
                        "source": "human",
                    })
            if "semi_automatic" in include:
                rows.extend(dict(r) for r in self._semi_auto.values())
        rows.sort(key=lambda r: (r["video_id"], r["source"],
                                 r["enriched_text"]))
        return rows

    def export_dataset(self, out, include=("human", "semi_automatic")) -> int:
        rows = self.export_records(include)
        path = Path(out)
        with path.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return len(rows)


# ---------------------------------------------------------------------------
# REST layer
# ---------------------------------------------------------------------------

def _task_body(task: AnnotationTask) -> dict:
    body = task.to_json_dict()
    body["keyframe_urls"] = [f"/frames/{ref}" for ref in task.keyframe_refs]
    return body


def make_server(store: AnnotationStore, host="127.0.0.1", port=0
                ) -> ThreadingHTTPServer:
    handler = _make_handler(store)
    return ThreadingHTTPServer((host, port), handler)


def _make_handler(store: AnnotationStore):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers",
                             "Content-Type, X-Idempotency-Key")

        def _send_json(self, status, body):
            raw = json.dumps(body, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self._cors()
            self.end_headers()
            self.wfile.write(raw)

        def _fail(self, status, code, message):
            self._send_json(status, {"code": code, "message": message})

        def _read_body(self):
            length = int(self.headers.get("Content-Length", 0))
            return json.loads(self.rfile.read(length) or b"{}")

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                if url.path == "/health":
                    self._send_json(200, {"ok": True})
                elif url.path == "/tasks":
                    query = parse_qs(url.query)
                    page = store.list_tasks(
                        status=query.get("status", [None])[0],
                        video_id=query.get("video_id", [None])[0],
                        page=int(query.get("page", ["1"])[0]),
                        page_size=int(query.get("page_size", ["50"])[0]))
                    self._send_json(200, {
                        "tasks": [_task_body(t) for t in page.tasks],
                        "total": page.total, "page": page.page,
                        "page_size": page.page_size})
                elif len(parts) == 2 and parts[0] == "tasks":
                    self._send_json(200, _task_body(store.get_task(parts[1])))
                elif url.path.startswith("/export"):
                    include = parse_qs(url.query).get(
                        "include", ["human,semi_automatic"])[0].split(",")
                    rows = store.export_records(tuple(include))
                    raw = "".join(json.dumps(r, sort_keys=True) + "\n"
                                  for r in rows).encode("utf-8")
                    self.send_response(200)
                    self.send_header("Content-Type", "application/x-ndjson")
                    self.send_header("Content-Length", str(len(raw)))
                    self._cors()
                    self.end_headers()
                    self.wfile.write(raw)
                elif len(parts) == 2 and parts[0] == "frames":
                    self._send_frame(parts[1])
                else:
                    self._fail(404, "not_found", url.path)
            except NotFoundError as exc:
                self._fail(404, "not_found", str(exc))
            except (ValidationError, ValueError) as exc:
                self._fail(400, "invalid_request", str(exc))

        def _send_frame(self, name):
            if "/" in name or ".." in name:
                self._fail(400, "invalid_request", "bad frame name")
                return
            path = store.frames_dir / name
            if not path.exists():
                self._fail(404, "not_found", f"no frame {name}")
                return
            raw = path.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", "image/png")
            self.send_header("Content-Length", str(len(raw)))
            self.send_header("Cache-Control", "immutable, max-age=31536000")
            self._cors()
            self.end_headers()
            self.wfile.write(raw)

        def do_POST(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                body = self._read_body()
            except ValueError:
                self._fail(400, "bad_json", "request body is not JSON")
                return
            try:
                if url.path == "/tasks":
                    task_id = store.create_task(
                        video_id=body.get("video_id", ""),
                        base_caption=body.get("base_caption", ""),
                        keyframe_files=body.get("keyframes", ()),
                        auto_context=body.get("auto_context"))
                    self._send_json(200, _task_body(store.get_task(task_id)))
                elif len(parts) == 3 and parts[0] == "tasks" and parts[2] == "enrichment":
                    record = store.submit_enrichment(
                        parts[1], annotator_id=body.get("annotator_id", ""),
                        enriched_text=body.get("enriched_text", ""),
                        idempotency_key=self.headers.get("X-Idempotency-Key"))
                    self._send_json(200, record.to_json_dict())
                elif len(parts) == 3 and parts[0] == "tasks" and parts[2] == "approve":
                    task = store.approve_task(parts[1])
                    self._send_json(200, _task_body(task))
                else:
                    self._fail(404, "not_found", url.path)
            except NotFoundError as exc:
                self._fail(404, "not_found", str(exc))
            except ImmutableTaskError as exc:
                self._fail(409, "immutable_task", str(exc))
            except StatusTransitionError as exc:
                self._fail(409, "bad_transition", str(exc))
            except ValidationError as exc:
                self._fail(400, "invalid_request", str(exc))

    return Handler


class AnnotationService:
    """In-process service wrapper used by tests and the CLI `serve` command."""

    def __init__(self, store: AnnotationStore, host="127.0.0.1", port=0):
        self.store = store
        self._httpd = make_server(store, host, port)
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

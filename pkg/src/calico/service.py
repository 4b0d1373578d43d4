"""HTTP service exposing the label queue to a human annotator.

The orchestrator parks a round's query in an OracleQueue and blocks; this
service lets a browser list pending items (GET /queue), submit labels
(POST /label), and watch progress (GET /status). Classes travel 1-based on
the wire, matching how humans read them in documents; storage stays
0-based. Every accepted label hits a write-ahead log before the client sees
the acknowledgment, so a crash cannot lose work; on restart the queue
replays the log for the round being redone.
"""

from __future__ import annotations

import json
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import ValidationError


class LabelRejected(ValidationError):
    """A label submission that must be refused, with its HTTP status."""

    def __init__(self, message: str, http_status: int):
        super().__init__(message)
        self.http_status = http_status


class OracleQueue:
    """Thread-safe pending-label store shared by loop and HTTP handlers."""

    def __init__(self, n_classes: int, wal_path: str | None = None):
        if n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        self.n_classes = n_classes
        self.wal_path = wal_path
        self._lock = threading.Condition()
        self._round = 0
        self._items = {}    # id -> {"confidence": float, "payload": dict}
        self._labels = {}   # id -> 0-based class
        self._order = []    # ids in ascending-confidence order
        self._closed = False

    # -- write-ahead log ---------------------------------------------------

    def _wal_append(self, doc: dict) -> None:
        if self.wal_path is None:
            return
        with open(self.wal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _wal_replay(self, round_idx: int) -> dict:
        if self.wal_path is None or not os.path.exists(self.wal_path):
            return {}
        replayed = {}
        with open(self.wal_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                if doc.get("round") == round_idx and doc.get("type") == "label":
                    replayed[int(doc["id"])] = int(doc["class"])
        return replayed

    def set_wal_path(self, path: str | None) -> None:
        """Retarget the log, e.g. at a specific run's directory."""
        with self._lock:
            self.wal_path = path

    # -- loop side ----------------------------------------------------------

    def begin_round(self, round_idx: int, ids, confidences, payloads) -> None:
        with self._lock:
            self._round = int(round_idx)
            order = np.lexsort((np.asarray(ids, dtype=np.int64),
                                np.asarray(confidences, dtype=np.float64)))
            self._items = {
                int(i): {"confidence": float(c), "payload": p}
                for i, c, p in zip(ids, confidences, payloads)
            }
            self._order = [int(np.asarray(ids)[k]) for k in order]
            self._labels = {}
            for i, cls in self._wal_replay(self._round).items():
                if i in self._items and 0 <= cls < self.n_classes:
                    self._labels[i] = cls
            self._lock.notify_all()

    def wait_complete(self, poll_interval: float = 0.5) -> dict:
        with self._lock:
            while len(self._labels) < len(self._items):
                self._lock.wait(timeout=max(poll_interval, 0.05))
                if self._closed:
                    raise ValidationError("label queue closed while waiting")
            return dict(self._labels)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._lock.notify_all()

    # -- HTTP side ----------------------------------------------------------

    def submit(self, sample_id: int, wire_class: int) -> int:
        """Record one 1-based label; returns labels still outstanding."""
        if not isinstance(wire_class, int) or isinstance(wire_class, bool):
            raise LabelRejected("class must be an integer", 400)
        cls = wire_class - 1
        if not 0 <= cls < self.n_classes:
            raise LabelRejected(
                f"class {wire_class} out of range 1..{self.n_classes}", 400)
        with self._lock:
            if sample_id not in self._items:
                raise LabelRejected(f"id {sample_id} is not in the queue", 409)
            if sample_id in self._labels:
                if self._labels[sample_id] == cls:
                    return len(self._items) - len(self._labels)
                raise LabelRejected(
                    f"id {sample_id} already labeled differently", 409)
            self._wal_append({"type": "label", "round": self._round,
                              "id": int(sample_id), "class": int(cls),
                              "ts": time.time()})
            self._labels[sample_id] = cls
            outstanding = len(self._items) - len(self._labels)
            self._lock.notify_all()
            return outstanding

    def pending_items(self) -> list:
        """Unlabeled items, ascending model confidence."""
        with self._lock:
            out = []
            for i in self._order:
                if i in self._labels:
                    continue
                entry = {"id": i, "confidence": self._items[i]["confidence"]}
                entry.update(self._items[i]["payload"])
                out.append(entry)
            return out

    def counts(self) -> dict:
        with self._lock:
            return {"round": self._round, "queued": len(self._items),
                    "labeled": len(self._labels),
                    "outstanding": len(self._items) - len(self._labels)}


class OracleHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, queue: OracleQueue, class_names: list,
                 status_fn=None, static_dir: str | None = None):
        self.queue = queue
        self.class_names = list(class_names)
        self.status_fn = status_fn
        self.static_dir = static_dir
        super().__init__(addr, _Handler)


_CONTENT_TYPES = {".html": "text/html", ".js": "text/javascript",
                  ".css": "text/css", ".svg": "image/svg+xml",
                  ".json": "application/json", ".map": "application/json"}


class _Handler(BaseHTTPRequestHandler):
    server: OracleHTTPServer

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _json(self, status: int, doc: dict):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self._cors()
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.end_headers()

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/queue":
            counts = self.server.queue.counts()
            self._json(200, {"round": counts["round"],
                             "items": self.server.queue.pending_items()})
        elif path == "/status":
            # extras add context; the live queue owns its own counters
            doc = dict(self.server.status_fn()) if self.server.status_fn else {}
            doc.update(self.server.queue.counts())
            self._json(200, doc)
        elif path == "/classes":
            self._json(200, {"classes": [
                {"value": k + 1, "name": name}
                for k, name in enumerate(self.server.class_names)]})
        elif self.server.static_dir is not None:
            self._static(path)
        else:
            self._json(404, {"error": f"no route {path}"})

    def _static(self, path: str):
        rel = "index.html" if path == "/" else path.lstrip("/")
        full = os.path.realpath(os.path.join(self.server.static_dir, rel))
        root = os.path.realpath(self.server.static_dir)
        if not full.startswith(root + os.sep) and full != root:
            self._json(404, {"error": "outside static root"})
            return
        if not os.path.isfile(full):
            self._json(404, {"error": f"no route {path}"})
            return
        ext = os.path.splitext(full)[1]
        with open(full, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type",
                         _CONTENT_TYPES.get(ext, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self._cors()
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        if path != "/label":
            self._json(404, {"error": f"no route {path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length) or b"{}")
            sample_id = doc["id"]
            wire_class = doc["class"]
            if not isinstance(sample_id, int) or isinstance(sample_id, bool):
                raise LabelRejected("id must be an integer", 400)
        except LabelRejected as exc:
            self._json(exc.http_status, {"error": str(exc)})
            return
        except (KeyError, ValueError, json.JSONDecodeError):
            self._json(400, {"error": "body must be {\"id\": int, \"class\": int}"})
            return
        try:
            outstanding = self.server.queue.submit(sample_id, wire_class)
        except LabelRejected as exc:
            self._json(exc.http_status, {"error": str(exc)})
            return
        self._json(200, {"ok": True, "outstanding": outstanding})


def serve_oracle(queue: OracleQueue, bind: str = "127.0.0.1:8765",
                 class_names: list | None = None, status_fn=None,
                 static_dir: str | None = None) -> OracleHTTPServer:
    """Start the annotation service on a background thread and return it."""
    host, _, port = bind.partition(":")
    names = class_names or [f"class {k + 1}" for k in range(queue.n_classes)]
    if len(names) != queue.n_classes:
        raise ValidationError("class_names length must equal n_classes")
    server = OracleHTTPServer((host, int(port or 0)), queue, names,
                              status_fn=status_fn, static_dir=static_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server._thread = thread
    return server

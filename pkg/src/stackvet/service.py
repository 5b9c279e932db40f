"""HTTP review service for the human-review bucket.

Endpoints (JSON):
  GET  /api/health        liveness + version
  GET  /api/queue?limit=N pending items, most ambiguous first
  GET  /api/sample/<id>   one queued item with pixel data
  POST /api/verdict       {"id", "label": "object"|"false_positive", "reviewer"}
  GET  /api/stats         bucket totals + thresholds

Verdicts are appended to a newline-delimited JSON log and fsynced before the
request is acknowledged; restarts replay the log, and a later verdict for the
same id supersedes the earlier one. Reads are concurrent; writes serialize
through one lock. Non-API paths serve the optional static UI directory.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse, parse_qs

import numpy as np

from . import __version__
from .datagen import MultiDepthSample
from .triage import AUTO_NEG, AUTO_POS, HUMAN, TriagePolicy, route

VALID_VERDICTS = ("object", "false_positive")


def _channel_payload(sample: MultiDepthSample) -> list[dict]:
    out = []
    for (depth, group), plane in zip(sample.channel_meta, sample.channels):
        p = np.asarray(plane, dtype=np.float64)
        out.append(
            {
                "depth": int(depth),
                "group": int(group),
                "min": float(p.min()),
                "max": float(p.max()),
                "pixels": [[round(float(v), 6) for v in row] for row in p],
            }
        )
    return out


def build_queue_items(
    samples: list[MultiDepthSample],
    scores,
    policy: TriagePolicy,
) -> list[dict]:
    """Route every sample; human-bucket items carry pixel payloads."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(samples),):
        raise ValueError(f"need one score per sample, got {scores.shape} for {len(samples)}")
    enqueued = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    items = []
    for s, score in zip(samples, scores):
        bucket = route(float(score), policy)
        item = {
            "id": s.sample_id,
            "score": float(score),
            "bucket": bucket,
            "combo": list(s.combo),
            "enqueued_at": enqueued,
        }
        if bucket == HUMAN:
            item["channels"] = _channel_payload(s)
        items.append(item)
    return items


@dataclass
class ReviewState:
    """Queue + durable verdict log; all mutation goes through one lock."""

    items: list[dict]
    policy: TriagePolicy
    verdict_path: str
    active: dict[str, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    _seq: int = 0

    def __post_init__(self):
        self.by_id = {item["id"]: item for item in self.items}
        if len(self.by_id) != len(self.items):
            raise ValueError("duplicate sample ids in queue")
        mid = (self.policy.positive_threshold + self.policy.negative_threshold) / 2.0
        human = [i for i in self.items if i["bucket"] == HUMAN]
        self.queue_order = sorted(human, key=lambda i: (abs(i["score"] - mid), i["id"]))
        if os.path.exists(self.verdict_path):
            with open(self.verdict_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._seq = max(self._seq, int(rec.get("seq", 0)))
                    if rec["id"] in self.by_id and self.by_id[rec["id"]]["bucket"] == HUMAN:
                        self.active[rec["id"]] = rec

    # -- queries (no lock needed: queue structure is immutable, active is
    # only mutated under the lock and read races return a consistent dict) --

    def health(self) -> dict:
        return {"status": "ok", "version": __version__}

    def queue(self, limit: int | None = None) -> dict:
        pending = [i for i in self.queue_order if i["id"] not in self.active]
        if limit is not None:
            if limit < 0:
                raise ValueError(f"limit must be >= 0, got {limit}")
            pending = pending[:limit]
        return {"items": pending, "pending": self.pending_count()}

    def sample(self, sample_id: str) -> dict:
        item = self.by_id.get(sample_id)
        if item is None or item["bucket"] != HUMAN:
            raise KeyError(f"unknown sample id {sample_id!r}")
        out = dict(item)
        verdict = self.active.get(sample_id)
        out["verdict"] = None if verdict is None else verdict["label"]
        return out

    def pending_count(self) -> int:
        return sum(1 for i in self.queue_order if i["id"] not in self.active)

    def verdict(self, sample_id: str, label: str, reviewer: str = "") -> dict:
        if label not in VALID_VERDICTS:
            raise ValueError(f"label must be one of {VALID_VERDICTS}, got {label!r}")
        item = self.by_id.get(sample_id)
        if item is None or item["bucket"] != HUMAN:
            raise KeyError(f"unknown sample id {sample_id!r}")
        with self.lock:
            self._seq += 1
            rec = {
                "seq": self._seq,
                "id": sample_id,
                "label": label,
                "reviewer": str(reviewer),
                "score": item["score"],
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            }
            # Durable before acknowledgment: flush + fsync, then update state.
            with open(self.verdict_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.active[sample_id] = rec
        return {"ok": True, "id": sample_id, "active_label": label, "seq": rec["seq"]}

    def stats(self) -> dict:
        auto_pos = sum(1 for i in self.items if i["bucket"] == AUTO_POS)
        auto_neg = sum(1 for i in self.items if i["bucket"] == AUTO_NEG)
        human = len(self.queue_order)
        reviewed = len(self.active)
        return {
            "total": len(self.items),
            "auto_positive": auto_pos,
            "auto_negative": auto_neg,
            "human_pending": human - reviewed,
            "human_reviewed": reviewed,
            "remaining_ratio": human / len(self.items) if self.items else 0.0,
            "policy": self.policy.to_dict(),
        }


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".mjs": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class _Handler(BaseHTTPRequestHandler):
    state: ReviewState
    ui_dir: str | None = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass

    def _send_json(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._send_json({"error": message}, status)

    def do_GET(self):
        url = urlparse(self.path)
        path = url.path
        try:
            if path == "/api/health":
                self._send_json(self.state.health())
            elif path == "/api/queue":
                qs = parse_qs(url.query)
                limit = None
                if "limit" in qs:
                    try:
                        limit = int(qs["limit"][0])
                    except ValueError:
                        return self._error(400, f"limit must be an integer, got {qs['limit'][0]!r}")
                self._send_json(self.state.queue(limit))
            elif path.startswith("/api/sample/"):
                sample_id = path[len("/api/sample/") :]
                self._send_json(self.state.sample(sample_id))
            elif path == "/api/stats":
                self._send_json(self.state.stats())
            elif path.startswith("/api/"):
                self._error(404, f"unknown endpoint {path}")
            else:
                self._serve_static(path)
        except KeyError as e:
            self._error(404, str(e.args[0]) if e.args else "not found")
        except ValueError as e:
            self._error(400, str(e))
        except BrokenPipeError:
            pass

    def do_POST(self):
        url = urlparse(self.path)
        try:
            # Drain the body first so an error reply leaves the
            # keep-alive connection aligned on the next request.
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                return self._error(400, "bad Content-Length")
            raw = self.rfile.read(length)
            if url.path != "/api/verdict":
                return self._error(404, f"unknown endpoint {url.path}")
            try:
                payload = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                return self._error(400, "body must be valid JSON")
            if not isinstance(payload, dict) or "id" not in payload or "label" not in payload:
                return self._error(400, 'body must be {"id", "label", "reviewer"?}')
            result = self.state.verdict(
                str(payload["id"]), str(payload["label"]), str(payload.get("reviewer", ""))
            )
            self._send_json(result)
        except KeyError as e:
            self._error(404, str(e.args[0]) if e.args else "not found")
        except ValueError as e:
            self._error(400, str(e))
        except BrokenPipeError:
            pass

    def _serve_static(self, path: str) -> None:
        if self.ui_dir is None:
            return self._error(404, "no UI bundled; API lives under /api/")
        rel = path.lstrip("/") or "index.html"
        root = os.path.realpath(self.ui_dir)
        full = os.path.realpath(os.path.join(root, rel))
        if not full.startswith(root + os.sep) and full != root:
            return self._error(404, "not found")
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            return self._error(404, "not found")
        ext = os.path.splitext(full)[1].lower()
        ctype = _CONTENT_TYPES.get(ext, "application/octet-stream")
        with open(full, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(state: ReviewState, port: int = 0, ui_dir: str | None = None) -> ThreadingHTTPServer:
    """Bind 127.0.0.1:port (0 = ephemeral); caller runs serve_forever()."""
    handler = type("BoundHandler", (_Handler,), {"state": state, "ui_dir": ui_dir})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)

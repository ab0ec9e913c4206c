"""Production-shaped serving: full batch inference over pair files, daily
diff merges of score snapshots, and a near-real-time HTTP scoring service
with atomic model hot-swap."""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Sequence

from .errors import InputError, KprelError, SnapshotError
from .evalkit import Recommendation
from .scorer import RelevanceModel, load_model, score

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "kprel-snapshot/1"


@dataclass(frozen=True)
class ScoreRecord:
    item_id: str
    keyphrase: str
    score: float
    relevant: bool
    model_version: str
    scored_at: str


@dataclass(frozen=True)
class SnapshotHeader:
    model_version: str
    threshold: float
    created_at: str
    record_count: int


@dataclass(frozen=True)
class Snapshot:
    header: SnapshotHeader
    records: tuple[ScoreRecord, ...]


@dataclass(frozen=True)
class RejectedPair:
    item_id: str
    keyphrase: str
    reason: str


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _score_partition(
    model: RelevanceModel,
    threshold: float,
    rows: list[tuple[int, Recommendation]],
    scored_at: str,
) -> tuple[list[tuple[int, ScoreRecord]], list[tuple[int, RejectedPair]]]:
    records = []
    rejects = []
    for idx, rec in rows:
        try:
            s = score(model, rec.keyphrase, rec.category, rec.title)
        except InputError as exc:
            rejects.append((idx, RejectedPair(rec.item_id, rec.keyphrase, str(exc))))
            continue
        records.append(
            (
                idx,
                ScoreRecord(
                    item_id=rec.item_id,
                    keyphrase=rec.keyphrase,
                    score=s,
                    relevant=s >= threshold,
                    model_version=model.version,
                    scored_at=scored_at,
                ),
            )
        )
    return records, rejects


def batch_infer(
    model: RelevanceModel,
    threshold: float,
    pairs: Sequence[Recommendation],
    partitions: int = 1,
    created_at: Optional[str] = None,
) -> tuple[Snapshot, list[RejectedPair]]:
    """Score every input pair into a sorted snapshot.

    Partitions are processed in parallel but the output is bit-identical
    for any partition count. Unfeaturizable rows and duplicate
    (item_id, keyphrase) keys come back as rejects, never silent drops.
    """
    if partitions < 1:
        raise InputError("partitions must be at least 1")
    created_at = created_at if created_at is not None else _utcnow()

    indexed = list(enumerate(pairs))
    chunks = [indexed[i::partitions] for i in range(partitions)]
    scored: list[tuple[int, ScoreRecord]] = []
    rejected: list[tuple[int, RejectedPair]] = []
    if partitions == 1:
        results = [_score_partition(model, threshold, chunks[0], created_at)]
    else:
        with ThreadPoolExecutor(max_workers=partitions) as pool:
            results = list(
                pool.map(lambda c: _score_partition(model, threshold, c, created_at), chunks)
            )
    for recs, rejs in results:
        scored.extend(recs)
        rejected.extend(rejs)

    # first occurrence (by input order) wins; later duplicates are rejects
    scored.sort(key=lambda pair: pair[0])
    seen: set[tuple[str, str]] = set()
    records: list[ScoreRecord] = []
    for idx, rec in scored:
        key = (rec.item_id, rec.keyphrase)
        if key in seen:
            rejected.append((idx, RejectedPair(rec.item_id, rec.keyphrase, "duplicate key")))
            continue
        seen.add(key)
        records.append(rec)
    records.sort(key=lambda r: (r.item_id, r.keyphrase))
    rejected.sort(key=lambda pair: pair[0])

    header = SnapshotHeader(
        model_version=model.version,
        threshold=threshold,
        created_at=created_at,
        record_count=len(records),
    )
    return Snapshot(header=header, records=tuple(records)), [r for _, r in rejected]


def write_snapshot(snapshot: Snapshot, path: Path) -> None:
    """Header line followed by sorted JSONL records."""
    with Path(path).open("w", encoding="utf-8") as fh:
        header = dict(asdict(snapshot.header), format=SNAPSHOT_FORMAT)
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in snapshot.records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def write_rejects(rejects: Sequence[RejectedPair], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rej in rejects:
            fh.write(json.dumps(asdict(rej), sort_keys=True) + "\n")


def read_snapshot(path: Path) -> Snapshot:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = [line for line in (ln.strip() for ln in fh) if line]
    if not lines:
        raise SnapshotError(f"{path}: empty snapshot file")
    try:
        header_doc = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{path}: corrupt header: {exc}") from exc
    if header_doc.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(
            f"{path}: unsupported snapshot format {header_doc.get('format')!r}"
        )
    try:
        header = SnapshotHeader(
            model_version=str(header_doc["model_version"]),
            threshold=float(header_doc["threshold"]),
            created_at=str(header_doc["created_at"]),
            record_count=int(header_doc["record_count"]),
        )
        records = tuple(
            ScoreRecord(
                item_id=str(doc["item_id"]),
                keyphrase=str(doc["keyphrase"]),
                score=float(doc["score"]),
                relevant=bool(doc["relevant"]),
                model_version=str(doc["model_version"]),
                scored_at=str(doc["scored_at"]),
            )
            for doc in map(json.loads, lines[1:])
        )
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: corrupt snapshot: {exc}") from exc
    if header.record_count != len(records):
        raise SnapshotError(
            f"{path}: header claims {header.record_count} records, found {len(records)}"
        )
    keys = [(r.item_id, r.keyphrase) for r in records]
    if keys != sorted(keys) or len(set(keys)) != len(keys):
        raise SnapshotError(f"{path}: records are not sorted and unique by key")
    return Snapshot(header=header, records=records)


def diff_merge(full: Snapshot, diff: Snapshot, allow_version_change: bool = False) -> Snapshot:
    """Key-wise union of two snapshots; the diff wins every collision.

    Snapshots must share model_version and threshold unless
    allow_version_change is set, in which case the output header takes the
    diff's version and threshold (records keep their own model_version).
    Deletion is unsupported: merging only adds or overwrites.
    """
    if not allow_version_change:
        if full.header.model_version != diff.header.model_version:
            raise SnapshotError(
                f"model_version mismatch: full={full.header.model_version!r} "
                f"diff={diff.header.model_version!r} (pass allow_version_change to override)"
            )
        if full.header.threshold != diff.header.threshold:
            raise SnapshotError(
                f"threshold mismatch: full={full.header.threshold} diff={diff.header.threshold}"
            )
    merged: dict[tuple[str, str], ScoreRecord] = {
        (r.item_id, r.keyphrase): r for r in full.records
    }
    for r in diff.records:
        merged[(r.item_id, r.keyphrase)] = r
    records = tuple(sorted(merged.values(), key=lambda r: (r.item_id, r.keyphrase)))
    header = SnapshotHeader(
        model_version=diff.header.model_version,
        threshold=diff.header.threshold,
        created_at=diff.header.created_at,
        record_count=len(records),
    )
    return Snapshot(header=header, records=records)


class _ServiceState:
    """Shared state behind the HTTP handlers; the bundle swap is atomic."""

    def __init__(self, model_path: Path, threshold: float):
        self.model_path = Path(model_path)
        self.threshold = threshold
        self._lock = threading.Lock()
        self.bundle: RelevanceModel = load_model(self.model_path.read_bytes())

    def reload(self) -> str:
        model = load_model(self.model_path.read_bytes())
        with self._lock:
            self.bundle = model  # single reference swap; in-flight requests keep the old one
        return model.version


def _score_payload(model: RelevanceModel, threshold: float, doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise InputError("request body must be a JSON object")
    missing = [k for k in ("item_title", "keyphrase") if k not in doc]
    if missing:
        raise InputError(f"missing required fields: {', '.join(missing)}")
    s = score(model, str(doc["keyphrase"]), str(doc.get("category", "")), str(doc["item_title"]))
    return {"score": s, "relevant": s >= threshold, "model_version": model.version}


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("nrt %s", fmt % args)

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str) -> None:
        self._send_json(status, {"error": {"code": code, "message": message}})

    def _read_body(self):
        length = self.headers.get("Content-Length")
        if length is None:
            raise InputError("Content-Length header is required")
        raw = self.rfile.read(int(length))
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"request body is not valid JSON: {exc}") from exc

    def do_GET(self) -> None:
        try:
            if self.path == "/health":
                model = self.server.state.bundle
                self._send_json(200, {"status": "ok", "model_version": model.version})
            else:
                self._error(404, "not_found", f"unknown path {self.path}")
        except Exception as exc:  # noqa: BLE001 - the service must never crash
            logger.exception("health handler failed")
            self._error(500, "internal", str(exc))

    def do_POST(self) -> None:
        try:
            state = self.server.state
            model = state.bundle  # captured once; hot swaps do not tear a request
            if self.path == "/score":
                doc = self._read_body()
                self._send_json(200, _score_payload(model, state.threshold, doc))
            elif self.path == "/batch-score":
                docs = self._read_body()
                if not isinstance(docs, list):
                    raise InputError("batch request body must be a JSON array")
                results = []
                for doc in docs:
                    try:
                        results.append(_score_payload(model, state.threshold, doc))
                    except InputError as exc:
                        results.append({"error": {"code": "bad_request", "message": str(exc)}})
                self._send_json(200, results)
            elif self.path == "/reload":
                version = state.reload()
                self._send_json(200, {"status": "reloaded", "model_version": version})
            else:
                self._error(404, "not_found", f"unknown path {self.path}")
        except InputError as exc:
            self._error(400, "bad_request", str(exc))
        except KprelError as exc:
            logger.exception("scoring failed")
            self._error(500, "scoring_error", str(exc))
        except Exception as exc:  # noqa: BLE001 - the service must never crash
            logger.exception("handler failed")
            self._error(500, "internal", str(exc))


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    state: _ServiceState


class RelevanceService:
    """Near-real-time scoring service over HTTP.

    Endpoints: POST /score, POST /batch-score, GET /health, POST /reload.
    Model reload swaps a single reference, so concurrent requests always
    see a complete model.
    """

    def __init__(self, model_path: Path, threshold: float, host: str = "127.0.0.1",
                 port: int = 0):
        self._server = _Server((host, port), _Handler)
        self._server.state = _ServiceState(model_path, threshold)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    @property
    def model_version(self) -> str:
        return self._server.state.bundle.version

    def reload(self) -> str:
        return self._server.state.reload()

    def start(self) -> "RelevanceService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

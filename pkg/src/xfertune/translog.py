"""Transfer-log data model, CSV log files and the knowledge-base document."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple

from .errors import ConstraintError, KBFormatError, KBVersionError, SchemaError

KB_VERSION = "1"

LOG_COLUMNS = (
    "id",
    "src",
    "dst",
    "start_time",
    "end_time",
    "rtt_ms",
    "bandwidth_mbps",
    "avg_file_size_bytes",
    "num_files",
    "total_size_bytes",
    "cc",
    "p",
    "pp",
    "throughput_mbps",
)

# column -> (record field, parser)
_COLUMN_FIELDS = {
    "id": ("id", str),
    "src": ("src_endpoint", str),
    "dst": ("dst_endpoint", str),
    "start_time": ("start_time", float),
    "end_time": ("end_time", float),
    "rtt_ms": ("rtt", float),
    "bandwidth_mbps": ("bandwidth", float),
    "avg_file_size_bytes": ("avg_file_size", float),
    "num_files": ("num_files", int),
    "total_size_bytes": ("total_size", int),
    "cc": ("cc", int),
    "p": ("p", int),
    "pp": ("pp", int),
    "throughput_mbps": ("throughput", float),
}

TOTAL_SIZE_TOLERANCE = 0.5


@dataclass(frozen=True, order=True)
class ParameterPoint:
    """Tuning triple. Ordering is lexicographic on (cc, p, pp)."""

    cc: int
    p: int
    pp: int

    @property
    def streams(self) -> int:
        return self.cc * self.p

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.cc, self.p, self.pp)


@dataclass(frozen=True)
class Caps:
    """Lattice bound and the stream/pipelining caps."""

    beta: int = 8
    max_streams: int = 32
    max_pipelining: int = 8

    def __post_init__(self):
        if self.beta < 1 or self.max_streams < 1 or self.max_pipelining < 1:
            raise ValueError("caps must be positive")

    def violations(self, theta: ParameterPoint) -> list[str]:
        out = []
        for name in ("cc", "p", "pp"):
            v = getattr(theta, name)
            if not 1 <= v <= self.beta:
                out.append(f"{name}={v} outside [1, {self.beta}]")
        if theta.cc * theta.p > self.max_streams:
            out.append(f"cc*p={theta.cc * theta.p} exceeds max_streams={self.max_streams}")
        if theta.pp > self.max_pipelining:
            out.append(f"pp={theta.pp} exceeds max_pipelining={self.max_pipelining}")
        return out

    def feasible(self, theta: ParameterPoint) -> bool:
        return not self.violations(theta)

    def check(self, theta: ParameterPoint) -> None:
        bad = self.violations(theta)
        if bad:
            raise ConstraintError("; ".join(bad))

    def lattice(self) -> list[ParameterPoint]:
        """All feasible points, sorted lexicographically."""
        top_pp = min(self.beta, self.max_pipelining)
        return [
            ParameterPoint(cc, p, pp)
            for cc in range(1, self.beta + 1)
            for p in range(1, self.beta + 1)
            if cc * p <= self.max_streams
            for pp in range(1, top_pp + 1)
        ]


@dataclass(frozen=True)
class TransferRecord:
    id: str
    src_endpoint: str
    dst_endpoint: str
    start_time: float
    end_time: float
    rtt: float
    bandwidth: float
    avg_file_size: float
    num_files: int
    total_size: int
    cc: int
    p: int
    pp: int
    throughput: float

    def __post_init__(self):
        problem = self.problem()
        if problem:
            raise ValueError(problem)

    def problem(self) -> str | None:
        """First violated invariant, or None."""
        for name in ("start_time", "end_time", "rtt", "bandwidth", "avg_file_size", "throughput"):
            if not math.isfinite(getattr(self, name)):
                return f"{name} is not finite"
        if self.end_time <= self.start_time:
            return "end_time not after start_time"
        if self.throughput < 0:
            return "negative throughput"
        if self.throughput > self.bandwidth:
            return "throughput exceeds capacity"
        if self.bandwidth <= 0:
            return "bandwidth must be positive"
        if self.rtt < 0:
            return "negative rtt"
        if min(self.cc, self.p, self.pp) < 1:
            return "parameters must be >= 1"
        if self.num_files < 1:
            return "num_files must be >= 1"
        if self.avg_file_size <= 0:
            return "avg_file_size must be positive"
        if self.total_size <= 0:
            return "total_size must be positive"
        drift = abs(self.total_size - self.avg_file_size * self.num_files) / self.total_size
        if drift > TOTAL_SIZE_TOLERANCE:
            return "total_size inconsistent with avg_file_size * num_files"
        return None

    @property
    def theta(self) -> ParameterPoint:
        return ParameterPoint(self.cc, self.p, self.pp)


@dataclass(frozen=True)
class TransferRequest:
    src_endpoint: str
    dst_endpoint: str
    rtt: float
    bandwidth: float
    dataset: tuple[int, ...]
    avg_file_size: float = 0.0
    num_files: int = 0

    def __post_init__(self):
        if not self.dataset:
            raise ValueError("dataset must be nonempty")
        if sum(self.dataset) <= 0:
            raise ValueError("dataset must have positive total size")
        object.__setattr__(self, "dataset", tuple(int(s) for s in self.dataset))
        if not self.num_files:
            object.__setattr__(self, "num_files", len(self.dataset))
        if not self.avg_file_size:
            object.__setattr__(self, "avg_file_size", sum(self.dataset) / len(self.dataset))

    @property
    def total_size(self) -> int:
        return sum(self.dataset)

    @classmethod
    def uniform(cls, src: str, dst: str, rtt: float, bandwidth: float,
                file_size: int, num_files: int) -> "TransferRequest":
        return cls(src, dst, rtt, bandwidth, (int(file_size),) * int(num_files))


# ---------------------------------------------------------------- log CSV

class Reject(NamedTuple):
    line: int
    reason: str


class ParseResult(NamedTuple):
    records: list[TransferRecord]
    rejects: list[Reject]


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_log(records: Iterable[TransferRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, _COLUMN_FIELDS[c][0])) for c in LOG_COLUMNS])


def parse_log(path: str | Path, schema: Mapping[str, str] | None = None) -> ParseResult:
    """Read a log CSV.

    ``schema`` maps canonical column names to the names used in the file;
    unmapped columns are looked up under their canonical name. Rows that
    fail to parse or violate a record invariant are returned as rejects.
    """
    schema = dict(schema or {})
    records: list[TransferRecord] = []
    rejects: list[Reject] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        index = {name: i for i, name in enumerate(header)}
        positions = {}
        missing = []
        for col in LOG_COLUMNS:
            actual = schema.get(col, col)
            if actual not in index:
                missing.append(actual)
            else:
                positions[col] = index[actual]
        if missing:
            raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            kwargs = {}
            try:
                for col, pos in positions.items():
                    name, parse = _COLUMN_FIELDS[col]
                    kwargs[name] = parse(row[pos])
                records.append(TransferRecord(**kwargs))
            except IndexError:
                rejects.append(Reject(lineno, "row has too few fields"))
            except ValueError as exc:
                rejects.append(Reject(lineno, str(exc)))
    return ParseResult(records, rejects)


# ---------------------------------------------------------- knowledge base

def config_fingerprint(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class KnowledgeBase:
    """Offline results keyed by cluster.

    ``entries`` maps a cluster key id to its ``ClusterKnowledge``.
    ``feature_bounds`` holds the per-dimension (min, max) used to normalize
    raw features before matching a request to a cluster centroid.
    """

    entries: dict[str, Any] = field(default_factory=dict)
    built_at: float = 0.0
    config_fingerprint: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    feature_bounds: tuple[tuple[float, ...], tuple[float, ...]] = ((), ())

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": KB_VERSION,
            "config_fingerprint": self.config_fingerprint,
            "built_at": self.built_at,
            "config": self.config,
            "feature_bounds": {"lo": list(self.feature_bounds[0]), "hi": list(self.feature_bounds[1])},
            "entries": [self.entries[k].to_dict() for k in sorted(self.entries)],
        }


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    text = json.dumps(kb.to_dict(), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="ascii")


def kb_from_dict(doc: Mapping[str, Any], expected_fingerprint: str | None = None) -> KnowledgeBase:
    from .knowledge import ClusterKnowledge

    version = doc.get("version")
    if version != KB_VERSION:
        raise KBVersionError(f"knowledge base version {version!r} does not match supported version {KB_VERSION!r}")
    fp = doc.get("config_fingerprint", "")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise KBVersionError(f"knowledge base built under config {fp!r}, expected {expected_fingerprint!r}")
    entries = {}
    for raw in doc.get("entries", []):
        ck = ClusterKnowledge.from_dict(raw)
        entries[ck.key.key_id] = ck
    bounds = doc.get("feature_bounds", {"lo": [], "hi": []})
    return KnowledgeBase(
        entries=entries,
        built_at=float(doc.get("built_at", 0.0)),
        config_fingerprint=fp,
        config=dict(doc.get("config", {})),
        feature_bounds=(tuple(bounds["lo"]), tuple(bounds["hi"])),
    )


def load_kb(path: str | Path, expected_fingerprint: str | None = None) -> KnowledgeBase:
    text = Path(path).read_bytes().decode("ascii", errors="replace")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KBFormatError(f"{path}: {exc.msg}", offset=exc.pos) from None
    if not isinstance(doc, dict):
        raise KBFormatError(f"{path}: top level is not an object", offset=0)
    try:
        return kb_from_dict(doc, expected_fingerprint)
    except (KeyError, TypeError, ValueError) as exc:
        raise KBFormatError(f"{path}: malformed knowledge base: {exc}") from None


def record_to_dict(rec: TransferRecord) -> dict[str, Any]:
    return asdict(rec)


RECORD_FIELDS = tuple(f.name for f in fields(TransferRecord))

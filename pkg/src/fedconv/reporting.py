"""Evaluation, communication-cost accounting, and persistence.

Round records carry wall-clock timing for the CSV log only; the JSON report
holds exclusively deterministic content so that identical configurations
reproduce byte-identical files regardless of client scheduling.

Checkpoints are a UTF-8 manifest (name, dtype tag, shape, byte offset per
tensor) next to a raw little-endian IEEE-754 blob; loading is bitwise exact.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import to_input

__all__ = ["RoundRecord", "ExperimentReport", "evaluate", "rounds_to_target",
           "tms", "save_checkpoint", "load_checkpoint", "CheckpointError",
           "write_report", "read_rounds_csv"]


class CheckpointError(ValueError):
    """Manifest/blob inconsistency or unsupported dtype."""


@dataclass
class RoundRecord:
    round: int
    accuracy: float               # percent in [0, 100]
    loss: float | None            # mean train loss; None for the round-0 eval
    client_sizes: list[int] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class ExperimentReport:
    config: dict
    params: int
    partition_mean_ks: float | None
    records: list[RoundRecord]
    final_accuracy: float
    target_accuracy: float | None = None
    rounds_to_target: int | None = None
    tms: int | None = None

    def __post_init__(self):
        if (self.rounds_to_target is None) != (self.tms is None):
            raise ValueError("tms must be present exactly when rounds_to_target is")
        if self.rounds_to_target is not None and self.tms != self.params * self.rounds_to_target:
            raise ValueError("tms must equal params * rounds_to_target")


def evaluate(model, images_u8: np.ndarray, labels: np.ndarray, *,
             batch_size: int = 256, dtype=np.float32) -> float:
    """Global accuracy in percent: argmax over logits, eval-mode normalizers."""
    model.eval()
    correct = 0
    with ad.no_grad():
        for lo in range(0, len(labels), batch_size):
            xb = Tensor(to_input(images_u8[lo:lo + batch_size], dtype))
            logits = model.forward(xb)
            correct += int(np.sum(logits.data.argmax(axis=1) == labels[lo:lo + batch_size]))
    return 100.0 * correct / len(labels)


def rounds_to_target(records: list[RoundRecord], target_pct: float) -> int | None:
    """Smallest round index whose accuracy meets the target; None when the
    target is never reached."""
    for rec in sorted(records, key=lambda r: r.round):
        if rec.accuracy >= target_pct:
            return rec.round
    return None


def tms(params: int, rounds: int) -> int:
    """Transmitted message size: exact parameter-count x round product."""
    return int(params) * int(rounds)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_DTYPE_TAGS = {
    np.dtype(np.float32): ("f32", "<f4"),
    np.dtype(np.float64): ("f64", "<f8"),
    np.dtype(np.int64): ("i64", "<i8"),
}
_TAG_TO_NP = {tag: le for _, (tag, le) in _DTYPE_TAGS.items()}


def save_checkpoint(entries: dict[str, np.ndarray], stem) -> None:
    """Write `<stem>.manifest` (text) and `<stem>.blob` (raw little-endian)."""
    stem = Path(stem)
    lines = []
    blobs = []
    offset = 0
    for name, arr in entries.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        tag, le = _DTYPE_TAGS[arr.dtype]
        raw = np.ascontiguousarray(arr).astype(le, copy=False).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name}\t{tag}\t{shape}\t{offset}")
        blobs.append(raw)
        offset += len(raw)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(stem.suffix + ".manifest").write_text(
        "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    stem.with_suffix(stem.suffix + ".blob").write_bytes(b"".join(blobs))


def load_checkpoint(stem) -> dict[str, np.ndarray]:
    stem = Path(stem)
    manifest = stem.with_suffix(stem.suffix + ".manifest")
    blob_path = stem.with_suffix(stem.suffix + ".blob")
    if not manifest.exists() or not blob_path.exists():
        raise CheckpointError(f"missing checkpoint files at {stem}")
    blob = blob_path.read_bytes()
    out: dict[str, np.ndarray] = {}
    expected = 0
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CheckpointError(f"manifest line {lineno}: expected 4 fields")
        name, tag, shape_s, offset_s = parts
        if tag not in _TAG_TO_NP:
            raise CheckpointError(f"manifest line {lineno}: unknown dtype tag {tag!r}")
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        offset = int(offset_s)
        if offset != expected:
            raise CheckpointError(f"manifest line {lineno}: non-contiguous offset")
        dt = np.dtype(_TAG_TO_NP[tag])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"blob truncated: {name!r} needs {offset + nbytes} bytes")
        out[name] = np.frombuffer(blob, dtype=dt, count=max(1, nbytes // dt.itemsize),
                                  offset=offset).reshape(shape).copy()
        expected = offset + nbytes
    if expected != len(blob):
        raise CheckpointError("blob has trailing bytes not covered by the manifest")
    return out


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_report(report: ExperimentReport, out_dir) -> tuple[Path, Path]:
    """Write rounds.csv (with wall-clock seconds) and report.json (fully
    deterministic given the report content)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "rounds.csv"
    lines = ["round,accuracy,loss,seconds"]
    for r in report.records:
        lines.append(f"{r.round},{_fmt(r.accuracy)},{_fmt(r.loss)},{_fmt(r.seconds)}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    payload = {
        "config": report.config,
        "params": report.params,
        "partition_mean_ks": report.partition_mean_ks,
        "records": [
            {"round": r.round, "accuracy": r.accuracy, "loss": r.loss,
             "client_sizes": r.client_sizes}
            for r in report.records
        ],
        "final_accuracy": report.final_accuracy,
        "target_accuracy": report.target_accuracy,
        "rounds_to_target": report.rounds_to_target,
        "tms": report.tms,
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return csv_path, json_path


def read_rounds_csv(path) -> list[RoundRecord]:
    """Re-parse rounds.csv; the CSV carries the four printed fields, so the
    returned records have empty client_sizes."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "round,accuracy,loss,seconds":
        raise ValueError(f"{path}: unexpected CSV header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        rnd, acc, loss, secs = line.split(",")
        out.append(RoundRecord(int(rnd), float(acc),
                               None if loss == "" else float(loss),
                               [], float(secs)))
    return out


class StopWatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        return False

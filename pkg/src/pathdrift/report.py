"""Stable table emission: CSV and structured-document output.

Every emitted artifact embeds the master seed, the canonical spec, a content
hash of the corpus, and the package version, and formats floats through one
fixed code path, so reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Mapping, Sequence

from .canonical import CanonicalSpec
from .corpus import Corpus, export_records
from .stats import Estimate

try:
    ARTIFACT_VERSION = metadata.version("pathdrift")
except metadata.PackageNotFoundError:  # running from a source tree
    ARTIFACT_VERSION = "0.0.0+src"


def format_value(value: object) -> str:
    """One canonical textual form per value; floats use shortest-roundtrip
    up to 10 significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def corpus_fingerprint(corpus: Corpus) -> str:
    """Content hash over the canonical record serialization."""
    h = hashlib.sha256()
    for record in export_records(corpus):
        h.update(json.dumps(record, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class ReportMeta:
    seed: int
    spec: CanonicalSpec | None
    fingerprint: str

    def lines(self) -> list[str]:
        spec_label = self.spec.label() if self.spec is not None else "-"
        return [
            f"# seed={self.seed}",
            f"# spec={spec_label}",
            f"# corpus={self.fingerprint}",
            f"# version={ARTIFACT_VERSION}",
        ]

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.label() if self.spec is not None else None,
            "corpus_fingerprint": self.fingerprint,
            "version": ARTIFACT_VERSION,
        }


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Sequence[Sequence[object]],
    meta: ReportMeta | None = None,
) -> None:
    """CSV with '#'-prefixed provenance lines before the header row."""
    lines: list[str] = []
    if meta is not None:
        lines.extend(meta.lines())
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def estimate_fields(est: Estimate | None) -> list[object]:
    if est is None:
        return [None, None, None, None]
    return [est.point, est.ci_low, est.ci_high, est.p_value]


def estimate_dict(est: Estimate | None) -> dict | None:
    if est is None:
        return None
    return {
        "point": est.point,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
        "p_value": est.p_value,
        "n": est.n,
        "method": est.method,
    }


def _jsonify(value: object) -> object:
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return float(format_value(value))
    if isinstance(value, Mapping):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = list(value)
        if isinstance(value, (set, frozenset)):
            items = sorted(items, key=str)
        return [_jsonify(v) for v in items]
    return value


def write_doc(path: str | Path, doc: Mapping, meta: ReportMeta) -> None:
    """Structured-document twin of the CSV tables (one object per table)."""
    payload = {"meta": meta.as_dict()}
    payload.update({str(k): _jsonify(v) for k, v in doc.items()})
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable


@dataclass(frozen=True)
class DetectorVerdict:
    detector: str
    class_label: int
    score: float
    threshold: float
    flagged: bool
    sample_id: str | int | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["class"] = d.pop("class_label")
        for k in ("score", "threshold"):
            if math.isinf(d[k]):
                d[k] = "inf" if d[k] > 0 else "-inf"
        return json.dumps(d, sort_keys=True)


def write_verdicts_jsonl(path, verdicts: Iterable[DetectorVerdict]) -> None:
    with open(path, "w") as fh:
        for v in verdicts:
            fh.write(v.to_json() + "\n")


def read_verdicts_jsonl(path) -> list[DetectorVerdict]:
    out = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            out.append(DetectorVerdict(d["detector"], d["class"], float(d["score"]), float(d["threshold"]),
                                       d["flagged"], d.get("sample_id")))
    return out

"""CSV and JSON reports of evaluated candidates."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from ..evosearch import AimWeights, CandidateRecord
from ..metrics import EvalMetrics

COLUMNS = ["genome", "letters", "accuracy_pct", "ece_pct", "ape_nats", "latency_ms", "aim", "pareto"]


def genome_str(genome) -> str:
    return "-".join(str(c) for c in genome)


def parse_genome(s: str) -> tuple[int, ...]:
    return tuple(int(c) for c in s.split("-"))


def record_row(rec: CandidateRecord, letters: str, on_front: bool) -> dict:
    m = rec.metrics
    return {
        "genome": genome_str(rec.genome),
        "letters": letters,
        "accuracy_pct": m.accuracy,
        "ece_pct": m.ece,
        "ape_nats": m.ape,
        "latency_ms": m.latency_ms,
        "aim": rec.aim,
        "pareto": on_front,
    }


def rows_for(records: Sequence[CandidateRecord], front: Sequence[CandidateRecord], letters) -> list[dict]:
    on_front = {r.genome for r in front}
    return [record_row(r, letters(r.genome), r.genome in on_front) for r in records]


def write_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([
                row["genome"],
                row["letters"],
                *(repr(float(row[c])) for c in COLUMNS[2:7]),
                "1" if row["pareto"] else "0",
            ])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"unexpected report columns {reader.fieldnames}")
        out = []
        for row in reader:
            out.append({
                "genome": row["genome"],
                "letters": row["letters"],
                **{c: float(row[c]) for c in COLUMNS[2:7]},
                "pareto": row["pareto"] == "1",
            })
        return out


def row_metrics(row: dict) -> EvalMetrics:
    return EvalMetrics(row["accuracy_pct"], row["ece_pct"], row["ape_nats"], row["latency_ms"])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def weights_dict(w: AimWeights) -> dict:
    return {"eta": w.eta, "mu": w.mu, "beta": w.beta, "lambda": w.lam}

"""Registry of verified, ideologically balanced news outlets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lexicon import TOPICS

CREDIBILITY_FLOOR = 40.0
BIAS_BAND = (-18.0, 18.0)


class OutletError(ValueError):
    pass


@dataclass(frozen=True)
class OutletRecord:
    name: str
    credibility: float
    bias: float
    handle: str
    sections: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.handle or not self.handle.startswith("@"):
            raise OutletError(f"{self.name}: handle must start with '@'")
        if not self.sections:
            raise OutletError(f"{self.name}: outlet needs at least one section URL")
        unknown = set(self.sections) - set(TOPICS)
        if unknown:
            raise OutletError(f"{self.name}: unknown sections {sorted(unknown)}")


def load_outlets(path: str | Path | None = None) -> list[OutletRecord]:
    """Read the registry CSV; empty URL cells mean the section is absent."""
    if path is None:
        path = Path(__file__).parent / "data" / "outlets.csv"
    records: list[OutletRecord] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            sections = {}
            for topic in TOPICS:
                url = row.get(f"{topic}_url", "").strip()
                if url:
                    sections[topic] = url
            records.append(
                OutletRecord(
                    name=row["name"].strip(),
                    credibility=float(row["credibility"]),
                    bias=float(row["bias"]),
                    handle=row["handle"].strip(),
                    sections=sections,
                )
            )
    return records


def filter_eligible(records: Sequence[OutletRecord]) -> list[OutletRecord]:
    """Keep outlets with credibility strictly above 40 and bias within [-18, 18]."""
    low, high = BIAS_BAND
    return [
        r
        for r in records
        if r.credibility > CREDIBILITY_FLOOR and low <= r.bias <= high
    ]


def select_outlet(
    topic: str,
    records: Sequence[OutletRecord],
    rng: np.random.Generator,
) -> tuple[OutletRecord, str]:
    """Uniform draw over the records carrying a section URL for ``topic``."""
    candidates = [r for r in records if topic in r.sections]
    if not candidates:
        raise OutletError(f"no outlet has a {topic!r} section")
    choice = candidates[int(rng.integers(len(candidates)))]
    return choice, choice.sections[topic]

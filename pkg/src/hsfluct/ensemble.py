"""Replica orchestration: seed streams, failure capture, reports.

Replica k draws its generator from the base seed with spawn key (k,), a
counter-based scheme with no sequential dependence between streams, so
any subset of replicas can run in any order or process and still produce
the same numbers. Reports render to CSV deterministically; wall-clock
metadata stays out of the byte stream.
"""

import dataclasses
import time
import traceback
from typing import Callable, Dict, List, Optional

import numpy as np

from .estimators import EnsembleAccumulator


def replica_rng(base_seed: int, index: int) -> np.random.Generator:
    """Independent stream for replica `index` under a shared base seed."""
    if index < 0:
        raise ValueError("replica index must be nonnegative")
    seq = np.random.SeedSequence(entropy=int(base_seed),
                                 spawn_key=(int(index),))
    return np.random.default_rng(seq)


@dataclasses.dataclass(frozen=True)
class ReplicaFailure:
    index: int
    message: str


def run_replicas(task: Callable[[int, np.random.Generator], np.ndarray],
                 n_replicas: int, base_seed: int, width: int,
                 start: int = 0):
    """Run task(k, rng) for k in [start, start + n_replicas) and gather
    the returned statistic rows; exceptions become recorded failures."""
    acc = EnsembleAccumulator(width)
    failures: List[ReplicaFailure] = []
    for k in range(start, start + n_replicas):
        rng = replica_rng(base_seed, k)
        try:
            acc.add(k, task(k, rng))
        except Exception as exc:  # noqa: BLE001 - replica isolation
            failures.append(ReplicaFailure(
                k, f"{type(exc).__name__}: {exc}"))
    return acc, failures


@dataclasses.dataclass(frozen=True)
class ReportRow:
    """One checked quantity: |value - reference| must not exceed band."""

    name: str
    value: float
    reference: float
    band: float

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return abs(self.value - self.reference) <= self.band

    def csv_line(self) -> str:
        return (f"{self.name},{self.value:.12g},{self.reference:.12g},"
                f"{self.band:.12g},{'pass' if self.passed else 'FAIL'}")


@dataclasses.dataclass
class ExperimentReport:
    experiment: str
    rows: List[ReportRow]
    meta: Dict[str, float] = dataclasses.field(default_factory=dict)
    failures: List[ReplicaFailure] = dataclasses.field(default_factory=list)

    @property
    def partial(self) -> bool:
        return len(self.failures) > 0

    @property
    def passed(self) -> bool:
        return (not self.partial) and all(r.passed for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_csv(self) -> str:
        lines = ["name,value,reference,band,status"]
        lines += [r.csv_line() for r in self.rows]
        for f in self.failures:
            msg = f.message.replace(",", ";").replace("\n", " ")
            lines.append(f"replica_{f.index}_failed,nan,nan,nan,{msg}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        n_pass = sum(r.passed for r in self.rows)
        state = "PASS" if self.passed else "FAIL"
        extra = f", {len(self.failures)} replica failures" \
            if self.failures else ""
        return (f"{self.experiment}: {state} "
                f"({n_pass}/{len(self.rows)} checks{extra})")


class StageTimer:
    """Accumulates named wall-clock stages for report metadata."""

    def __init__(self):
        self.stages: Dict[str, float] = {}
        self._t0: Optional[float] = None
        self._name: Optional[str] = None

    def start(self, name: str) -> None:
        self.stop()
        self._name = name
        self._t0 = time.perf_counter()

    def stop(self) -> None:
        if self._name is not None:
            dt = time.perf_counter() - self._t0
            self.stages[self._name] = self.stages.get(self._name, 0.0) + dt
            self._name = None

    def total(self) -> float:
        self.stop()
        return sum(self.stages.values())


def write_csv(path, header: str, rows) -> None:
    """Write a deterministic CSV: header string plus %.12g-formatted rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, str):
                    cells.append(cell)
                elif isinstance(cell, (int, np.integer)):
                    cells.append(str(int(cell)))
                else:
                    cells.append(f"{float(cell):.12g}")
            fh.write(",".join(cells) + "\n")


def failure_traceback(exc: BaseException) -> str:
    return "".join(traceback.format_exception(type(exc), exc,
                                              exc.__traceback__))

"""Dynamic sequence-number anomaly detection.

Each node learns the normal behavior of the (SSeq, OSeq, DSeq-delta)
triple over a clean training window; a sample whose squared distance from
the window mean exceeds the trained maximum is judged malicious.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class WindowNotTrainedError(Exception):
    """Raised when classification is attempted before a window has samples."""


@dataclass(frozen=True)
class SeqVector:
    sseq: float
    oseq: float
    dseq_delta: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sseq, self.oseq, self.dseq_delta)


class Label(Enum):
    NORMAL = "Normal"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class Verdict:
    label: Label
    distance: float


def mean_vector(samples: list[SeqVector]) -> tuple[float, float, float]:
    if not samples:
        raise WindowNotTrainedError("window not trained")
    n = len(samples)
    return (
        sum(s.sseq for s in samples) / n,
        sum(s.oseq for s in samples) / n,
        sum(s.dseq_delta for s in samples) / n,
    )


def distance(sample: SeqVector, mean: tuple[float, float, float]) -> float:
    """Squared Euclidean distance between a sample and the window mean."""
    dx = sample.sseq - mean[0]
    dy = sample.oseq - mean[1]
    dz = sample.dseq_delta - mean[2]
    return dx * dx + dy * dy + dz * dz


@dataclass
class TrainingWindow:
    samples: list[SeqVector] = field(default_factory=list)
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    threshold: float = 0.0
    window_index: int = 0
    trained: bool = False

    def train(self) -> float:
        """Recompute mean and threshold; returns the threshold."""
        self.mean = mean_vector(self.samples)
        self.threshold = max(distance(s, self.mean) for s in self.samples)
        self.trained = True
        return self.threshold


def train_threshold(window: TrainingWindow) -> float:
    return window.train()


def classify(sample: SeqVector, window: TrainingWindow) -> Verdict:
    if not window.trained or not window.samples:
        raise WindowNotTrainedError("window not trained")
    d = distance(sample, window.mean)
    label = Label.MALICIOUS if d > window.threshold else Label.NORMAL
    return Verdict(label, d)


def advance_window(window: TrainingWindow,
                   new_samples: list[SeqVector]) -> TrainingWindow:
    """Merge a fully-normal batch into the training set, evicting the
    oldest entries to keep the sample count fixed.  A batch containing any
    malicious sample is discarded and the window returned unchanged."""
    if not new_samples:
        return window
    for s in new_samples:
        if classify(s, window).label is Label.MALICIOUS:
            return window
    merged = (window.samples + new_samples)[-len(window.samples):]
    out = TrainingWindow(samples=merged, window_index=window.window_index + 1)
    out.train()
    return out


def verdict_csv_row(node_id: int, sample: SeqVector, verdict: Verdict,
                    threshold: float) -> str:
    return (f"{node_id},{sample.sseq:g},{sample.oseq:g},{sample.dseq_delta:g},"
            f"{verdict.distance:.9g},{threshold:.9g},{verdict.label.value}")

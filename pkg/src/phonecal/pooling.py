"""Frame -> phone pooling of log-likelihood vectors.

Three combination rules are supported:

``sum``      frames treated as independent evidence
``mean``     frames treated as fully correlated copies of one observation
``logdur``   the mean scaled by ln(n), between the two

Pooled phones are collected in a :class:`TrialSet`, a column-oriented
container that the metrics and calibration code consume directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

NO_STRESS = -1


@dataclass(frozen=True)
class PhoneSegment:
    utterance_id: str
    phone: int
    start_frame: int
    end_frame: int  # exclusive
    stress: int | None = None

    def __post_init__(self):
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise ValueError(
                f"{self.utterance_id}: bad segment [{self.start_frame}, {self.end_frame})"
            )
        if self.stress not in (None, 0, 1, 2):
            raise ValueError(f"stress tag must be 0, 1, 2 or None, got {self.stress!r}")

    @property
    def duration(self) -> int:
        return self.end_frame - self.start_frame


@dataclass
class PhoneTrial:
    true_phone: int
    llk: np.ndarray
    duration: int
    stress: int | None = None


@dataclass
class TrialSet:
    """M labeled phones: ``labels`` (M,), ``llk`` (M, N), ``durations`` (M,).

    ``stress`` holds -1 where a trial carries no stress tag.
    """

    labels: np.ndarray
    llk: np.ndarray
    durations: np.ndarray
    stress: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.llk = np.asarray(self.llk, dtype=np.float64)
        if self.llk.ndim != 2 or self.llk.shape[0] != self.labels.size:
            raise ValueError(f"llk shape {self.llk.shape} does not match {self.labels.size} labels")
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.durations.shape != self.labels.shape:
            raise ValueError("durations and labels differ in length")
        if self.stress is None:
            self.stress = np.full(self.labels.size, NO_STRESS, dtype=np.int64)
        self.stress = np.asarray(self.stress, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("trial label outside the phone set")
        if not np.all(np.isfinite(self.llk)):
            raise ValueError("non-finite log-likelihood in trials")

    @property
    def n_classes(self) -> int:
        return self.llk.shape[1]

    def __len__(self) -> int:
        return int(self.labels.size)

    def __iter__(self) -> Iterator[PhoneTrial]:
        for k in range(len(self)):
            s = int(self.stress[k])
            yield PhoneTrial(int(self.labels[k]), self.llk[k], int(self.durations[k]),
                             None if s == NO_STRESS else s)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, mask) -> "TrialSet":
        return TrialSet(self.labels[mask], self.llk[mask], self.durations[mask], self.stress[mask])

    def with_labels(self, labels) -> "TrialSet":
        return TrialSet(np.asarray(labels), self.llk, self.durations, self.stress)

    def with_llk(self, llk) -> "TrialSet":
        return TrialSet(self.labels, llk, self.durations, self.stress)

    @classmethod
    def from_trials(cls, trials: Iterable[PhoneTrial]) -> "TrialSet":
        trials = list(trials)
        if not trials:
            raise ValueError("no trials")
        return cls(
            [t.true_phone for t in trials],
            np.stack([np.asarray(t.llk, dtype=np.float64) for t in trials]),
            [t.duration for t in trials],
            [NO_STRESS if t.stress is None else t.stress for t in trials],
        )


def as_trial_set(trials) -> TrialSet:
    if isinstance(trials, TrialSet):
        return trials
    return TrialSet.from_trials(trials)


def _stack(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("cannot pool an empty frame sequence")
    return arr


def pool_sum(frames: Sequence) -> np.ndarray:
    arr = _stack(frames)
    # cumsum is a strict left fold over frames
    return np.cumsum(arr, axis=0)[-1]


def pool_mean(frames: Sequence) -> np.ndarray:
    arr = _stack(frames)
    return pool_sum(arr) / arr.shape[0]


def pool_logdur_mean(frames: Sequence) -> np.ndarray:
    arr = _stack(frames)
    return np.log(arr.shape[0]) * pool_mean(arr)


POOLERS: dict[str, Callable[[Sequence], np.ndarray]] = {
    "sum": pool_sum,
    "mean": pool_mean,
    "logdur": pool_logdur_mean,
}


def get_pooler(method: str) -> Callable[[Sequence], np.ndarray]:
    if method == "logdur_mean":
        method = "logdur"
    try:
        return POOLERS[method]
    except KeyError:
        raise ValueError(f"unknown pooling method {method!r}; choose from {sorted(POOLERS)}") from None


def pool(segments: Iterable[PhoneSegment], frame_llk: Mapping[str, np.ndarray], method: str) -> TrialSet:
    """Pool each aligned segment's frame log-likelihoods into one trial.

    ``frame_llk`` maps utterance id -> T x N frame log-likelihood matrix.
    Output order follows ``segments``.
    """
    fn = get_pooler(method)
    labels, vecs, durs, stress = [], [], [], []
    for seg in segments:
        try:
            mat = frame_llk[seg.utterance_id]
        except KeyError:
            raise ValueError(f"no frame log-likelihoods for utterance {seg.utterance_id!r}") from None
        if seg.end_frame > mat.shape[0]:
            raise ValueError(
                f"segment [{seg.start_frame}, {seg.end_frame}) of utterance "
                f"{seg.utterance_id!r} exceeds its {mat.shape[0]} frames"
            )
        labels.append(seg.phone)
        vecs.append(fn(mat[seg.start_frame:seg.end_frame]))
        durs.append(seg.duration)
        stress.append(NO_STRESS if seg.stress is None else seg.stress)
    if not labels:
        raise ValueError("no segments to pool")
    return TrialSet(labels, np.stack(vecs), durs, stress)


def pool_frames(frame_lists: Sequence[np.ndarray], labels, method: str) -> TrialSet:
    """Pool pre-cut per-phone frame blocks (as produced by the synthesizer)."""
    fn = get_pooler(method)
    vecs = np.stack([fn(block) for block in frame_lists])
    durs = [len(block) for block in frame_lists]
    return TrialSet(labels, vecs, durs)

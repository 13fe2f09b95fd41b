"""Phone-set bookkeeping and the posterior -> log-likelihood -> posterior chain.

A DNN acoustic model emits posteriors over pdf-ids (shared HMM-state
densities).  Every pdf-id belongs to exactly one base phone, so phone
posteriors and phone priors are partition sums over pdf-ids.  Dividing a
phone posterior by its prior gives a scaled likelihood, whose log is the
per-frame log-likelihood vector used everywhere else in this package.

All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_FLOOR = 1e-10
ROW_TOL = 1e-4
PRIOR_TOL = 1e-6


class FormatError(ValueError):
    """Malformed or inconsistent input data."""


class PhoneSet:
    """Ordered phone labels; position defines the class index."""

    def __init__(self, labels: Sequence[str]):
        labels = tuple(str(lab) for lab in labels)
        if len(labels) < 2:
            raise ValueError(f"need at least 2 phone classes, got {len(labels)}")
        if any(not lab for lab in labels):
            raise ValueError("empty phone label")
        if len(set(labels)) != len(labels):
            dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
            raise ValueError(f"duplicate phone labels: {dupes}")
        self.labels = labels
        self._index = {lab: i for i, lab in enumerate(labels)}

    def __eq__(self, other):
        return isinstance(other, PhoneSet) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"PhoneSet({list(self.labels)!r})"

    @property
    def N(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown phone label {label!r}") from None


@dataclass(frozen=True)
class PdfMap:
    """Mapping pdf-id -> phone index, stored as an integer array of length D."""

    pdf_to_phone: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pdf_to_phone, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise FormatError("pdf map must be a nonempty 1-D sequence")
        object.__setattr__(self, "pdf_to_phone", arr)

    @property
    def D(self) -> int:
        return int(self.pdf_to_phone.size)

    def check(self, phones: PhoneSet) -> None:
        bad = (self.pdf_to_phone < 0) | (self.pdf_to_phone >= phones.N)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise FormatError(
                f"pdf {i} maps to phone index {self.pdf_to_phone[i]}, "
                f"outside [0, {phones.N})"
            )

    @classmethod
    def identity(cls, n: int) -> "PdfMap":
        return cls(np.arange(n))


@dataclass
class FramePosteriorMatrix:
    """T x D pdf-id posteriors of one utterance.

    Rows are validated to sum to one within ``ROW_TOL`` and then
    renormalized, which absorbs the slack of 32-bit exports.
    """

    utterance_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = normalize_rows(self.values, name=self.utterance_id)


def normalize_rows(values, tol: float = ROW_TOL, name: str = "matrix") -> np.ndarray:
    vals = np.array(values, dtype=np.float64)
    if vals.ndim != 2:
        raise FormatError(f"{name}: expected a 2-D matrix, got shape {vals.shape}")
    if not np.all(np.isfinite(vals)) or vals.min(initial=0.0) < 0 or vals.max(initial=0.0) > 1:
        raise FormatError(f"{name}: posterior entries must lie in [0, 1]")
    sums = vals.sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        t = int(np.flatnonzero(bad)[0])
        raise FormatError(f"{name}: row {t} sums to {sums[t]:.6g}, not 1 (tol {tol:g})")
    return vals / sums[:, None]


def check_prior(values, n: int | None = None, tol: float = PRIOR_TOL) -> np.ndarray:
    """Validate a prior vector and return it as float64."""
    p = np.array(values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("prior must be 1-D")
    if n is not None and p.size != n:
        raise ValueError(f"prior has length {p.size}, expected {n}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("prior entries must be strictly positive")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"prior sums to {p.sum():.9g}, not 1")
    return p


def flat_prior(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def reduce_pdf_posteriors(frames, pdf_map: PdfMap, phones: PhoneSet) -> np.ndarray:
    """Sum pdf-id posteriors into phone posteriors.

    ``frames`` is a T x D array or a :class:`FramePosteriorMatrix`.  Columns
    are accumulated in pdf order, so the result is deterministic.
    """
    if isinstance(frames, FramePosteriorMatrix):
        frames = frames.values
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[None, :]
    if frames.shape[1] != pdf_map.D:
        raise FormatError(
            f"posterior matrix has {frames.shape[1]} pdf columns but pdf map has {pdf_map.D}"
        )
    pdf_map.check(phones)
    out = np.zeros((frames.shape[0], phones.N))
    for i, f in enumerate(pdf_map.pdf_to_phone):
        out[:, f] += frames[:, i]
    return out


def reduce_pdf_priors(pdf_priors, pdf_map: PdfMap, phones: PhoneSet) -> np.ndarray:
    p = np.asarray(pdf_priors, dtype=np.float64)
    if p.shape != (pdf_map.D,):
        raise FormatError(f"pdf priors have length {p.size}, pdf map has {pdf_map.D}")
    pdf_map.check(phones)
    out = np.zeros(phones.N)
    for i, f in enumerate(pdf_map.pdf_to_phone):
        out[f] += p[i]
    empty = np.flatnonzero(out <= 0)
    if empty.size:
        raise ValueError(f"phone {phones.labels[empty[0]]!r} has zero prior mass")
    return check_prior(out, phones.N)


def frame_log_likelihoods(phone_posteriors, phone_priors, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """log(posterior / prior) per phone, additive constant fixed to 0.

    Works on a single row or a T x N matrix.  Posteriors below ``floor``
    (in particular exact zeros) are raised to ``floor`` first.
    """
    post = np.asarray(phone_posteriors, dtype=np.float64)
    prior = check_prior(phone_priors, post.shape[-1])
    if np.any(post < 0):
        raise ValueError("negative posterior")
    return np.log(np.maximum(post, floor)) - np.log(prior)


def log_posterior_from_loglik(llk, eval_prior) -> np.ndarray:
    """Log of the prior-weighted softmax of ``llk`` along the last axis."""
    llk = np.asarray(llk, dtype=np.float64)
    prior = check_prior(eval_prior, llk.shape[-1])
    z = llk + np.log(prior)
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def posterior_from_loglik(llk, eval_prior) -> np.ndarray:
    """p_f = prior_f exp(llk_f) / sum_i prior_i exp(llk_i), overflow-safe."""
    llk = np.asarray(llk, dtype=np.float64)
    prior = check_prior(eval_prior, llk.shape[-1])
    z = llk + np.log(prior)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)

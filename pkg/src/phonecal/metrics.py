"""Class-balanced multiclass cross entropy and pairwise EER confusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import check_prior, flat_prior, log_posterior_from_loglik
from .pooling import NO_STRESS, TrialSet, as_trial_set


@dataclass
class EvalReport:
    h_mc: float
    per_class_penalty: np.ndarray  # NaN where a class has no trials
    class_counts: np.ndarray
    n_active_classes: int
    eval_prior: np.ndarray

    def to_dict(self, labels: Sequence[str] | None = None) -> dict:
        pen = [None if math.isnan(v) else float(v) for v in self.per_class_penalty]
        out = {
            "h_mc": self.h_mc,
            "n_active_classes": self.n_active_classes,
            "per_class_penalty": pen,
            "class_counts": [int(c) for c in self.class_counts],
            "eval_prior": [float(p) for p in self.eval_prior],
        }
        if labels is not None:
            out["phones"] = list(labels)
        return out


def trial_weights(labels: np.ndarray, n_classes: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-trial weights 1 / (n_active * N_f) that make a plain weighted sum
    equal the class-balanced average.  Returns (weights, counts, n_active)."""
    counts = np.bincount(labels, minlength=n_classes)
    n_active = int(np.count_nonzero(counts))
    if n_active == 0:
        raise ValueError("no trials")
    return 1.0 / (n_active * counts[labels]), counts, n_active


def transformed_llk(llk: np.ndarray, transform=None) -> np.ndarray:
    if transform is None:
        return llk
    beta = np.asarray(transform.beta, dtype=np.float64)
    if beta.shape != (llk.shape[1],):
        raise ValueError(f"transform has {beta.size} offsets for {llk.shape[1]} classes")
    return transform.alpha * llk + beta


def trial_penalties(trials, eval_prior=None, transform=None) -> np.ndarray:
    """-log posterior of the true class for every trial (nats)."""
    ts = as_trial_set(trials)
    prior = flat_prior(ts.n_classes) if eval_prior is None else check_prior(eval_prior, ts.n_classes)
    logp = log_posterior_from_loglik(transformed_llk(ts.llk, transform), prior)
    return -logp[np.arange(len(ts)), ts.labels]


def h_mc(trials, eval_prior=None, transform=None) -> EvalReport:
    """Multiclass cross entropy with equal weight for every phone class.

    Penalties are averaged within each class first, then over the classes
    that actually occur; classes without trials drop out of the outer mean.
    The evaluation prior defaults to flat.
    """
    ts = as_trial_set(trials)
    if len(ts) == 0:
        raise ValueError("no trials")
    n = ts.n_classes
    prior = flat_prior(n) if eval_prior is None else check_prior(eval_prior, n)
    pen = trial_penalties(ts, prior, transform)
    counts = np.bincount(ts.labels, minlength=n)
    sums = np.bincount(ts.labels, weights=pen, minlength=n)
    active = counts > 0
    per_class = np.full(n, np.nan)
    per_class[active] = sums[active] / counts[active]
    value = float(per_class[active].mean())
    return EvalReport(value, per_class, counts, int(active.sum()), prior)


# ---------------------------------------------------------------------------
# Equal error rate
# ---------------------------------------------------------------------------

@dataclass
class EERResult:
    eer: float
    n_target: int
    n_nontarget: int

    @property
    def degenerate(self) -> bool:
        return self.n_target == 0 or self.n_nontarget == 0


def roc_points(tar, non) -> tuple[np.ndarray, np.ndarray]:
    """(p_miss, p_fa) at every distinct threshold, thresholds ascending.

    A trial with score s is accepted when s >= threshold; ties between target
    and non-target scores fall on one ROC step.
    """
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    scores = np.concatenate([tar, non])
    is_tar = np.concatenate([np.ones(tar.size), np.zeros(non.size)])
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    t = is_tar[order]
    # group ties: boundaries after the last member of each distinct score
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    ctar = np.cumsum(t)[last]
    cnon = np.cumsum(1.0 - t)[last]
    pmiss = np.r_[0.0, ctar / tar.size]
    pfa = np.r_[1.0, 1.0 - cnon / non.size]
    return pmiss, pfa


def rocch_eer(tar, non) -> float:
    """EER on the convex hull of the ROC.

    The hull lower boundary is crossed by the line p_miss = p_fa on exactly
    one edge; the EER is the crossing point there.
    """
    pmiss, pfa = roc_points(tar, non)
    # walk in increasing p_fa
    x = pfa[::-1]
    y = pmiss[::-1]
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    for a, b in zip(hull[:-1], hull[1:]):
        d0 = y[a] - x[a]
        d1 = y[b] - x[b]
        if d0 >= 0 >= d1:
            return segment_crossing(x[a], y[a], x[b], y[b])
    raise AssertionError("ROC hull does not cross the diagonal")  # unreachable


def segment_crossing(x0: float, y0: float, x1: float, y1: float) -> float:
    """Point where the segment (x0, y0)-(x1, y1) meets y = x."""
    d0 = y0 - x0
    d1 = y1 - x1
    if d0 == d1:
        return float(x0)
    t = d0 / (d0 - d1)
    return float(x0 + t * (x1 - x0))


def eer_from_scores(tar, non) -> float:
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        return 0.5
    return rocch_eer(tar, non)


def pair_scores(trials, target: int, hypothesis: int, stress: int | None = None):
    """Log-likelihood-ratio scores llk[target] - llk[hypothesis] for the
    target-class trials (optionally of one stress) and the hypothesis-class
    trials (any stress)."""
    ts = as_trial_set(trials)
    s = ts.llk[:, target] - ts.llk[:, hypothesis]
    tmask = ts.labels == target
    if stress is not None:
        tmask &= ts.stress == stress
    return s[tmask], s[ts.labels == hypothesis]


def pairwise_eer(trials, target: int, hypothesis: int, stress: int | None = None) -> EERResult:
    if target == hypothesis:
        raise ValueError("target and hypothesis phone must differ")
    tar, non = pair_scores(trials, target, hypothesis, stress)
    return EERResult(eer_from_scores(tar, non), int(tar.size), int(non.size))


@dataclass
class ConfusionMatrix:
    """Rows are (target phone, stress) pairs, columns hypothesis phones.

    ``eer`` is NaN where row and column name the same phone.
    """

    targets: list[tuple[int, int | None]]
    hypotheses: list[int]
    eer: np.ndarray
    n_target: np.ndarray
    n_nontarget: np.ndarray

    def row_labels(self, labels: Sequence[str]) -> list[str]:
        return [labels[f] if s is None else f"{labels[f]}{s}" for f, s in self.targets]


def confusion_matrix(trials, phones, subset: Sequence[int] | None = None,
                     stress_split: bool = False) -> ConfusionMatrix:
    """Pairwise EER for every (target, hypothesis) pair within ``subset``.

    With ``stress_split`` each target phone is expanded into one row per
    stress tag present among its trials; hypotheses are never split.
    """
    ts = as_trial_set(trials)
    n = ts.n_classes if phones is None else len(phones)
    members = list(range(n)) if subset is None else [int(f) for f in subset]
    rows: list[tuple[int, int | None]] = []
    for f in members:
        if stress_split:
            tags = sorted({int(s) for s in ts.stress[ts.labels == f]})
            if NO_STRESS in tags and len(tags) > 1:
                raise ValueError(f"phone {f}: stress split requested but some trials lack a stress tag")
            if not tags or tags == [NO_STRESS]:
                rows.append((f, None))
            else:
                rows.extend((f, s) for s in tags)
        else:
            rows.append((f, None))
    eer = np.full((len(rows), len(members)), np.nan)
    ntar = np.zeros((len(rows), len(members)), dtype=np.int64)
    nnon = np.zeros_like(ntar)
    for r, (f, s) in enumerate(rows):
        for c, g in enumerate(members):
            tar, non = pair_scores(ts, f, g, s)
            ntar[r, c] = tar.size
            nnon[r, c] = non.size
            if f != g:
                eer[r, c] = eer_from_scores(tar, non)
    return ConfusionMatrix(rows, members, eer, ntar, nnon)

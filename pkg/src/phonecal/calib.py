"""Affine calibration of log-likelihood vectors: llk' = alpha * llk + beta.

The class-balanced cross entropy of the calibrated posteriors is a convex
function of (alpha, beta): the logits alpha * llk_f + beta_f + log prior_f
are linear in the parameters and log-sum-exp is convex.  ``fit`` minimizes
it with a damped Newton iteration (falling back to plain gradient steps)
under an Armijo backtracking line search.  ``method="gd"`` runs the plain
first-order variant.

Parameters are packed as a vector ``[alpha, beta_0, ..., beta_{N-1}]``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import check_prior, flat_prior
from .metrics import h_mc, trial_weights
from .pooling import as_trial_set

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
SHRINK = 0.5


@dataclass
class CalibrationTransform:
    alpha: float
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = float(self.alpha)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if not np.isfinite(self.alpha) or not np.all(np.isfinite(self.beta)):
            raise ValueError("calibration parameters must be finite")

    @classmethod
    def identity(cls, n: int) -> "CalibrationTransform":
        return cls(1.0, np.zeros(n))

    @property
    def params(self) -> np.ndarray:
        return np.r_[self.alpha, self.beta]

    @classmethod
    def from_params(cls, theta) -> "CalibrationTransform":
        return cls(theta[0], theta[1:])

    def canonical(self) -> "CalibrationTransform":
        return CalibrationTransform(self.alpha, self.beta - self.beta.mean())

    def to_json(self, phones: Sequence[str]) -> dict:
        if len(phones) != self.beta.size:
            raise ValueError("phone list does not match transform size")
        return {"alpha": self.alpha, "beta": [float(b) for b in self.beta], "phones": list(phones)}

    @classmethod
    def from_json(cls, doc: dict, phones: Sequence[str] | None = None) -> "CalibrationTransform":
        if phones is not None and list(doc["phones"]) != list(phones):
            raise ValueError("transform was fitted on a different phone set")
        return cls(doc["alpha"], doc["beta"])

    def save(self, path, phones: Sequence[str]) -> None:
        Path(path).write_text(json.dumps(self.to_json(phones), indent=1) + "\n")

    @classmethod
    def load(cls, path, phones: Sequence[str] | None = None) -> "CalibrationTransform":
        return cls.from_json(json.loads(Path(path).read_text()), phones)


def apply(transform: CalibrationTransform, llk) -> np.ndarray:
    llk = np.asarray(llk, dtype=np.float64)
    if llk.shape[-1] != transform.beta.size:
        raise ValueError(f"llk has {llk.shape[-1]} classes, transform has {transform.beta.size}")
    return transform.alpha * llk + transform.beta


@dataclass
class FitResult:
    transform: CalibrationTransform
    h_mc_before: float
    h_mc_after: float
    iterations: int
    converged: bool
    grad_norm: float = float("nan")

    @property
    def alpha_nonpositive(self) -> bool:
        return self.transform.alpha <= 0

    def to_dict(self, phones: Sequence[str]) -> dict:
        return {
            "transform": self.transform.to_json(phones),
            "h_mc_before": self.h_mc_before,
            "h_mc_after": self.h_mc_after,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_max_norm": self.grad_norm,
            "alpha_nonpositive": self.alpha_nonpositive,
        }


class _Objective:
    """Class-balanced cross entropy as a function of the packed parameters."""

    def __init__(self, trials, eval_prior=None, ridge: float = 0.0):
        ts = as_trial_set(trials)
        n = ts.n_classes
        self.llk = ts.llk
        self.labels = ts.labels
        self.rows = np.arange(len(ts))
        self.log_prior = np.log(flat_prior(n) if eval_prior is None else check_prior(eval_prior, n))
        self.w, self.counts, self.n_active = trial_weights(ts.labels, n)
        self.ridge = ridge

    def _softmax(self, theta):
        z = theta[0] * self.llk + theta[1:] + self.log_prior
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return z, lse

    def _ridge_term(self, theta):
        d = theta.copy()
        d[0] -= 1.0
        return d

    def value(self, theta) -> float:
        z, lse = self._softmax(theta)
        pen = lse - z[self.rows, self.labels]
        v = float(np.dot(self.w, pen))
        if self.ridge:
            d = self._ridge_term(theta)
            v += 0.5 * self.ridge * float(d @ d)
        return v

    def _probs(self, theta):
        z, lse = self._softmax(theta)
        p = np.exp(z - lse[:, None])
        return p, lse - z[self.rows, self.labels]

    def value_grad(self, theta):
        p, pen = self._probs(theta)
        g_z = p * self.w[:, None]
        g_z[self.rows, self.labels] -= self.w
        grad = np.r_[np.sum(g_z * self.llk), g_z.sum(axis=0)]
        v = float(np.dot(self.w, pen))
        if self.ridge:
            d = self._ridge_term(theta)
            v += 0.5 * self.ridge * float(d @ d)
            grad = grad + self.ridge * d
        return v, grad

    def hessian(self, theta) -> np.ndarray:
        p, _ = self._probs(theta)
        w = self.w
        wp = p * w[:, None]
        pl = np.sum(p * self.llk, axis=1)  # E_p[llk] per trial
        n = p.shape[1]
        h = np.empty((n + 1, n + 1))
        h[0, 0] = np.sum(w * (np.sum(p * self.llk ** 2, axis=1) - pl ** 2))
        h_ab = np.sum(wp * (self.llk - pl[:, None]), axis=0)
        h[0, 1:] = h_ab
        h[1:, 0] = h_ab
        h[1:, 1:] = np.diag(wp.sum(axis=0)) - wp.T @ p
        if self.ridge:
            h += self.ridge * np.eye(n + 1)
        return h


def objective(params, trials, eval_prior=None, ridge: float = 0.0) -> float:
    return _Objective(trials, eval_prior, ridge).value(np.asarray(params, dtype=np.float64))


def gradient(params, trials, eval_prior=None, ridge: float = 0.0) -> np.ndarray:
    """Analytic gradient of the class-balanced cross entropy w.r.t.
    ``[alpha, beta_0, ..., beta_{N-1}]``."""
    return _Objective(trials, eval_prior, ridge).value_grad(np.asarray(params, dtype=np.float64))[1]


def hessian(params, trials, eval_prior=None, ridge: float = 0.0) -> np.ndarray:
    return _Objective(trials, eval_prior, ridge).hessian(np.asarray(params, dtype=np.float64))


def _newton_direction(obj: _Objective, theta, grad) -> np.ndarray:
    h = obj.hessian(theta)
    # beta + c*1 leaves the objective unchanged, so h is singular; the
    # minimum-norm solution stays orthogonal to that direction
    step = -np.linalg.lstsq(h, grad, rcond=None)[0]
    if not np.all(np.isfinite(step)) or grad @ step >= 0:
        return -grad
    return step


def fit(trials, eval_prior=None, *, init: CalibrationTransform | None = None,
        max_iter: int = 500, tol: float = 1e-7, method: str = "newton",
        ridge: float = 0.0) -> FitResult:
    """Find the affine transform minimizing class-balanced cross entropy.

    Stops once the gradient max-norm drops below ``tol`` or after
    ``max_iter`` iterations; in the latter case ``converged`` is False.
    The returned beta is projected to zero mean.
    """
    ts = as_trial_set(trials)
    obj = _Objective(ts, eval_prior, ridge)
    if obj.n_active < 2:
        raise ValueError("calibration needs trials from at least two classes")
    if method not in ("newton", "gd"):
        raise ValueError(f"unknown method {method!r}")
    n = ts.n_classes
    start = CalibrationTransform.identity(n) if init is None else init
    theta = start.params.copy()
    f, g = obj.value_grad(theta)
    it = 0
    converged = False
    fallback = False
    while True:
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        if method == "newton" and not fallback:
            d = _newton_direction(obj, theta, g)
        else:
            d = -g
        slope = float(g @ d)
        step = 1.0
        while True:
            cand = theta + step * d
            fc = obj.value(cand)
            if fc <= f + ARMIJO_C * step * slope or step < 1e-20:
                break
            step *= SHRINK
        if fc > f or np.array_equal(cand, theta):
            # stalled at machine precision; retry once along the gradient
            if method == "newton" and not fallback:
                fallback = True
                continue
            break
        fallback = False
        theta = cand
        f, g = obj.value_grad(theta)

    transform = CalibrationTransform.from_params(theta).canonical()
    ident = CalibrationTransform.identity(n)
    before = h_mc(ts, eval_prior, ident).h_mc
    after = h_mc(ts, eval_prior, transform).h_mc
    if after > before and not ridge:
        # never lose to the starting point of the canonical problem
        transform, after = ident, before
    result = FitResult(transform, before, after, it, converged, float(np.max(np.abs(g))))
    if result.alpha_nonpositive:
        warnings.warn(f"fitted calibration scale alpha={transform.alpha:.4g} is not positive",
                      RuntimeWarning, stacklevel=2)
    if not converged:
        log.warning("calibration fit stopped after %d iterations (grad %.3g)", it, result.grad_norm)
    return result

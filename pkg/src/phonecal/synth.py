"""Synthetic phone corpora with known calibration.

Each class is an isotropic Gaussian in a K-dimensional feature space.  A
phone of class f and duration n yields frames

    x_t = mean_f + sigma * (sqrt(rho) * z + sqrt(1 - rho) * eps_t)

with one shared latent z per phone and fresh eps_t per frame, so every
frame is marginally N(mean_f, sigma^2 I) whatever rho is.  The frame
log-likelihood vector holds the exact class log-densities of x_t, which
makes single frames perfectly calibrated under a flat prior.  rho = 0 gives
independent frames (summing is exact), rho = 1 gives identical frames
(averaging is exact).

Every trial draws from its own Philox stream keyed on (seed, trial index).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pooling import TrialSet, pool_frames


def circle_means(n: int, radius: float = 2.0) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass
class SynthConfig:
    n_phones: int = 10
    class_means: list | None = None  # defaults to a circle of radius 2 in 2-D
    sigma: float = 1.0
    rho: float = 1.0
    duration_law: tuple = ("fixed", 8)  # ("fixed", n) | ("uniform", a, b) | ("geometric", p)
    n_trials_per_class: int = 100
    seed: int = 0
    radius: float = 2.0

    def __post_init__(self):
        if self.n_phones < 2:
            raise ValueError("need at least 2 phones")
        if self.class_means is None:
            self.class_means = circle_means(self.n_phones, self.radius).tolist()
        means = self.means
        if means.ndim != 2 or means.shape[0] != self.n_phones:
            raise ValueError(f"class_means must be {self.n_phones} x K")
        if len({tuple(m) for m in means.tolist()}) != self.n_phones:
            raise ValueError("class means must be distinct")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_trials_per_class < 1:
            raise ValueError("n_trials_per_class must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.duration_law = tuple(self.duration_law)
        kind = self.duration_law[0]
        if kind == "fixed":
            ok = len(self.duration_law) == 2 and int(self.duration_law[1]) >= 1
        elif kind == "uniform":
            ok = len(self.duration_law) == 3 and 1 <= int(self.duration_law[1]) <= int(self.duration_law[2])
        elif kind == "geometric":
            ok = len(self.duration_law) == 2 and 0 < float(self.duration_law[1]) <= 1
        else:
            ok = False
        if not ok:
            raise ValueError(f"bad duration law {self.duration_law!r}")

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.class_means, dtype=np.float64)

    def to_json(self) -> dict:
        d = asdict(self)
        d["duration_law"] = list(self.duration_law)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class SynthCorpus:
    """Per-phone frame log-likelihood blocks (n_k x N) with true labels."""

    frames: list[np.ndarray]
    labels: np.ndarray
    config: SynthConfig = field(repr=False)

    def pooled(self, method: str) -> TrialSet:
        return pool_frames(self.frames, self.labels, method)

    def __len__(self) -> int:
        return len(self.frames)


def _duration(rng: np.random.Generator, law: tuple) -> int:
    kind = law[0]
    if kind == "fixed":
        return int(law[1])
    if kind == "uniform":
        return int(rng.integers(int(law[1]), int(law[2]) + 1))
    return int(rng.geometric(float(law[1])))  # support starts at 1


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def class_log_densities(x: np.ndarray, means: np.ndarray, sigma: float) -> np.ndarray:
    """log N(x; mean_i, sigma^2 I) for each row of x and each class i."""
    k = means.shape[1]
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return -0.5 * d2 / sigma ** 2 - 0.5 * k * np.log(2 * np.pi * sigma ** 2)


def generate(config: SynthConfig) -> SynthCorpus:
    means = config.means
    k = means.shape[1]
    a, b = np.sqrt(config.rho), np.sqrt(1.0 - config.rho)
    blocks, labels = [], []
    idx = 0
    for f in range(config.n_phones):
        for _ in range(config.n_trials_per_class):
            rng = trial_rng(config.seed, idx)
            n = _duration(rng, config.duration_law)
            z = rng.standard_normal(k)
            eps = rng.standard_normal((n, k))
            blocks.append(means[f] + config.sigma * (a * z + b * eps))
            labels.append(f)
            idx += 1
    llk = class_log_densities(np.concatenate(blocks), means, config.sigma)
    cuts = np.cumsum([len(x) for x in blocks])[:-1]
    frames = np.split(llk, cuts)
    return SynthCorpus(frames, np.asarray(labels, dtype=np.int64), config)


def shuffle_labels(trials: TrialSet, seed: int, offset: int | None = None) -> TrialSet:
    """Relabel trials with the labels of trials ``offset`` positions away in a
    seeded random order (default: half the set away).

    No trial keeps its own label slot, but a label value may survive when
    the partner happens to share the class.  ``offset=0`` is the identity.
    """
    m = len(trials)
    if m < 2:
        raise ValueError("need at least 2 trials to shuffle")
    if offset is None:
        offset = m // 2
    order = np.random.default_rng(seed).permutation(m)
    new = np.empty_like(trials.labels)
    new[order] = trials.labels[np.roll(order, -offset)]
    return trials.with_labels(new)

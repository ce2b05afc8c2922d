"""Inference timing harness.

Every subject is wrapped as a callable over an in-memory dataset that is
prepared before the clock starts. One untimed warm-up pass is followed by
``trials`` timed passes covering prediction only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

SUBJECTS = ("thermo-oracle", "cnn", "cnn-lite", "mlp", "lda", "qda")
DEFAULT_TRIALS = 10


@dataclass
class BenchReport:
    subject: str
    batch_size: int
    trials: list
    dataset_size: int
    mean: float = field(init=False)
    std: float = field(init=False)
    throughput: float = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.trials, dtype=float)
        if t.size == 0:
            raise ValueError("no trials")
        self.trials = t.tolist()
        self.mean = float(np.mean(t))
        self.std = float(np.std(t))
        self.throughput = self.dataset_size / self.mean if self.mean > 0 else float("inf")

    def lines(self):
        return [
            f"subject={self.subject}",
            f"batch_size={self.batch_size}",
            f"dataset_size={self.dataset_size}",
            f"trials={len(self.trials)}",
            f"mean_s={self.mean:.6f}",
            f"std_s={self.std:.6f}",
            f"throughput_pairs_per_s={self.throughput:.1f}",
        ]

    def as_dict(self):
        return {"subject": self.subject, "batch_size": self.batch_size,
                "dataset_size": self.dataset_size, "trials": self.trials,
                "mean": self.mean, "std": self.std, "throughput": self.throughput}


def time_callable(fn, trials: int = DEFAULT_TRIALS, warmup: int = 1):
    """Run ``fn`` ``warmup`` times untimed, then return ``trials`` durations in seconds."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        fn()
        out.append((time.perf_counter_ns() - t0) * 1e-9)
    return out


def bench(subject: str, predict, data, batch_size: int, trials: int = DEFAULT_TRIALS,
          dataset_size: int | None = None) -> BenchReport:
    """Time ``predict(data)``.

    ``data`` must already be fully materialised (sequence pairs, encoded
    grids or feature matrices); nothing is read from disk inside the timed
    loop.
    """
    if subject not in SUBJECTS:
        raise ValueError(f"unknown subject {subject!r}; choose from {SUBJECTS}")
    if dataset_size is None:
        dataset_size = len(data)
    times = time_callable(lambda: predict(data), trials)
    return BenchReport(subject, batch_size, times, dataset_size)


def make_predictor(subject: str, model=None, params=None, batch_size: int = 512):
    """Build ``(prepare, predict)`` for a subject.

    ``prepare`` turns a list of pairs into the subject's in-memory input
    and runs outside the timed region; ``predict`` maps that input to yields
    or scores. ``model`` is the fitted estimator (or pipeline for feature
    models); the thermo oracle needs none.
    """
    if subject == "thermo-oracle":
        from .thermo import REFERENCE_TEMP, YieldOracle
        oracle = YieldOracle(params)
        return list, lambda pairs: oracle.yields(pairs, [REFERENCE_TEMP])[:, 0]
    if model is None:
        raise ValueError(f"subject {subject!r} needs a fitted model")
    if subject in ("cnn", "cnn-lite"):
        return model.grids, lambda grids: model.predict_grids(grids, batch_size)
    if subject in ("mlp", "lda", "qda"):
        from .features import extract_many

        def prepare(pairs):
            return extract_many(pairs)
        if hasattr(model, "predict_proba"):
            return prepare, lambda X: model.predict_proba(X)[:, 1]
        return prepare, model.predict
    raise ValueError(f"unknown subject {subject!r}; choose from {SUBJECTS}")

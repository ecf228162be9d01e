"""Sub-Gaussian concentration of the crowd estimator and the Hoeffding baseline.

X ~ Binomial(n_ppl, p) and C_hat = X / p. The tail bound is

    P[|C_hat - n_ppl| >= phi n_ppl] <= 2 exp(-(phi^2 / 2) n_ppl p^2 / K(p))

with K the optimal sub-Gaussian variance proxy of a Bernoulli(p) variable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

_HALF_WINDOW = 1e-8


@dataclass(frozen=True)
class BoundQuery:
    p: float
    n_ppl: int
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.n_ppl < 1:
            raise ValueError("n_ppl must be positive")
        if not self.phi > 0:
            raise ValueError("phi must be positive")


def K(p: float) -> float:
    """(p - q) / (2 (ln p - ln q)) with q = 1 - p, extended continuously.

    K(0) = K(1) = 0 and K(1/2) = 1/4. Around p = 1/2 the ratio is written as
    x / (4 artanh x) with x = 2p - 1, and its series is used once |x| is tiny.
    """
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"K is defined on [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    if abs(p - 0.5) < _HALF_WINDOW:
        x = 2.0 * p - 1.0
        return 0.25 * (1.0 - x * x / 3.0)
    if 0.25 <= p <= 0.75:
        x = 2.0 * p - 1.0  # exact in this range
        return x / (4.0 * math.atanh(x))
    q = 1.0 - p
    log_p = math.log(p) if p < 0.5 else math.log1p(-q)
    log_q = math.log1p(-p) if p < 0.5 else math.log(q)
    return (p - q) / (2.0 * (log_p - log_q))


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def concentration_bound(q: BoundQuery) -> float:
    if q.p in (0.0, 1.0):
        raise ValueError("bound degenerates at p in {0, 1}")
    return _clamp(2.0 * math.exp(-0.5 * q.phi**2 * q.n_ppl * q.p**2 / K(q.p)))


def hoeffding_bound(q: BoundQuery) -> float:
    if q.p == 0.0:
        raise ValueError("Hoeffding bound needs p > 0")
    return _clamp(2.0 * math.exp(-2.0 * q.phi**2 * q.n_ppl * q.p**2))


@dataclass(frozen=True)
class TailEstimate:
    frequency: float
    std_error: float
    trials: int


def empirical_tail(p: float, n_ppl: int, phi: float, trials: int, seed=0) -> TailEstimate:
    """Monte-Carlo frequency of |X/p - n_ppl| >= phi n_ppl with X ~ Binomial(n_ppl, p)."""
    BoundQuery(p, n_ppl, phi)
    if p == 0.0:
        raise ValueError("estimator undefined at p = 0")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.binomial(n_ppl, p, size=trials)
    c_hat = x / p
    # relative slack keeps exact boundary hits inside the event despite rounding in x / p
    hits = np.abs(c_hat - n_ppl) >= phi * n_ppl * (1.0 - 1e-12)
    f = float(hits.mean())
    return TailEstimate(f, math.sqrt(f * (1.0 - f) / trials), trials)


def bound_table(
    ps: Iterable[float],
    n_ppl: int,
    phi: float,
    trials: int = 0,
    seed: int = 0,
) -> list[dict]:
    """Rows of (p, K, bound, hoeffding, empirical) for p strictly inside (0, 1)."""
    rows = []
    for i, p in enumerate(ps):
        q = BoundQuery(float(p), n_ppl, phi)
        row = {
            "p": q.p,
            "K": K(q.p),
            "bound": concentration_bound(q),
            "hoeffding": hoeffding_bound(q),
            "empirical": empirical_tail(q.p, n_ppl, phi, trials, [seed, i]).frequency if trials else "",
        }
        rows.append(row)
    return rows


def write_bound_table(rows: list[dict], fh: TextIO) -> None:
    w = csv.DictWriter(fh, fieldnames=["p", "K", "bound", "hoeffding", "empirical"], lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

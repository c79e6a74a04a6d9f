"""Rank statistics over benchmark tables.

Every function takes a ``(methods, datasets)`` matrix of seed-averaged scores
and a per-dataset flag saying whether higher is better.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import StatisticError

EXACT_MAX_N = 20


def _check(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise StatisticError("expected a methods x datasets matrix")
    if not np.isfinite(scores).all():
        raise StatisticError("table slice has missing or failed cells")
    return scores


def _orient(scores: np.ndarray, higher_is_better) -> np.ndarray:
    """Flip columns so that larger is always better."""
    hib = np.broadcast_to(np.asarray(higher_is_better, dtype=bool), (scores.shape[1],))
    return np.where(hib[None, :], scores, -scores)


def midranks(values) -> np.ndarray:
    """1-based ranks of ``values`` ascending; ties share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_matrix(scores, higher_is_better=True) -> np.ndarray:
    """Per-dataset ranks (1 = best), mid-ranks for ties."""
    s = _orient(_check(scores), higher_is_better)
    return np.column_stack([midranks(-s[:, j]) for j in range(s.shape[1])])


def average_rank(scores, higher_is_better=True) -> np.ndarray:
    return rank_matrix(scores, higher_is_better).mean(axis=1)


def pama(scores, higher_is_better=True) -> np.ndarray:
    """Share of datasets on which each method is best; tied winners split the credit."""
    s = _orient(_check(scores), higher_is_better)
    credit = np.zeros(s.shape[0])
    for j in range(s.shape[1]):
        best = s[:, j] == s[:, j].max()
        credit[best] += 1.0 / best.sum()
    return credit / s.shape[1]


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


@dataclass
class WilcoxonResult:
    statistic: float  # W+ (sum of ranks of positive differences)
    p_value: float
    n: int  # non-zero differences
    method: str  # "exact" | "normal" | "degenerate"


def signed_rank_statistic(diffs) -> tuple[float, np.ndarray, np.ndarray]:
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    ranks = midranks(np.abs(d))
    return float(ranks[d > 0].sum()), ranks, d


def _exact_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of each achievable ``2 * W+`` over all sign assignments (subset-sum DP)."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(diffs) -> WilcoxonResult:
    """Two-sided test; zeros dropped, mid-ranks for tied magnitudes.

    Exact null distribution for up to 20 non-zero differences, otherwise a
    normal approximation with tie-corrected variance.
    """
    w, ranks, d = signed_rank_statistic(diffs)
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_null_counts(doubled)
        total = 2**n
        k = int(round(2 * w))
        lower = sum(counts[: k + 1])
        upper = sum(counts[k:])
        p = min(1.0, 2 * min(lower, upper) / total)
        return WilcoxonResult(w, float(p), n, "exact")
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float((tie_counts**3 - tie_counts).sum()) / 48
    if var <= 0:
        return WilcoxonResult(w, 1.0, n, "degenerate")
    z = (w - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2))
    return WilcoxonResult(w, min(1.0, p), n, "normal")


def holm(p_values, alpha: float = 0.05) -> np.ndarray:
    """Holm step-down: boolean rejections aligned with ``p_values``."""
    p = np.asarray(p_values, dtype=np.float64)
    m = len(p)
    reject = np.zeros(m, dtype=bool)
    for i, idx in enumerate(np.argsort(p, kind="stable")):
        if p[idx] <= alpha / (m - i):
            reject[idx] = True
        else:
            break
    return reject


def one_sided_sign_test(wins: int, losses: int) -> float:
    """P(X >= wins) for X ~ Binomial(wins + losses, 1/2); ties are dropped by the caller."""
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


@dataclass
class PairwiseReport:
    methods: list
    p_values: np.ndarray  # symmetric, NaN on the diagonal / incomparable pairs
    reject: np.ndarray  # symmetric boolean
    incomparable: list = field(default_factory=list)
    cliques: list = field(default_factory=list)
    average_ranks: np.ndarray | None = None

    def to_dict(self) -> dict:
        def clean(v):
            return None if (isinstance(v, float) and math.isnan(v)) else v
        return {
            "methods": list(self.methods),
            "p_values": [[clean(float(v)) for v in row] for row in self.p_values],
            "holm_reject": self.reject.tolist(),
            "incomparable": [list(p) for p in self.incomparable],
            "cd_groups": [list(g) for g in self.cliques],
            "average_ranks": None if self.average_ranks is None else self.average_ranks.tolist(),
        }


def wilcoxon_holm(scores, methods, higher_is_better=True, alpha: float = 0.05, min_datasets: int = 6) -> PairwiseReport:
    """All-pairs Wilcoxon signed-rank tests with Holm correction and CD cliques."""
    s = _orient(_check(scores), higher_is_better)
    M, D = s.shape
    if D < min_datasets:
        raise StatisticError(f"need at least {min_datasets} datasets, got {D}")
    pairs = list(itertools.combinations(range(M), 2))
    pv = np.full((M, M), np.nan)
    tested, raw = [], []
    incomparable = []
    for a, b in pairs:
        diff = s[a] - s[b]
        if not np.any(diff != 0):
            incomparable.append((methods[a], methods[b]))
            pv[a, b] = pv[b, a] = 1.0
            continue
        p = wilcoxon_signed_rank(diff).p_value
        pv[a, b] = pv[b, a] = p
        tested.append((a, b))
        raw.append(p)
    rej = np.zeros((M, M), dtype=bool)
    if raw:
        for (a, b), r in zip(tested, holm(raw, alpha)):
            rej[a, b] = rej[b, a] = r
    ranks = average_rank(scores, higher_is_better)
    return PairwiseReport(list(methods), pv, rej, incomparable, cd_cliques(ranks, rej, methods), ranks)


def cd_cliques(avg_ranks, reject, methods) -> list[list]:
    """Maximal runs of rank-ordered methods with no significant pair inside (CD-diagram bars)."""
    order = list(np.argsort(avg_ranks, kind="stable"))
    groups = []
    for i in range(len(order)):
        j = i
        while j + 1 < len(order) and not any(reject[order[a], order[j + 1]] for a in range(i, j + 1)):
            j += 1
        if j > i:
            group = [methods[order[t]] for t in range(i, j + 1)]
            if not any(set(group) <= set(g) for g in groups):
                groups.append(group)
    return groups

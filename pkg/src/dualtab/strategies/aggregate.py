from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..predictors import PredictionSet


def aggregate(members: list[PredictionSet], task: str, strategy: str = "ensemble", seed: int = 0) -> PredictionSet:
    """Majority vote (classification) or arithmetic mean (regression), folded in member order.

    Vote ties go to the label with the larger summed member probability, then
    to the lowest label index.
    """
    if not members:
        raise ContractError("nothing to aggregate")
    n = members[0].n_query
    if any(m.n_query != n for m in members):
        raise ContractError("members disagree on the number of queries")
    if task == "regression":
        values = np.zeros(n)
        for m in members:
            values = values + np.asarray(m.values, dtype=np.float64)
        return PredictionSet("regression", values=values / len(members), strategy=strategy,
                             n_members=len(members), seed=seed, members=members)

    C = max(
        max((m.probs.shape[1] for m in members if m.probs is not None), default=0),
        max(int(np.max(m.labels)) + 1 if len(m.labels) else 0 for m in members),
    )
    votes = np.zeros((n, C))
    mass = np.zeros((n, C))
    for m in members:
        if m.probs is not None and m.probs.shape[1] != C:
            if m.probs.shape[1] > C:
                raise ContractError("members disagree on the class count")
        votes[np.arange(n), np.asarray(m.labels, dtype=np.int64)] += 1
        if m.probs is not None:
            mass[:, : m.probs.shape[1]] += m.probs
    best = votes.max(axis=1, keepdims=True)
    # lexicographic (votes, mass, -index): mask non-maximal vote counts
    key = np.where(votes == best, mass, -np.inf)
    labels = np.argmax(key, axis=1)
    return PredictionSet("classification", labels=labels, probs=mass / len(members), strategy=strategy,
                         n_members=len(members), seed=seed, members=members, meta={"votes": votes})

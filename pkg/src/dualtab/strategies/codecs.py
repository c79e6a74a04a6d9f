"""Many-class decompositions into sub-problems of at most ten classes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import CodecError, ContractError
from ..numerics import RngStream, derive_seed
from ..predictors import PredictionSet
from .aggregate import aggregate


def n_digits(C: int) -> int:
    """Decimal digits needed for labels ``0..C-1`` (at least one)."""
    if C < 1:
        raise ContractError("need at least one class")
    return max(1, len(str(C - 1)))


def decimal_encode(y: int, C: int) -> list[int]:
    if not 0 <= y < C:
        raise ContractError(f"label {y} outside [0, {C})")
    t = n_digits(C)
    return [int(ch) for ch in str(int(y)).zfill(t)]


def decimal_decode(digits, C: int) -> int:
    """Inverse of ``decimal_encode``.

    Digit strings that name a value ``>= C`` are mapped to the valid label with
    the fewest differing digit positions, ties to the smaller label.
    """
    digits = [int(d) for d in digits]
    if any(not 0 <= d < 10 for d in digits):
        raise ContractError(f"digits must lie in [0, 10): {digits}")
    value = 0
    for d in digits:
        value = value * 10 + d
    if value < C:
        return value
    codes = decimal_code_matrix(C)
    dist = (codes != np.asarray(digits)[None, :]).sum(axis=1)
    return int(np.argmin(dist))


def decimal_code_matrix(C: int) -> np.ndarray:
    t = n_digits(C)
    y = np.arange(C)
    return np.stack([(y // 10 ** (t - 1 - p)) % 10 for p in range(t)], axis=1)


def random_permutation(C: int, seed: int) -> np.ndarray:
    perm = RngStream(seed, "class-perm").generator().permutation(C)
    if not np.array_equal(np.sort(perm), np.arange(C)):
        raise CodecError("class permutation is not a bijection")
    return perm


def ecoc_code_matrix(C: int, length: int, seed: int, attempts: int = 100) -> np.ndarray:
    """Random 10-ary codes with distinct rows and no constant column."""
    for a in range(attempts):
        gen = RngStream(seed, "ecoc", a).generator()
        M = gen.integers(0, 10, size=(C, length))
        if len({tuple(r) for r in M}) < C:
            continue
        if any(len(np.unique(M[:, j])) < 2 for j in range(length)):
            continue
        return M
    raise CodecError(f"could not draw {C} distinct code rows of length {length} in {attempts} attempts")


@dataclass
class DigitCodec:
    C: int
    mode: str = "dpt"  # dpt | star | ecoc
    codes: np.ndarray | None = None

    def __post_init__(self):
        if self.codes is None:
            self.codes = decimal_code_matrix(self.C)
        if len({tuple(r) for r in self.codes}) != self.C:
            raise CodecError("code rows are not distinct")

    @property
    def length(self) -> int:
        return self.codes.shape[1]

    def encode(self, y) -> np.ndarray:
        return self.codes[np.asarray(y, dtype=np.int64)]

    def decode_hard(self, digits: np.ndarray) -> np.ndarray:
        """Nearest code row by Hamming distance, ties to the smaller label."""
        digits = np.atleast_2d(digits)
        dist = (self.codes[None, :, :] != digits[:, None, :]).sum(axis=2)
        return np.argmin(dist, axis=1)

    def decode_soft(self, column_probs: list[np.ndarray]) -> np.ndarray:
        """Class scores from per-column probabilities: product over columns, renormalized."""
        n = column_probs[0].shape[0]
        logp = np.zeros((n, self.C))
        for j, P in enumerate(column_probs):
            P = np.clip(P, 1e-12, None)
            logp += np.log(P[:, self.codes[:, j]])
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)


def _column_problem(train_X, column_labels, test_X, base, seed):
    n_sub = int(column_labels.max()) + 1
    return base(train_X, column_labels, test_X, "classification", max(2, n_sub), seed)


def _codec_predict(codec: DigitCodec, train_X, train_y, test_X, base, seed, soft=True, repeats=1) -> PredictionSet:
    """One base run per code column (``repeats`` runs averaged), decoded jointly."""
    train_codes = codec.encode(train_y)
    col_probs, col_hard = [], []
    for j in range(codec.length):
        runs = [
            _column_problem(train_X, train_codes[:, j], test_X, base, derive_seed(seed, f"col{j}", r))
            for r in range(repeats)
        ]
        if all(r.probs is not None for r in runs):
            width = max(r.probs.shape[1] for r in runs)
            P = np.zeros((runs[0].n_query, 10))
            for r in runs:
                P[:, : r.probs.shape[1]] += r.probs
            P /= repeats
            col_probs.append(P)
            col_hard.append(np.argmax(P[:, :width], axis=1))
        else:
            col_probs = None
            col_hard.append(runs[0].labels)
    if soft and col_probs is not None:
        probs = codec.decode_soft(col_probs)
        return PredictionSet.from_probs(probs, seed=seed, meta={"digits": np.stack(col_hard, 1)})
    labels = codec.decode_hard(np.stack(col_hard, axis=1))
    return PredictionSet("classification", labels=labels, seed=seed, meta={"digits": np.stack(col_hard, 1)})


def star_members(C: int) -> int:
    return math.isqrt(C - 1) + 1 if C > 1 else 1  # ceil(sqrt(C))


def many_class_predict(train_X, train_y, test_X, C: int, mode: str, seed: int, base,
                       star_vote: str = "majority", dpt_repeats: int = 1, ecoc_length: int | None = None,
                       soft: bool = True) -> PredictionSet:
    """Classification beyond ten classes by decimal, permuted-decimal or 10-ary codes.

    ``C <= 10`` delegates to ``base`` directly.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if C <= 10:
        out = base(train_X, train_y, test_X, "classification", C, seed)
        out.strategy = mode
        return out
    if mode == "dpt":
        out = _codec_predict(DigitCodec(C, "dpt"), train_X, train_y, test_X, base, seed, soft, dpt_repeats)
        out.strategy = "dpt"
        return out
    if mode == "star":
        members = []
        for r in range(star_members(C)):
            mseed = derive_seed(seed, "member", r)
            perm = random_permutation(C, mseed)
            inv = np.argsort(perm)
            sub = _codec_predict(DigitCodec(C, "dpt"), train_X, perm[train_y], test_X, base, mseed, soft)
            probs = sub.probs[:, perm] if sub.probs is not None else None
            members.append(PredictionSet("classification", labels=inv[sub.labels], probs=probs, seed=mseed,
                                         meta={"permutation": perm.tolist()}))
        if star_vote == "mean-prob" and all(m.probs is not None for m in members):
            probs = np.mean([m.probs for m in members], axis=0)
            out = PredictionSet.from_probs(probs, strategy="star", n_members=len(members), seed=seed, members=members)
        else:
            out = aggregate(members, "classification", "star", seed)
        return out
    if mode == "ecoc":
        L = ecoc_length or 2 * n_digits(C)
        codec = DigitCodec(C, "ecoc", ecoc_code_matrix(C, L, seed))
        out = _codec_predict(codec, train_X, train_y, test_X, base, seed, soft=False)
        out.strategy = "ecoc"
        return out
    raise ContractError(f"unknown many-class mode {mode!r}")

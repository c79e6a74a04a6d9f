"""Test-time divide-and-conquer wrappers around a base predictor."""

from .aggregate import aggregate
from .codecs import (
    DigitCodec,
    decimal_code_matrix,
    decimal_decode,
    decimal_encode,
    ecoc_code_matrix,
    many_class_predict,
    n_digits,
    random_permutation,
    star_members,
)
from .large_scale import LargeScalePlan, kmeans_support, large_scale_predict, tree_partition_predict
from .subspace import MemberError, pca_bagging_predict, subspace_ensemble_predict, subspace_partition

__all__ = [
    "aggregate",
    "DigitCodec", "decimal_code_matrix", "decimal_decode", "decimal_encode",
    "ecoc_code_matrix", "many_class_predict", "n_digits", "random_permutation", "star_members",
    "LargeScalePlan", "kmeans_support", "large_scale_predict", "tree_partition_predict",
    "MemberError", "pca_bagging_predict", "subspace_ensemble_predict", "subspace_partition",
]

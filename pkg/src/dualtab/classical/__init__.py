"""Small classical learners used by the strategies, probes and baselines."""

from .cart import CartTree, cart_fit, cart_predict, cart_route
from .kmeans import kmeans, sse
from .knn import knn_predict
from .linear import LinearModel, linear_fit, logistic_fit
from .pca import PcaModel, pca_fit, pca_transform

__all__ = [
    "CartTree", "cart_fit", "cart_predict", "cart_route",
    "kmeans", "sse", "knn_predict",
    "LinearModel", "linear_fit", "logistic_fit",
    "PcaModel", "pca_fit", "pca_transform",
]

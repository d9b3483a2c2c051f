"""
Average precision and embedding retrieval.
"""

from .metrics import Evaluator, average_precision, class_scores, mean_ap
from .retrieval import Retriever, avg_soia_of_retrievals, retrieve_knn

__all__ = [
    "Evaluator",
    "average_precision",
    "class_scores",
    "mean_ap",
    "Retriever",
    "avg_soia_of_retrievals",
    "retrieve_knn",
]

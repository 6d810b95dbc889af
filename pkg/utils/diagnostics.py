# utils/diagnostics.py
from collections import Counter
from typing import Dict

from utils.logging_setup import logger


class Diagnostics:
    """Counters for numerical degeneracies that are handled, not raised.

    Keys in use:
        zero_norm_similarity   pooled feature or prototype with zero norm
        zero_norm_orthogonality  zero-norm prototype inside the orthogonality sum
        alpha_saturation       alpha clamped to 1 - eps in the abstention loss
        zero_contribution      sample skipped by the sparsity score
        argmax_tie             tie in the aggregated class argmax
    """
    def __init__(self):
        self._counts: Counter = Counter()

    def increment(self, key: str, amount: int = 1) -> None:
        if amount <= 0:
            return
        self._counts[key] += int(amount)
        logger.debug(f"Diagnostics '{key}' += {amount}")

    def get(self, key: str) -> int:
        return self._counts.get(key, 0)

    def reset(self) -> None:
        self._counts.clear()

    def to_dict(self) -> Dict[str, int]:
        return dict(sorted(self._counts.items()))

    def __repr__(self) -> str:
        return f"Diagnostics({self.to_dict()})"

"""Fine-grained vision-language pre-training objectives with WordNet-driven
hard-negative caption rewriting, plus a desk-scale toy model."""

from .errors import FinegrainError

__version__ = "0.1.0"
__all__ = ["FinegrainError", "__version__"]

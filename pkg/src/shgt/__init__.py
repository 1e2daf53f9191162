"""Structure-aware hypergraph transformer for next-visit diagnosis prediction.

Coded visit records become a hypergraph (medical codes as nodes, visits
as hyperedges); a structural encoder and a global self-attention stack
produce code/visit embeddings that are trained with a multilabel
classification loss plus an incidence-reconstruction loss. Everything is
float64 numpy with hand-derived analytic gradients, verified against
central finite differences.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError, ShgtError

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "ShgtError",
    "__version__",
]

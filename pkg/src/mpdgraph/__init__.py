"""Main product detection over gallery graphs.

Subpackages: core (tensors/gradients/Adam), model (graph variants),
contrastive (baseline), dataset (formats + synthetic generator),
training, evaluation, cli.
"""

__version__ = "0.1.0"

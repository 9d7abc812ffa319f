"""Captioning metric engine over precomputed embeddings.

Modules:
  embedkit  - binary embedding format, manifests, dense similarity ops
  scoring   - clamped-cosine image scores and coarse/fine video scores
  paclearn  - positive-augmented contrastive training of low-rank adapters
  evalstats - rank correlations and preference/hallucination accuracies
  scst      - toy-policy reward optimization and grammar metrics
  cli       - operator subcommands
"""

__version__ = "0.1.0"

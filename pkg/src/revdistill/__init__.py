"""Distillation toolkit for code-review corpora.

Scores review comments by how much they lower the perplexity of the
subsequent code fix, builds consensus verdicts across scoring backends,
and emits fine-tuning (SFT) and unpaired-alignment (KTO) datasets plus
an evaluation harness for the verdicts.
"""

__version__ = "0.1.0"

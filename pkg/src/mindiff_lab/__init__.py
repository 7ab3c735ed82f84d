"""MinDiff fairness-regularization laboratory.

Trains a one-hidden-layer classifier with correlation or kernel-MMD MinDiff
penalties, measures FPR-gap style fairness metrics, and runs lambda /
kernel-length sweeps on UCI Adult plus a synthetic pairwise-ranking corpus.
"""

__version__ = "0.1.0"

"""Passage re-ranking with an episodic memory network over cached encoder outputs.

The package is organized around a small reverse-mode autodiff core
(:mod:`sentrank.autodiff`), the memory network itself (:mod:`sentrank.model`),
binary token-representation and cache formats (:mod:`sentrank.tokrep`),
text dataset formats (:mod:`sentrank.data`), pairwise max-margin training
(:mod:`sentrank.training`), ranking metrics (:mod:`sentrank.evaluation`),
representation-similarity analysis (:mod:`sentrank.analysis`) and a batch
CLI (:mod:`sentrank.cli`).
"""

__version__ = "0.1.0"

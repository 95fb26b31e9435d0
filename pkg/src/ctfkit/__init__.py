"""Counterfactual problem pipeline: generation, annotation, evaluation, selection."""

__version__ = "0.1.0"

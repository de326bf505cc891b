"""Adversarial domain generalization for novel predicate-object combinations, at desk scale."""

__version__ = "0.1.0"

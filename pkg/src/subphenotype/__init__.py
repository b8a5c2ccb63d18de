"""Delirium subphenotyping: cohort building, clustering, subgroup models and reports."""

__version__ = "0.1.0"

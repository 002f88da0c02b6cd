"""Guideline-driven LLM synthesis of labeled clinical sentences, dataset
construction, ensemble training, and evaluation reporting."""

__version__ = "0.1.0"

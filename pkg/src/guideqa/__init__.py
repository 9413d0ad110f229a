"""Mentorship-focused QA generation pipelines and evaluation harness."""

__version__ = "0.1.0"

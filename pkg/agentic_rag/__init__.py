"""Agentic retrieval harness: search/find/open/summarize tools driven by a bounded model loop."""

__version__ = "0.1.0"

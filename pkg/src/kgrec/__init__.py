"""Knowledge-graph-enhanced sequential conversational recommender."""

__version__ = "0.1.0"

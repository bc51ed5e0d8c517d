"""scfl: weak semiconvexity profiles along generalised heat semigroups."""

__version__ = "0.1.0"

"""Multi-agent bandit learning for cache placement in small-cell networks."""

__version__ = "0.1.0"

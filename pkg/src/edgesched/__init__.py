"""Real-time task scheduling on heterogeneous edge servers with a masked DQN agent."""

__version__ = "0.1.0"

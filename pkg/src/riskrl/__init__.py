"""Risk-sensitive forward and inverse reinforcement learning on finite MDPs."""

__version__ = "0.1.0"

"""Meta-trust learning-rate control for PPO under reward corruption."""

__version__ = "0.1.0"

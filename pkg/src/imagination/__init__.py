"""Training in imagination: return-gap bounds, dynamics/reward sample
allocation, error scaling fits, and REINFORCE under noisy or biased rewards."""

__version__ = "0.1.0"

"""dctube: difference-of-convex dynamics models and tube MPC."""

__version__ = "0.1.0"

"""Graph neural network delay model for networks with queue scheduling, plus the simulator that labels its data."""
__version__ = "0.1.0"

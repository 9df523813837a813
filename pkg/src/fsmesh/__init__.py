"""Forward-secret, receiver-anonymous messaging for mobile ad-hoc networks."""

__version__ = "0.1.0"

"""Simulated cloud inference cluster with learned load balancing and autoscaling."""

__version__ = "0.1.0"

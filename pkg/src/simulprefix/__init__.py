"""Adaptive simultaneous translation from attention-derived prefix pairs."""

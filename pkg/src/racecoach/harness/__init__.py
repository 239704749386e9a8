"""Closed-loop simulation and the training-protocol runner."""

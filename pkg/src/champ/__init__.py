"""Desk-scale, fully deterministic simulation of a hot-swappable
edge-AI cartridge architecture: wire protocol, shared-bus contention
model, capability cartridges, orchestration kernel, biometric gallery,
experiment harness, and operator control plane."""

__version__ = "0.1.0"

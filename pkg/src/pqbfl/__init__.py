"""Hybrid post-quantum ratcheted encryption and ledger accounting for federated learning."""

__version__ = "0.1.0"

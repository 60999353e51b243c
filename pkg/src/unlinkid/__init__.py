"""Unlinkable identifier portfolios with Merkle-committed legitimacy proofs."""

__version__ = "0.1.0"

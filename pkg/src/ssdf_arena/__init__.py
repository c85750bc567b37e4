"""Simulator of a fusion center defending spectrum-sensing reports against a
budget-constrained data-falsification attacker."""

__version__ = "0.1.0"
